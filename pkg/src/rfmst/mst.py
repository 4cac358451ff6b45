"""Multi-stage training orchestrator.

A model is an ordered list of MLP groups.  Stage-1 nets are narrow
detectors trained on balanced per-class batches; later stages consume the
previous stage's outputs on the full training set.  The final stage
regresses the class index, and classification fuses the final-stage outputs
by majority vote over rounded responses.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ann import (
    LmOptimizer,
    Mlp,
    SdOptimizer,
    StopCriteria,
    TrainRun,
    forward,
    init_mlp,
    pack_parameters,
    train,
    unpack_parameters,
)

DETECTOR_BLOCKS = "detector_blocks"   # stage 1: contiguous blocks of MLPs per class
DETECTOR_CYCLE = "detector_cycle"     # later stages: targets cycle over classes
CLASS_INDEX = "class_index"           # final stages: regress the label value

BATCH_BALANCED = "per_class_balanced"
BATCH_FULL = "full"


class MissingClass(ValueError):
    pass


class UntrainedModel(ValueError):
    pass


@dataclass(frozen=True)
class StageConfig:
    role: str
    n_mlps: int
    hidden_layers: int = 2
    neurons_per_layer: int = 10
    max_iters: int = 100
    mse_goal: float = 1e-3
    batch: str = BATCH_FULL

    def __post_init__(self):
        if self.role not in (DETECTOR_BLOCKS, DETECTOR_CYCLE, CLASS_INDEX):
            raise ValueError(f"unknown stage role {self.role!r}")
        if self.n_mlps < 1:
            raise ValueError("n_mlps must be >= 1")
        if self.batch not in (BATCH_BALANCED, BATCH_FULL):
            raise ValueError(f"unknown batch scheme {self.batch!r}")

    def layer_sizes(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim, *([self.neurons_per_layer] * self.hidden_layers), 1)


def default_config_2nd(n_t: int = 12) -> list[StageConfig]:
    """Three stages: 60/30/30 at twelve transmitters, scaled with n_t.

    Stage settings: 10 neurons and goal 1e-3 at 100 iterations, then
    15-neuron stages at 150/1e-5 and 250/1e-7.
    """
    if n_t < 2:
        raise ValueError("need at least two transmitters")
    later = math.ceil(2.5 * n_t)
    return [
        StageConfig(DETECTOR_BLOCKS, 5 * n_t, 2, 10, 100, 1e-3, BATCH_BALANCED),
        StageConfig(DETECTOR_CYCLE, later, 2, 15, 150, 1e-5, BATCH_FULL),
        StageConfig(CLASS_INDEX, later, 2, 15, 250, 1e-7, BATCH_FULL),
    ]


def default_config_1st(n_t: int = 12) -> list[StageConfig]:
    """Six stages for first-order training: goal 1e-1 at the first stage,
    decreasing geometrically to 1e-3 at the last, 15,000 iteration cap."""
    if n_t < 2:
        raise ValueError("need at least two transmitters")
    goals = np.geomspace(1e-1, 1e-3, 6)
    stages = [StageConfig(DETECTOR_BLOCKS, 2 * n_t, 2, 10, 15_000,
                          float(goals[0]), BATCH_BALANCED)]
    for s in range(1, 5):
        stages.append(StageConfig(DETECTOR_CYCLE, 2 * n_t, 2, 15, 15_000,
                                  float(goals[s]), BATCH_FULL))
    stages.append(StageConfig(CLASS_INDEX, math.ceil(2.5 * n_t), 2, 15,
                              15_000, float(goals[5]), BATCH_FULL))
    return stages


def scaled_config(configs, factor: int) -> list[StageConfig]:
    """Same stages with `factor` times the MLP count (the tripled variant)."""
    return [StageConfig(c.role, factor * c.n_mlps, c.hidden_layers,
                        c.neurons_per_layer, c.max_iters, c.mse_goal, c.batch)
            for c in configs]


# ---------------------------------------------------------------------------
# batch planning


@dataclass
class MlpPlan:
    target_class: int | None      # None for class-index regression
    indices: np.ndarray           # rows of the training set
    targets: np.ndarray           # regression target per row


@dataclass
class BatchPlan:
    stage_plans: list[list[MlpPlan]]


def stage_targets(cfg: StageConfig, all_labels: np.ndarray,
                  known_labels: np.ndarray) -> list[int | None]:
    """Per-MLP target class for one stage (None = class-index)."""
    if cfg.role == CLASS_INDEX:
        return [None] * cfg.n_mlps
    pool = known_labels if cfg.role == DETECTOR_BLOCKS else all_labels
    k = len(pool)
    if cfg.role == DETECTOR_BLOCKS:
        return [int(pool[(i * k) // cfg.n_mlps]) for i in range(cfg.n_mlps)]
    return [int(pool[i % k]) for i in range(cfg.n_mlps)]


def plan_batches(labels: np.ndarray, configs, seed: int,
                 known_labels=None) -> BatchPlan:
    """Assign batches and targets to every MLP.

    Balanced stages take all positives of the target class plus an equal
    count of seeded random negatives, drawn from the known-class pool only;
    full stages use the entire training set.  Batches may overlap.
    """
    labels = np.asarray(labels)
    all_classes = np.unique(labels)
    known = np.asarray(sorted(known_labels)) if known_labels is not None \
        else all_classes
    missing = set(known) - set(all_classes)
    if missing:
        raise MissingClass(f"no training data for classes {sorted(missing)}")
    known_pool = np.nonzero(np.isin(labels, known))[0]
    stage_plans = []
    for s, cfg in enumerate(configs):
        targets = stage_targets(cfg, all_classes, known)
        plans = []
        for i, t in enumerate(targets):
            rng = np.random.default_rng(
                np.random.SeedSequence([0xB47C4, seed, s, i]))
            if cfg.batch == BATCH_BALANCED:
                pos = np.nonzero(labels == t)[0]
                if pos.size == 0:
                    raise MissingClass(f"no positives for class {t}")
                neg_pool = known_pool[labels[known_pool] != t]
                if neg_pool.size == 0:
                    raise MissingClass("no negative examples available")
                neg = rng.choice(neg_pool, size=pos.size,
                                 replace=neg_pool.size < pos.size)
                idx = np.concatenate([pos, neg])
                tgt = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
            else:
                idx = np.arange(len(labels))
                if t is None:
                    tgt = labels.astype(np.float64)
                else:
                    tgt = (labels == t).astype(np.float64)
            plans.append(MlpPlan(target_class=t, indices=idx, targets=tgt))
        stage_plans.append(plans)
    return BatchPlan(stage_plans=stage_plans)


def _mlp_targets(plan: MlpPlan, labels: np.ndarray) -> np.ndarray:
    """Targets of this MLP's rule evaluated on an arbitrary labeled set."""
    if plan.target_class is None:
        return labels.astype(np.float64)
    return (labels == plan.target_class).astype(np.float64)


# ---------------------------------------------------------------------------
# model


@dataclass
class MstModel:
    configs: list[StageConfig]
    stages: list[list[Mlp]]
    n_labels: int
    order: int
    seed: int
    traces: list[list[TrainRun]] = field(default_factory=list)
    known_labels: tuple[int, ...] = ()

    def config_hash(self) -> str:
        blob = json.dumps(
            [[c.role, c.n_mlps, c.hidden_layers, c.neurons_per_layer,
              c.max_iters, c.mse_goal, c.batch] for c in self.configs]
            + [self.n_labels, self.order, self.seed, list(self.known_labels)])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def stage_hashes(self) -> list[str]:
        out = []
        for group in self.stages:
            h = hashlib.sha256()
            for net in group:
                h.update(pack_parameters(net).tobytes())
            out.append(h.hexdigest()[:16])
        return out


def _stage_outputs(mlps, x) -> np.ndarray:
    return np.concatenate([forward(m, x) for m in mlps], axis=1)


def _make_optimizer(order: int, sd_lr: float):
    return LmOptimizer() if order == 2 else SdOptimizer(lr=sd_lr)


def train_mst(train_x, train_y, val_x, val_y, configs, order: int = 2,
              seed: int = 0, known_labels=None, sd_lr: float = 0.01,
              iter_cap: int | None = None) -> MstModel:
    """Train every stage to completion before the next one starts.

    Stage s+1 consumes the frozen stage-s outputs, evaluated once on the
    full training and validation sets.  known_labels restricts the classes
    whose data feeds stage 1 (incremental learning); later stages always
    see every class.  iter_cap optionally lowers each stage's iteration
    budget for reduced-scale runs.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 (gradient) or 2 (damped Gauss-Newton)")
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    val_y = np.asarray(val_y)
    classes = np.unique(train_y)
    n_labels = int(classes.max())
    plan = plan_batches(train_y, configs, seed, known_labels)
    val_patience = 10 if order == 2 else 20
    cur_tr, cur_va = train_x, val_x
    stages, traces = [], []
    for s, cfg in enumerate(configs):
        max_iters = cfg.max_iters if iter_cap is None \
            else min(cfg.max_iters, iter_cap)
        stop = StopCriteria(max_iters=max_iters, mse_goal=cfg.mse_goal,
                            val_patience=val_patience)
        mlps, runs = [], []
        for i, mlp_plan in enumerate(plan.stage_plans[s]):
            net = init_mlp(
                cfg.layer_sizes(cur_tr.shape[1]),
                seed=np.random.SeedSequence([0x3117, seed, s, i]))
            xb = cur_tr[mlp_plan.indices]
            tb = mlp_plan.targets[:, None]
            tv = _mlp_targets(mlp_plan, val_y)[:, None]
            net, run = train(net, (xb, tb), (cur_va, tv),
                             _make_optimizer(order, sd_lr), stop)
            mlps.append(net)
            runs.append(run)
        stages.append(mlps)
        traces.append(runs)
        if s + 1 < len(configs):
            cur_tr = _stage_outputs(mlps, cur_tr)
            cur_va = _stage_outputs(mlps, cur_va)
    known = () if known_labels is None else tuple(int(v) for v in known_labels)
    return MstModel(configs=list(configs), stages=stages, n_labels=n_labels,
                    order=order, seed=seed, traces=traces, known_labels=known)


def train_incremental(train_x, train_y, val_x, val_y, configs, k: int,
                      order: int = 2, seed: int = 0, **kw) -> MstModel:
    """Stage 1 learns from the first k classes only; later stages see all."""
    classes = np.unique(np.asarray(train_y))
    n = len(classes)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}")
    known = classes[:k]
    return train_mst(train_x, train_y, val_x, val_y, configs, order=order,
                     seed=seed, known_labels=known, **kw)


def fuse_labels(final_outputs: np.ndarray, n_labels: int) -> np.ndarray:
    """Majority vote over rounded, clamped final-stage outputs.

    Ties resolve to the lowest label (argmax of the vote histogram).
    """
    votes = np.clip(np.rint(final_outputs), 1, n_labels).astype(int)
    out = np.empty(votes.shape[0], dtype=int)
    for i, row in enumerate(votes):
        out[i] = np.argmax(np.bincount(row, minlength=n_labels + 1)[1:]) + 1
    return out


def classify_batch(model: MstModel, x) -> np.ndarray:
    if not model.stages or any(len(g) == 0 for g in model.stages):
        raise UntrainedModel("model has untrained stages")
    cur = np.asarray(x, dtype=np.float64)
    if cur.ndim == 1:
        cur = cur[None, :]
    for mlps in model.stages:
        cur = _stage_outputs(mlps, cur)
    return fuse_labels(cur, model.n_labels)


def classify(model: MstModel, v) -> int:
    return int(classify_batch(model, np.asarray(v)[None, :])[0])


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class ConfusionMatrix:
    counts: np.ndarray   # counts[true-1, pred-1]

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def confusion_from_predictions(y_true, y_pred, n_labels: int) -> ConfusionMatrix:
    counts = np.zeros((n_labels, n_labels), dtype=int)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        counts[t - 1, p - 1] += 1
    return ConfusionMatrix(counts=counts)


def evaluate(model: MstModel, test_x, test_y) -> ConfusionMatrix:
    preds = classify_batch(model, test_x)
    return confusion_from_predictions(test_y, preds, model.n_labels)


# ---------------------------------------------------------------------------
# persistence: manifest + one flat float64 blob per MLP


def save_model(model: MstModel, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n_labels": model.n_labels,
        "order": model.order,
        "seed": model.seed,
        "known_labels": list(model.known_labels),
        "config_hash": model.config_hash(),
        "configs": [
            {"role": c.role, "n_mlps": c.n_mlps,
             "hidden_layers": c.hidden_layers,
             "neurons_per_layer": c.neurons_per_layer,
             "max_iters": c.max_iters, "mse_goal": c.mse_goal,
             "batch": c.batch}
            for c in model.configs
        ],
        "stages": [],
    }
    for s, group in enumerate(model.stages):
        entries = []
        for i, net in enumerate(group):
            blob = f"stage{s + 1}_mlp{i + 1}.f64"
            pack_parameters(net).astype("<f8").tofile(out / blob)
            entries.append({"file": blob, "layer_sizes": list(net.layer_sizes),
                            "activation": ["tanh", "linear"]})
        manifest["stages"].append(entries)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out


def load_model(in_dir) -> MstModel:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    configs = [StageConfig(**c) for c in manifest["configs"]]
    stages = []
    for group in manifest["stages"]:
        mlps = []
        for entry in group:
            sizes = tuple(entry["layer_sizes"])
            theta = np.fromfile(src / entry["file"], dtype="<f8")
            mlps.append(unpack_parameters(init_mlp(sizes, seed=0), theta))
        stages.append(mlps)
    return MstModel(configs=configs, stages=stages,
                    n_labels=manifest["n_labels"], order=manifest["order"],
                    seed=manifest["seed"],
                    known_labels=tuple(manifest["known_labels"]))
