"""Dense MLP engine with first- and second-order trainers.

Networks are plain weight/bias lists with tanh hidden layers and a linear
output layer.  The second-order trainer is a damped Gauss-Newton
(Levenberg-Marquardt) loop that solves either the primal (P x P) or dual
(B x B) normal equations, whichever is smaller.  First-order trainers are
full-batch steepest descent and Adam.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

MU_INIT = 1e-3
MU_INC = 10.0
MU_DEC = 0.1
MU_MAX = 1e8       # stop-criterion threshold on the damping factor
MU_CEILING = 1e9   # hard clamp so rejected iterations cannot grow mu forever
MU_FLOOR = 1e-20


@dataclass
class Mlp:
    """Fully connected net: tanh hidden layers, identity output layer.

    weights[l] has shape (fan_in, fan_out); biases[l] has shape (fan_out,).
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return count_parameters(self.layer_sizes)

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_mlp(layer_sizes, seed=None, rng=None) -> Mlp:
    """Create an MLP with weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    if rng is None:
        rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-lim, lim, size=fan_out))
    return Mlp(sizes, weights, biases)


def count_parameters(layer_sizes) -> int:
    """True parameter count: every weight matrix and bias vector."""
    sizes = tuple(layer_sizes)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def count_hidden_parameters(layer_sizes) -> int:
    """Counting rule used in the complexity accounting: hidden-layer weights
    plus hidden biases; the output layer contributes nothing."""
    sizes = tuple(layer_sizes)
    hidden = sizes[1:-1]
    fan_ins = sizes[:-2]
    return sum(a * h for a, h in zip(fan_ins, hidden)) + sum(hidden)


# Per-stage totals quoted for the canonical 60/30/30 system.  The first two
# rows differ from count_hidden_parameters by -20 and -10 (arithmetic slips
# in the source accounting, kept verbatim); the complexity report flags the
# gap instead of correcting it.
QUOTED_STAGE_PARAMS = {
    (1024, 10, 10, 1): 10_340,
    (60, 15, 15, 1): 1_145,
    (30, 15, 15, 1): 705,
}


def count_parameters_reference(layer_sizes) -> int:
    """Parameter total under the reference accounting, verbatim.

    Returns the quoted total for the three canonical stage shapes (including
    their arithmetic slips) and falls back to the stated counting rule
    (hidden weights + hidden biases) for any other shape.
    """
    shape = tuple(int(s) for s in layer_sizes)
    return QUOTED_STAGE_PARAMS.get(shape, count_hidden_parameters(shape))


def complexity_ratios(total_params, stages, exponent=2.373) -> dict:
    """Speed/memory ratios of a staged system vs one monolithic net.

    stages: sequence of (mlp_count, params_per_mlp).  Solve cost is modeled
    as params**exponent, Hessian storage as params**2.  Serial speedup uses
    every MLP's cost; parallel speedup charges one MLP per stage (stages are
    sequential, MLPs within a stage run concurrently).  Serial memory holds
    one Hessian at a time; parallel memory holds all of them.
    """
    n = float(total_params)
    if n <= 0 or any(c < 1 or p <= 0 for c, p in stages):
        raise ValueError("parameter counts must be positive")
    serial_cost = sum(c * p**exponent for c, p in stages)
    critical_cost = sum(p**exponent for _, p in stages)
    single_mem = sum(p**2 for _, p in stages)
    all_mem = sum(c * p**2 for c, p in stages)
    return {
        "serial_speedup": n**exponent / serial_cost,
        "parallel_speedup": n**exponent / critical_cost,
        "serial_mem": n**2 / single_mem,
        "parallel_mem": n**2 / all_mem,
    }


# ---------------------------------------------------------------------------
# forward / backward


def _as_batch(x, n_in):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ValueError(f"expected (*, {n_in}) input, got {x.shape}")
    return x


def forward(net: Mlp, x) -> np.ndarray:
    """Batch forward pass; returns (B, n_out) (or (n_out,) for 1-D input)."""
    single = np.asarray(x).ndim == 1
    a = _as_batch(x, net.layer_sizes[0])
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w + b
        if l != last:
            a = np.tanh(a)
    return a[0] if single else a


def _forward_activations(net: Mlp, x):
    """Forward pass keeping every layer's activations (a[0] is the input)."""
    acts = [_as_batch(x, net.layer_sizes[0])]
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        acts.append(z if l == last else np.tanh(z))
    return acts


def mse(net: Mlp, x, t) -> float:
    y = forward(net, x)
    return float(np.mean((np.asarray(t, dtype=np.float64) - y) ** 2))


def pack_parameters(net: Mlp) -> np.ndarray:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


def unpack_parameters(net: Mlp, theta: np.ndarray) -> Mlp:
    """New Mlp with the same shape and parameters taken from the flat vector."""
    weights, biases = [], []
    k = 0
    for w, b in zip(net.weights, net.biases):
        weights.append(theta[k : k + w.size].reshape(w.shape).copy())
        k += w.size
        biases.append(theta[k : k + b.size].copy())
        k += b.size
    if k != theta.size:
        raise ValueError(f"parameter vector length {theta.size}, expected {k}")
    return Mlp(net.layer_sizes, weights, biases)


def gradient(net: Mlp, x, t) -> np.ndarray:
    """Flat gradient of the batch MSE with respect to all parameters."""
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    acts = _forward_activations(net, x)
    y = acts[-1]
    n = y.size
    delta = 2.0 * (y - t) / n  # d mse / d output (linear output layer)
    grads_w = [None] * net.n_layers
    grads_b = [None] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ net.weights[l].T) * (1.0 - acts[l] ** 2)
    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.reshape(-1))
        parts.append(gb)
    return np.concatenate(parts)


def output_jacobian(net: Mlp, x) -> np.ndarray:
    """Jacobian of network outputs with respect to all parameters.

    Rows are ordered sample-major: row b*n_out + k is d y_k(x_b) / d theta.
    For a bias-free single linear layer the columns are exactly the inputs.
    """
    acts = _forward_activations(net, x)
    b_sz = acts[0].shape[0]
    n_out = net.layer_sizes[-1]
    jac = np.empty((b_sz * n_out, net.n_params))
    for k in range(n_out):
        delta = np.zeros((b_sz, n_out))
        delta[:, k] = 1.0
        deltas = [None] * net.n_layers
        for l in range(net.n_layers - 1, -1, -1):
            deltas[l] = delta
            if l > 0:
                delta = (delta @ net.weights[l].T) * (1.0 - acts[l] ** 2)
        col = 0
        for l in range(net.n_layers):
            w_size = net.weights[l].size
            block = np.einsum("bi,bj->bij", acts[l], deltas[l])
            if n_out == 1:
                jac[:, col : col + w_size] = block.reshape(b_sz, w_size)
            else:
                jac[k::n_out, col : col + w_size] = block.reshape(b_sz, w_size)
            col += w_size
            jac[k::n_out, col : col + deltas[l].shape[1]] = deltas[l]
            col += deltas[l].shape[1]
    return jac


# ---------------------------------------------------------------------------
# optimizers


class SolveFailure(Exception):
    """Normal-equation factorization failed even at the damping ceiling."""


@dataclass
class LmState:
    mu: float = MU_INIT
    mu_inc: float = MU_INC
    mu_dec: float = MU_DEC
    mu_max: float = MU_MAX
    consecutive_mu_max: int = 0
    consecutive_val_fail: int = 0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")


def _lm_delta(jac, r, gram, mu, dual):
    n = gram.shape[0]
    a = gram + mu * np.eye(n)
    factor = cho_factor(a, lower=True, check_finite=False)
    if dual:
        return jac.T @ cho_solve(factor, r, check_finite=False)
    return cho_solve(factor, jac.T @ r, check_finite=False)


def lm_step(net: Mlp, x, t, state: LmState):
    """One damped Gauss-Newton iteration on the batch (x, t).

    Solves (J'J + mu I) delta = J'r with r = target - output and J the
    output Jacobian, taking the dual (B x B) form when the batch is smaller
    than the parameter vector.  The step is accepted only if the batch MSE
    strictly decreases; otherwise mu is raised and the solve retried with
    the same Jacobian.  Returns (net', state', mse', accepted).
    """
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    x = _as_batch(x, net.layer_sizes[0])
    y = forward(net, x)
    r = (t - y).reshape(-1)
    mse0 = float(np.mean(r**2))
    jac = output_jacobian(net, x)
    n_rows, n_params = jac.shape
    dual = n_rows < n_params
    gram = jac @ jac.T if dual else jac.T @ jac
    theta = pack_parameters(net)
    ceiling = state.mu_max * state.mu_inc
    while True:
        try:
            delta = _lm_delta(jac, r, gram, state.mu, dual)
        except np.linalg.LinAlgError:
            delta = None
        if delta is not None:
            cand = unpack_parameters(net, theta + delta)
            mse1 = mse(cand, x, t)
            if np.isfinite(mse1) and mse1 < mse0:
                state.mu = max(state.mu * state.mu_dec, MU_FLOOR)
                state.consecutive_mu_max = 0
                return cand, state, mse1, True
        if state.mu >= ceiling:
            state.consecutive_mu_max += 1
            return net, state, mse0, False
        state.mu = min(state.mu * state.mu_inc, ceiling)


@dataclass
class AdamState:
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def sd_step(net: Mlp, x, t, lr: float) -> Mlp:
    """Full-batch steepest descent: theta <- theta - lr * grad MSE."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    if lr == 0.0:
        return net.copy()
    theta = pack_parameters(net) - lr * gradient(net, x, t)
    return unpack_parameters(net, theta)


def adam_step(net: Mlp, x, t, state: AdamState, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8) -> Mlp:
    """Adam with standard bias-corrected first/second moments."""
    g = gradient(net, x, t)
    if state.m is None:
        state.m = np.zeros_like(g)
        state.v = np.zeros_like(g)
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * g
    state.v = beta2 * state.v + (1 - beta2) * g**2
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    if lr == 0.0:
        return net.copy()
    theta = pack_parameters(net) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return unpack_parameters(net, theta)


class LmOptimizer:
    """Second-order trainer state wrapper."""

    kind = "lm"

    def __init__(self, state: LmState | None = None):
        self.state = state or LmState()

    def step(self, net, x, t):
        net, self.state, new_mse, _ = lm_step(net, x, t, self.state)
        return net, new_mse

    @property
    def mu(self):
        return self.state.mu

    @property
    def at_ceiling_count(self):
        return self.state.consecutive_mu_max


class SdOptimizer:
    kind = "sd"

    def __init__(self, lr=0.01):
        self.lr = lr

    def step(self, net, x, t):
        net = sd_step(net, x, t, self.lr)
        return net, mse(net, x, t)

    mu = None
    at_ceiling_count = 0


class AdamOptimizer:
    kind = "adam"

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, net, x, t):
        net = adam_step(net, x, t, self.state, self.lr,
                        self.beta1, self.beta2, self.eps)
        return net, mse(net, x, t)

    mu = None
    at_ceiling_count = 0


@dataclass
class StopCriteria:
    max_iters: int
    mse_goal: float
    val_patience: int = 10
    mu_patience: int = 10

    def __post_init__(self):
        if self.max_iters < 1 or self.mse_goal <= 0:
            raise ValueError("max_iters and mse_goal must be positive")
        if self.val_patience < 1 or self.mu_patience < 1:
            raise ValueError("patience values must be positive")


@dataclass
class TrainRun:
    """Per-iteration trace of one training run."""

    optimizer: str
    stop: StopCriteria
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    mu: list[float] = field(default_factory=list)
    stop_reason: str = ""
    best_iteration: int = 0
    best_val_mse: float = float("inf")

    @property
    def iterations(self) -> int:
        return len(self.train_mse)


def train(net: Mlp, train_xy, val_xy, optimizer, stop: StopCriteria):
    """Iterate the optimizer until a stopping criterion fires.

    Criteria: train MSE at or below mse_goal, validation MSE not improving
    for val_patience consecutive iterations, damping stuck above its ceiling
    for mu_patience consecutive iterations (second-order only), or max_iters.
    Returns the weight snapshot with the best validation MSE seen, including
    the untrained starting point.
    """
    x_tr, t_tr = train_xy
    x_va, t_va = val_xy
    run = TrainRun(optimizer=optimizer.kind, stop=stop)
    best_net = net.copy()
    best_val = mse(net, x_va, t_va)
    run.best_val_mse = best_val
    val_fail = 0
    for it in range(1, stop.max_iters + 1):
        net, train_mse_now = optimizer.step(net, x_tr, t_tr)
        val_now = mse(net, x_va, t_va)
        run.train_mse.append(train_mse_now)
        run.val_mse.append(val_now)
        run.mu.append(optimizer.mu if optimizer.mu is not None else 0.0)
        if val_now < best_val:
            best_val = val_now
            best_net = net.copy()
            run.best_iteration = it
            run.best_val_mse = best_val
            val_fail = 0
        else:
            val_fail += 1
        if train_mse_now <= stop.mse_goal:
            run.stop_reason = "mse_goal"
            break
        if val_fail >= stop.val_patience:
            run.stop_reason = "val_patience"
            break
        if optimizer.at_ceiling_count >= stop.mu_patience:
            run.stop_reason = "mu_ceiling"
            break
    else:
        run.stop_reason = "max_iters"
    return best_net, run
