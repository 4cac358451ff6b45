import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfmst.dataprep import (
    NoOnset,
    NormStats,
    Segment,
    SplitSpec,
    TooShort,
    ZeroCorpus,
    detect_onset,
    feature_matrix,
    load_features,
    normalize_corpus,
    save_features,
    segment,
    split,
    stratified_indices,
    vectorize_time,
)


# ---------------------------------------------------------------------------
# onset


def test_onset_first_crossing():
    f = np.array([0.01, 0.02, 0.06, 0.9]) + 0j
    assert detect_onset(f, tau=0.05) == 3


def test_onset_default_tau_is_005():
    f = np.array([0.04, 0.051]) + 0j
    assert detect_onset(f) == 2


def test_onset_all_zero_raises():
    with pytest.raises(NoOnset):
        detect_onset(np.zeros(100, dtype=complex), tau=0.05)


def test_onset_uses_real_part_magnitude():
    f = np.array([0.9j, -0.2 + 0.0j])
    assert detect_onset(f, tau=0.05) == 2  # imaginary part never counts


# ---------------------------------------------------------------------------
# segmentation


def test_segment_positions_match_onset():
    f = np.arange(1, 10_001, dtype=float) + 0j  # f_i = i (1-based values)
    seg = segment(f, onset_index=451, n=2048)
    assert seg.g[0] == 451
    assert seg.g[-1] == 2498
    assert seg.n == 2048


def test_segment_length_32():
    f = np.random.default_rng(0).normal(size=100) + 0j
    assert segment(f, 5, 32).g.shape == (32,)


def test_segment_too_short():
    f = np.zeros(10_000, dtype=complex)
    with pytest.raises(TooShort):
        segment(f, 9_990, 32)


def test_segment_roundtrip_recovers_packet_samples():
    rng = np.random.default_rng(1)
    f = rng.normal(size=500) + 1j * rng.normal(size=500)
    seg = segment(f, 17, 64)
    np.testing.assert_array_equal(seg.g, f[16:80])


# ---------------------------------------------------------------------------
# vectorization


def _seg(values, label=1):
    g = np.asarray(values, dtype=complex)
    return Segment(g=g, n=len(g), onset_index=1, tx_label=label)


def test_vectorize_concat_dim_is_2n():
    seg = _seg(np.ones(32))
    assert vectorize_time(seg, "concat_reim").dim == 64


def test_vectorize_concat_ordering():
    v = vectorize_time(_seg([1 + 2j]), "concat_reim").v
    np.testing.assert_array_equal(v, [1.0, 2.0])
    v2 = vectorize_time(_seg([1 + 2j, 3 - 4j]), "concat_reim").v
    np.testing.assert_array_equal(v2, [1.0, 3.0, 2.0, -4.0])


def test_vectorize_magnitude():
    v = vectorize_time(_seg([3 + 4j]), "magnitude").v
    np.testing.assert_array_equal(v, [5.0])


def test_vectorize_injective_for_fixed_mode():
    a = vectorize_time(_seg([1 + 2j, 0 + 1j]), "concat_reim").v
    b = vectorize_time(_seg([1 + 1j, 2 + 0j]), "concat_reim").v
    assert not np.array_equal(a, b)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_scales_by_train_max():
    x = np.array([[1.0, -2.0], [0.5, 1.5]])
    xn, stats = normalize_corpus(x)
    assert stats.max_abs == 2.0
    assert xn[0, 0] == 0.5
    assert np.abs(xn).max() <= 1.0


def test_normalize_frozen_stats_reused_on_test():
    _, stats = normalize_corpus(np.array([[2.0]]))
    xt, _ = normalize_corpus(np.array([[4.0]]), stats)
    assert xt[0, 0] == 2.0  # test entries may exceed 1


def test_normalize_deterministic():
    x = np.random.default_rng(2).normal(size=(10, 4))
    _, s1 = normalize_corpus(x)
    _, s2 = normalize_corpus(x)
    assert s1 == s2


def test_normalize_zero_corpus_raises():
    with pytest.raises(ZeroCorpus):
        normalize_corpus(np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# splits


def _balanced_labels(n_classes=12, per_class=1000):
    return np.repeat(np.arange(1, n_classes + 1), per_class)


def test_split_90_10_counts():
    y = _balanced_labels()
    x = np.zeros((len(y), 1))
    (xtr, ytr), (xte, yte) = split(x, y, SplitSpec(0.9, seed=1))
    assert len(ytr) == 10_800
    assert len(yte) == 1_200


def test_split_10_90_counts():
    y = _balanced_labels()
    x = np.zeros((len(y), 1))
    (_, ytr), (_, yte) = split(x, y, SplitSpec(0.1, seed=1))
    assert len(ytr) == 1_200
    assert len(yte) == 10_800


def test_split_1_99_counts():
    y = _balanced_labels()
    x = np.zeros((len(y), 1))
    (_, ytr), (_, yte) = split(x, y, SplitSpec(0.01, seed=1))
    assert len(ytr) == 120


def test_split_rejects_undeclared_fraction():
    with pytest.raises(ValueError):
        SplitSpec(0.33, seed=0)


def test_split_disjoint_union_and_stratified():
    y = _balanced_labels(4, 50)
    x = np.arange(len(y), dtype=float)[:, None]
    (xtr, ytr), (xte, yte) = split(x, y, SplitSpec(0.1, seed=3))
    all_vals = np.sort(np.concatenate([xtr[:, 0], xte[:, 0]]))
    np.testing.assert_array_equal(all_vals, np.arange(len(y)))
    for lab in range(1, 5):
        assert (ytr == lab).sum() == 5  # round(0.1 * 50)


def test_split_deterministic_under_seed():
    y = _balanced_labels(3, 40)
    a = stratified_indices(y, 0.5, seed=7)
    b = stratified_indices(y, 0.5, seed=7)
    np.testing.assert_array_equal(a[0], b[0])
    c = stratified_indices(y, 0.5, seed=8)
    assert not np.array_equal(a[0], c[0])


@settings(max_examples=30, deadline=None)
@given(per_class=st.integers(4, 60), seed=st.integers(0, 2**31 - 1),
       frac=st.sampled_from([0.9, 0.5, 0.1]))
def test_split_property_counts_within_one(per_class, seed, frac):
    y = _balanced_labels(5, per_class)
    tr, te = stratified_indices(y, frac, seed)
    assert len(tr) + len(te) == len(y)
    assert len(np.intersect1d(tr, te)) == 0
    for lab in range(1, 6):
        got = (y[tr] == lab).sum()
        assert abs(got - frac * per_class) <= 1


# ---------------------------------------------------------------------------
# feature matrix + persistence


def test_feature_matrix_and_roundtrip(tmp_path):
    segs = [_seg([1 + 2j, 3 + 4j], label=1), _seg([5 + 6j, 7 + 8j], label=2)]
    x, y = feature_matrix(segs, "concat_reim")
    assert x.shape == (2, 4)
    np.testing.assert_array_equal(y, [1, 2])
    xn, stats = normalize_corpus(x)
    save_features(tmp_path / "f", xn, y, stats, meta={"wn": 2})
    x2, y2, stats2 = load_features(tmp_path / "f")
    np.testing.assert_array_equal(x2, xn)
    np.testing.assert_array_equal(y2, y)
    assert stats2 == NormStats(stats.max_abs)
