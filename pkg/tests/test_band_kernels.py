import numpy as np
import pytest

from longformer_engine.band_kernels import (
    BandScores,
    band_attention,
    band_pv,
    band_qk,
    band_qk_chunk,
    band_qk_dense,
    band_qk_loop,
    band_softmax,
    band_to_dense,
    chunk_layout,
    dense_to_band,
)
from longformer_engine.band_pattern import PatternConfig, pattern_matrix
from longformer_engine.errors import DimensionError, RenderGuardError, UnsupportedConfigurationError, UsageError
from longformer_engine.tensor import Tensor, backward, masked_softmax

IMPLS = ["loop", "chunk", "dense"]


def qkv(rng, n, dk=4, heads=None):
    shape = (n, dk) if heads is None else (heads, n, dk)
    return [Tensor(rng.standard_normal(shape), requires_grad=True, dtype="float64") for _ in range(3)]


def band_grads(impl, cfg, Q, K, weights):
    Q.grad = K.grad = None
    scores = band_qk(Q, K, cfg, impl)
    backward((scores.data * Tensor(weights * scores.valid)).sum())
    return scores.data.data * scores.valid, Q.grad.copy(), K.grad.copy()


def chunk_grid(seed=7, cases=50):
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        n = int(rng.integers(1, 40))
        h = int(rng.integers(0, 12))
        mode = ["bidirectional", "causal"][int(rng.integers(0, 2))]
        yield n, h, mode


@pytest.mark.parametrize("n, h, mode", list(chunk_grid()))
def test_chunk_matches_loop_values_and_gradients(n, h, mode):
    rng = np.random.default_rng(n * 100 + h)
    cfg = PatternConfig(n=n, half_window=h, mode=mode)
    Q, K, _ = qkv(rng, n)
    weights = rng.standard_normal((n, cfg.slots))
    loop = band_grads("loop", cfg, Q, K, weights)
    chunk = band_grads("chunk", cfg, Q, K, weights)
    for a, b in zip(loop, chunk):
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


@pytest.mark.parametrize("mode", ["bidirectional", "causal"])
@pytest.mark.parametrize("dilation", [1, 2, 3])
def test_dense_oracle_matches_loop_with_dilation_and_heads(rng, mode, dilation):
    cfg = PatternConfig(n=23, half_window=3, dilation=dilation, mode=mode)
    Q, K, _ = qkv(rng, 23, heads=2)
    weights = rng.standard_normal((2, 23, cfg.slots))
    for a, b in zip(band_grads("loop", cfg, Q, K, weights), band_grads("dense", cfg, Q, K, weights)):
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_band_scores_are_scaled_dot_products(rng):
    cfg = PatternConfig(n=6, half_window=1)
    Q, K, _ = qkv(rng, 6)
    scores = band_qk_loop(Q, K, cfg)
    expected = Q.data[2] @ K.data[3] / 2.0
    assert scores.data.data[2, 2] == pytest.approx(expected)
    assert not scores.valid[0, 0] and scores.data.data[0, 0] == 0.0


def test_chunk_rejects_dilation(rng):
    Q, K, _ = qkv(rng, 8)
    with pytest.raises(UnsupportedConfigurationError):
        band_qk_chunk(Q, K, PatternConfig(n=8, half_window=2, dilation=2))


def test_unknown_impl_and_shape_mismatch(rng):
    Q, K, _ = qkv(rng, 8)
    with pytest.raises(UsageError):
        band_qk(Q, K, PatternConfig(n=8, half_window=2), "tvm")
    with pytest.raises(DimensionError):
        band_qk_loop(Q, K, PatternConfig(n=9, half_window=2))


def test_memory_accounts():
    assert chunk_layout(2048, 256) == (2048, 7)
    assert chunk_layout(10, 4) == (12, 2)
    rng = np.random.default_rng(0)
    Q, K, _ = qkv(rng, 8)
    cfg = PatternConfig(n=8, half_window=2)
    assert band_qk_loop(Q, K, cfg).account.score_elements == 34
    assert band_qk_dense(Q, K, cfg).account.score_elements == 64
    assert band_qk_chunk(Q, K, cfg).account.score_elements == 3 * 16


def test_band_softmax_normalizes_valid_slots_only(rng):
    cfg = PatternConfig(n=10, half_window=3, mode="causal")
    Q, K, _ = qkv(rng, 10)
    probs, global_probs = band_softmax(band_qk(Q, K, cfg))
    assert global_probs is None
    np.testing.assert_allclose(probs.data.data.sum(axis=-1), 1.0)
    assert (probs.data.data[~probs.valid] == 0.0).all()


def test_band_softmax_with_globals_and_dedupe(rng):
    cfg = PatternConfig(n=6, half_window=1)
    Q, K, _ = qkv(rng, 6)
    local = band_qk(Q, K, cfg)
    keys = local.keys()
    dedupe = (keys == 0) & local.valid
    global_scores = Tensor(rng.standard_normal((6, 1)), dtype="float64")
    probs, global_probs = band_softmax(local, global_scores, dedupe)
    totals = probs.data.data.sum(axis=-1) + global_probs.data[:, 0]
    np.testing.assert_allclose(totals, 1.0)
    assert probs.data.data[1, 0] == 0.0
    assert global_probs.data[1, 0] > 0.0


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("mode", ["bidirectional", "causal"])
def test_band_attention_equals_masked_dense_attention(rng, impl, mode):
    n, h = 19, 3
    cfg = PatternConfig(n=n, half_window=h, mode=mode)
    Q, K, V = qkv(rng, n, heads=2)
    out, account = band_attention(Q, K, V, cfg, impl)
    mask = pattern_matrix(cfg).astype(bool)
    dense = masked_softmax(Tensor(Q.data @ np.swapaxes(K.data, -1, -2) / 2.0, dtype="float64"), mask).data @ V.data
    np.testing.assert_allclose(out.data, dense, atol=1e-12)
    assert account.impl == impl


@pytest.mark.parametrize("impl", IMPLS)
def test_band_pv_gradients_agree_across_impls(rng, impl):
    cfg = PatternConfig(n=17, half_window=4)
    Q, K, V = qkv(rng, 17)
    weights = Tensor(rng.standard_normal((17, 4)), dtype="float64")

    def grads(kind):
        for t in (Q, K, V):
            t.grad = None
        probs, _ = band_softmax(band_qk(Q, K, cfg, kind))
        backward((band_pv(probs, V, impl=kind) * weights).sum())
        return [t.grad.copy() for t in (Q, K, V)]

    for a, b in zip(grads("loop"), grads(impl)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_band_to_dense_and_back(rng):
    cfg = PatternConfig(n=12, half_window=2, dilation=2)
    Q, K, _ = qkv(rng, 12)
    band = band_qk(Q, K, cfg)
    dense = band_to_dense(band)
    pattern = pattern_matrix(cfg).astype(bool)
    assert (dense.data[~pattern] == 0.0).all()
    round_trip = dense_to_band(dense, cfg)
    np.testing.assert_array_equal(round_trip.data.data, band.data.data)


def test_band_to_dense_guard():
    cfg = PatternConfig(n=4097, half_window=1)
    band = BandScores(Tensor(np.zeros((4097, 3))), cfg.key_grid()[1], cfg)
    with pytest.raises(RenderGuardError):
        band_to_dense(band)
