import numpy as np
import pytest

from longformer_engine.attention import (
    EncoderBlock,
    causal_mask,
    dense_attention,
    encoder_block,
    influence_width,
    init_attention_params,
    init_feed_forward,
    layernorm_params,
    longformer_self_attention,
    stack_forward,
)
from longformer_engine.band_pattern import HeadWindow, PatternConfig, receptive_field
from longformer_engine.errors import DimensionError
from longformer_engine.tensor import Tensor, grad_check, no_grad


def make_params(rng, d_model=8, heads=2, std=0.5, relative_span=None):
    return init_attention_params(rng, d_model, heads, np.float64, std=std, relative_span=relative_span)


def make_block(rng, d_model=8, heads=2):
    ln1 = layernorm_params(d_model, np.float64)
    ln2 = layernorm_params(d_model, np.float64)
    return EncoderBlock(
        make_params(rng, d_model, heads), *ln1, *ln2, init_feed_forward(rng, d_model, 2, np.float64, std=0.3)
    )


def x64(rng, n, d_model=8):
    return Tensor(rng.standard_normal((n, d_model)), dtype="float64")


def oracle_cases(count):
    rng = np.random.default_rng(2024)
    for seed in range(count):
        n = int(rng.integers(2, 65))
        globals_ = [(), (0,), (0, n - 1)][seed % 3]
        yield seed, n, globals_


@pytest.mark.parametrize("seed, n, globals_", list(oracle_cases(100)))
def test_full_window_matches_dense_attention(seed, n, globals_):
    rng = np.random.default_rng(seed)
    p = make_params(rng)
    X = x64(rng, n)
    cfg = PatternConfig(n=n, half_window=n, global_positions=globals_)
    with no_grad():
        ours = longformer_self_attention(X, p, cfg).data
        oracle = dense_attention(X, p).data
    assert np.abs(ours - oracle).max() <= 1e-10


def test_causal_full_window_matches_masked_dense(rng):
    n = 20
    p = make_params(rng)
    X = x64(rng, n)
    cfg = PatternConfig(n=n, half_window=n, mode="causal", global_positions=(0, 7))
    with no_grad():
        ours = longformer_self_attention(X, p, cfg).data
        oracle = dense_attention(X, p, causal_mask(n)).data
    np.testing.assert_allclose(ours, oracle, atol=1e-10)


@pytest.mark.parametrize("impl", ["chunk", "dense"])
def test_kernels_agree_inside_the_layer(rng, impl):
    p = make_params(rng, relative_span=3)
    p.relative_bias.data[:] = rng.standard_normal(p.relative_bias.shape)
    X = x64(rng, 30)
    cfg = PatternConfig(n=30, half_window=4, global_positions=(0, 15))
    with no_grad():
        loop = longformer_self_attention(X, p, cfg, "loop").data
        other = longformer_self_attention(X, p, cfg, impl).data
    np.testing.assert_allclose(loop, other, atol=1e-12)


def test_single_layer_influence_is_the_window(rng):
    p = make_params(rng)
    cfg = PatternConfig(n=16, half_window=2)
    fn = lambda X: longformer_self_attention(X, p, cfg)
    assert influence_width(fn, x64(rng, 16), 8) == {6, 7, 8, 9, 10}
    assert influence_width(fn, x64(rng, 16), 0) == {0, 1, 2}


def test_stacked_dilated_receptive_field(rng):
    n, j = 40, 20
    cfgs = [PatternConfig(n=n, half_window=2, dilation=3)] * 2
    fn = stack_forward([make_block(rng), make_block(rng)], cfgs)
    moved = influence_width(fn, x64(rng, n), j)
    theory = receptive_field([(2, 3), (2, 3)])
    assert moved == set(range(j - 12, j + 13, 3))
    assert max(moved) - min(moved) + 1 == theory.theoretical_width == 25


def random_stacks(count):
    rng = np.random.default_rng(77)
    for _ in range(count):
        depth = int(rng.integers(1, 4))
        yield [(int(rng.integers(1, 4)), int(rng.integers(1, 4))) for _ in range(depth)]


@pytest.mark.parametrize("layers", list(random_stacks(10)))
def test_receptive_field_of_random_stacks(rng, layers):
    half = sum(h * d for h, d in layers)
    n, j = 2 * half + 9, half + 4
    cfgs = [PatternConfig(n=n, half_window=h, dilation=d) for h, d in layers]
    fn = stack_forward([make_block(rng) for _ in layers], cfgs)
    reachable = {0}
    for h, d in layers:
        reachable = {r + k * d for r in reachable for k in range(-h, h + 1)}
    moved = influence_width(fn, x64(rng, n), j)
    assert moved == {j + r for r in reachable}
    assert max(moved) - min(moved) + 1 == receptive_field(layers).theoretical_width


def test_global_token_is_influenced_by_every_position(rng):
    p = make_params(rng)
    cfg = PatternConfig(n=24, half_window=1, global_positions=(0,))
    fn = lambda X: longformer_self_attention(X, p, cfg)
    X = x64(rng, 24)
    assert 0 in influence_width(fn, X, 23)
    assert influence_width(fn, X, 0) == set(range(24))


def test_causal_layer_never_sees_the_future(rng):
    p = make_params(rng)
    cfg = PatternConfig(n=18, half_window=3, dilation=2, mode="causal", global_positions=(4,))
    fn = lambda X: longformer_self_attention(X, p, cfg)
    X = x64(rng, 18)
    for j in range(18):
        assert min(influence_width(fn, X, j)) >= j


def test_per_head_window_changes_only_that_head(rng):
    p = make_params(rng)
    p.w_o.data[:] = np.eye(8)
    X = x64(rng, 16)
    same = PatternConfig(n=16, half_window=2, per_head=(HeadWindow(half_window=2), HeadWindow(half_window=2)))
    wider = PatternConfig(n=16, half_window=2, per_head=(HeadWindow(half_window=2), HeadWindow(half_window=5)))
    with no_grad():
        a = longformer_self_attention(X, p, same).data
        b = longformer_self_attention(X, p, wider).data
        plain = longformer_self_attention(X, p, PatternConfig(n=16, half_window=2)).data
    np.testing.assert_array_equal(a, plain)
    np.testing.assert_array_equal(a[:, :4], b[:, :4])
    assert not np.allclose(a[:, 4:], b[:, 4:])


def test_layer_gradients_including_global_projections(rng):
    p = make_params(rng, relative_span=2)
    for t in (p.w_qg, p.w_kg, p.w_vg):
        t.data += rng.normal(0.0, 0.1, size=t.shape)
    X = Tensor(rng.standard_normal((10, 8)), requires_grad=True, dtype="float64")
    cfg = PatternConfig(n=10, half_window=2, global_positions=(0, 6))
    weights = Tensor(rng.standard_normal((10, 8)), dtype="float64")
    params = [X, p.w_qs, p.w_ks, p.w_vs, p.w_qg, p.w_kg, p.w_vg, p.w_o, p.relative_bias]
    error = grad_check(lambda: (longformer_self_attention(X, p, cfg) * weights).sum(), params, samples=60)
    assert error < 1e-6


def test_post_layernorm_block_outputs_are_normalized(rng):
    block = make_block(rng)
    X = x64(rng, 12)
    cfg = PatternConfig(n=12, half_window=2)
    with no_grad():
        post = encoder_block(X, block, cfg, layernorm_position="post").data
        pre = encoder_block(X, block, cfg, layernorm_position="pre").data
    np.testing.assert_allclose(post.mean(axis=-1), 0.0, atol=1e-10)
    assert not np.allclose(pre, post)


def test_shape_errors(rng):
    p = make_params(rng)
    with pytest.raises(DimensionError):
        longformer_self_attention(x64(rng, 10, d_model=6), p, PatternConfig(n=10, half_window=2))
    with pytest.raises(DimensionError):
        longformer_self_attention(x64(rng, 10), p, PatternConfig(n=11, half_window=2))
