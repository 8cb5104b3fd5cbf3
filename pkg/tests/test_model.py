import numpy as np
import pytest

from longformer_engine.attention import dense_attention, feed_forward
from longformer_engine.config import BOS_ID, EOS_ID, MASK_ID, VOCAB_SIZE, ModelConfig
from longformer_engine.errors import DataError, MissingStartTokenError, SequenceTooLongError, UsageError
from longformer_engine.model import (
    beam_hypotheses,
    beam_search,
    build_model,
    charlm_forward,
    charlm_loss,
    corrupt_for_mlm,
    count_parameters,
    greedy_decode,
    ids_to_bytes,
    led_decode,
    led_encode,
    led_forward,
    led_loss,
    mlm_forward,
    mlm_loss,
    named_parameters,
    parameter_checksum,
    source_ids,
)
from longformer_engine.tensor import layernorm, no_grad, take_rows

A, B, C = ord("a"), ord("b"), ord("c")


class TableScorer:
    """Fixed next-token distributions keyed by the prefix after <s>"""

    def __init__(self, table):
        self.table = table

    def next_log_probs(self, prefix):
        out = np.full(VOCAB_SIZE, -np.inf)
        for token, prob in self.table.get(tuple(prefix[1:]), {}).items():
            out[token] = np.log(prob)
        return out


@pytest.fixture
def trap_scorer():
    # greedy commits to `a`; the better complete sequence starts with `b`
    after_a = {EOS_ID: 0.1, **{ord("0") + k: 0.09 for k in range(10)}}
    return TableScorer({(): {A: 0.6, B: 0.4}, (A,): after_a, (B,): {EOS_ID: 0.9, C: 0.1}})


@pytest.mark.parametrize("overrides", [
    {},
    {"relative_bias": True, "relative_span": 3},
    {"layernorm_position": "post"},
    {"architecture": "led", "decoder_layers": 2},
    {"architecture": "mlm", "global_positions": (0, 5)},
])
def test_parameter_count_matches_closed_form(overrides):
    cfg = ModelConfig(layers=2, heads=2, d_model=16, max_positions=24, ffn_mult=2, **overrides)
    m = build_model(cfg)
    assert sum(p.size for p in m.parameters()) == count_parameters(cfg)


def test_build_is_deterministic(tiny_charlm_cfg):
    a = parameter_checksum(build_model(tiny_charlm_cfg, seed=3))
    assert a == parameter_checksum(build_model(tiny_charlm_cfg, seed=3))
    assert a != parameter_checksum(build_model(tiny_charlm_cfg, seed=4))


def test_parameter_names_are_stable(tiny_led_cfg):
    names = list(named_parameters(build_model(tiny_led_cfg)))
    assert names[:2] == ["token_embedding", "position_embedding"]
    assert "blocks.0.attn.w_qg" in names
    assert "decoder_blocks.0.cross_attn.w_k" in names
    assert len(names) == len(set(names))


def test_charlm_forward_is_causal(tiny_charlm_cfg, rng):
    m = build_model(tiny_charlm_cfg)
    tokens = rng.integers(0, 256, size=20)
    with no_grad():
        before = charlm_forward(tokens, m).data
        assert before.shape == (20, VOCAB_SIZE)
        for _ in range(100):
            j = int(rng.integers(0, 20))
            changed = tokens.copy()
            changed[j] = (changed[j] + int(rng.integers(1, 256))) % 256
            after = charlm_forward(changed, m).data
            np.testing.assert_array_equal(before[:j], after[:j])
            assert not np.allclose(before[j:], after[j:])


def test_led_decoder_is_causal(tiny_led_cfg, rng):
    m = build_model(tiny_led_cfg)
    src = [BOS_ID, *rng.integers(0, 256, size=10)]
    prefix = np.array([BOS_ID, *rng.integers(0, 256, size=11)])
    with no_grad():
        memory = led_encode(m, src)
        before = led_decode(m, memory, prefix).data
        for _ in range(100):
            j = int(rng.integers(1, prefix.size))
            changed = prefix.copy()
            changed[j] = (changed[j] + int(rng.integers(1, 256))) % 256
            after = led_decode(m, memory, changed).data
            np.testing.assert_array_equal(before[:j], after[:j])


def test_led_start_token_reaches_every_encoder_row(tiny_led_cfg, rng):
    m = build_model(tiny_led_cfg)
    src = [BOS_ID, *rng.integers(0, 256, size=19)]
    with no_grad():
        before = led_encode(m, src).data
        original = m.position_embedding.data.copy()
        m.position_embedding.data[0] += 0.5
        moved_by_start = np.abs(led_encode(m, src).data - before).max(axis=1) > 1e-12
        m.position_embedding.data[...] = original
        m.position_embedding.data[10] += 0.5
        moved_by_middle = np.abs(led_encode(m, src).data - before).max(axis=1) > 1e-12
    assert moved_by_start.all()
    assert list(np.nonzero(moved_by_middle)[0]) == [0, 8, 9, 10, 11, 12]


def test_led_encoder_matches_dense_attention_when_the_window_covers_the_source(rng):
    cfg = ModelConfig(architecture="led", layers=2, heads=2, d_model=16, max_positions=32, half_window=12,
                      decoder_layers=1, decoder_max_positions=16, dtype="float64")
    m = build_model(cfg, seed=5)
    src = np.array([BOS_ID, *rng.integers(0, 256, size=11)])
    with no_grad():
        got = led_encode(m, src).data
        x = take_rows(m.token_embedding, src) + take_rows(m.position_embedding, np.arange(src.size))
        for block in m.blocks:
            x = x + dense_attention(layernorm(x, block.ln1_g, block.ln1_b), block.attn)
            x = x + feed_forward(layernorm(x, block.ln2_g, block.ln2_b), block.ffn)
        expected = layernorm(x, m.final_ln_g, m.final_ln_b).data
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-10)


def test_untrained_charlm_loss_is_near_uniform(tiny_charlm_cfg, rng):
    loss = charlm_loss(rng.integers(0, 256, size=24), build_model(tiny_charlm_cfg))
    assert abs(loss.item() - np.log(VOCAB_SIZE)) < 0.1


def test_position_table_bounds_sequence_length(tiny_charlm_cfg):
    m = build_model(tiny_charlm_cfg)
    charlm_forward(list(range(32)), m)
    with pytest.raises(SequenceTooLongError):
        charlm_forward(list(range(33)), m)


def test_token_ids_are_checked(tiny_charlm_cfg):
    m = build_model(tiny_charlm_cfg)
    with pytest.raises(DataError):
        charlm_forward([1, VOCAB_SIZE], m)
    with pytest.raises(DataError):
        charlm_forward([], m)
    with pytest.raises(UsageError):
        mlm_forward([1, 2, 3], m)


def test_mlm_forward_sees_both_sides(rng):
    m = build_model(ModelConfig(architecture="mlm", layers=1, heads=2, d_model=16, max_positions=32,
                                half_window=2, dtype="float64"))
    tokens = rng.integers(0, 256, size=16)
    changed = tokens.copy()
    changed[10] = (changed[10] + 7) % 256
    with no_grad():
        before = mlm_forward(tokens, m).data
        after = mlm_forward(changed, m).data
    moved = np.nonzero(np.abs(before - after).max(axis=1) > 1e-12)[0]
    assert list(moved) == [8, 9, 10, 11, 12]


def test_corrupt_for_mlm_touches_only_selected_positions():
    ids = np.random.default_rng(0).integers(0, 256, size=20_000)
    corrupted, selected = corrupt_for_mlm(ids, 0.15, np.random.default_rng(1))
    assert 0.14 < selected.mean() < 0.16
    np.testing.assert_array_equal(corrupted[~selected], ids[~selected])
    masked = (corrupted == MASK_ID)
    assert not masked[~selected].any()
    assert 0.77 < masked[selected].mean() < 0.83
    assert corrupted.max() <= MASK_ID


def test_corrupt_for_mlm_rejects_bad_inputs():
    with pytest.raises(UsageError):
        corrupt_for_mlm(np.arange(10), 0.0, np.random.default_rng(0))
    with pytest.raises(DataError):
        corrupt_for_mlm(np.arange(1), 1e-12, np.random.default_rng(3))


def test_mlm_loss_averages_over_selected_positions(rng):
    m = build_model(ModelConfig(architecture="mlm", layers=1, heads=2, d_model=16, max_positions=64,
                                half_window=2, dtype="float64"))
    tokens = rng.integers(0, 256, size=60)
    result = mlm_loss(tokens, m, mask_prob=0.3, rng_seed=5)
    with no_grad():
        logits = mlm_forward(result.corrupted, m).data
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    expected = -logp[np.arange(60), tokens][result.selected].mean()
    assert result.loss.item() == pytest.approx(expected, rel=1e-10)
    assert result.bpc == pytest.approx(expected / np.log(2))


def test_led_forward_shapes_and_start_token(tiny_led_cfg):
    m = build_model(tiny_led_cfg)
    src = source_ids(b"hello world")
    with no_grad():
        logits = led_forward(src, [BOS_ID, 104, 101], m)
    assert logits.shape == (3, VOCAB_SIZE)
    with pytest.raises(MissingStartTokenError):
        led_forward(list(b"hello"), [BOS_ID], m)
    assert np.isfinite(led_loss(src, list(b"hello"), m).item())


def test_beam_search_escapes_the_greedy_trap(trap_scorer):
    assert greedy_decode(trap_scorer, max_len=5) == [A]
    assert beam_search(trap_scorer, beam=2, max_len=5) == [B]


def test_beam_of_one_is_greedy(trap_scorer):
    assert beam_search(trap_scorer, beam=1, max_len=5) == greedy_decode(trap_scorer, max_len=5)


def test_beam_hypotheses_are_ranked(trap_scorer):
    hyps = beam_hypotheses(trap_scorer, beam=2, max_len=5)
    assert [h.tokens for h in hyps] == [(B,), (A,)]
    assert all(h.finished for h in hyps)
    assert hyps[0].logprob == pytest.approx(np.log(0.36))


def test_beam_search_on_a_model(tiny_led_cfg):
    m = build_model(tiny_led_cfg).eval()
    out = beam_search(m, source_ids(b"abc"), beam=3, max_len=6)
    assert len(out) <= 6
    assert all(0 <= t < VOCAB_SIZE and t not in (BOS_ID, EOS_ID) for t in out)
    with pytest.raises(UsageError):
        beam_search(m, source_ids(b"abc"), beam=0)
    with pytest.raises(UsageError):
        greedy_decode(m)


def test_byte_helpers():
    assert source_ids(b"ab") == [BOS_ID, 97, 98]
    assert ids_to_bytes([97, EOS_ID, 98, MASK_ID]) == b"ab"
