import math

import numpy as np
import pytest
from pydantic import ValidationError

from longformer_engine.config import BOS_ID, VOCAB_SIZE
from longformer_engine.errors import EvalProtocolError
from longformer_engine.evaluation import (
    EvalProtocol,
    EvalWindow,
    eval_bpc_sliding,
    sliding_windows,
    window_inputs,
)
from longformer_engine.model import build_model


def uniform_bytes(ids):
    logits = np.full((len(ids), VOCAB_SIZE), -1e9)
    logits[:, :256] = 0.0
    return logits


def test_windows_score_every_token_once():
    plan = sliding_windows(12, 8, 2)
    assert [(w.start, w.end) for w in plan] == [(0, 8), (2, 10), (4, 12)]
    assert [w.scored for w in plan] == [8, 2, 2]


def test_trailing_window_is_right_aligned():
    plan = sliding_windows(13, 8, 3)
    assert [(w.start, w.end) for w in plan] == [(0, 8), (3, 11), (5, 13)]
    assert plan[-1] == EvalWindow(5, 13, 11, 13)
    assert sum(w.scored for w in plan) == 13


def test_non_overlapping_windows():
    plan = sliding_windows(24, 8, 8)
    assert [w.score_start for w in plan] == [0, 8, 16]
    assert all(w.scored == 8 for w in plan)


def test_protocol_errors():
    with pytest.raises(EvalProtocolError):
        sliding_windows(5, 8, 2)
    with pytest.raises(EvalProtocolError):
        sliding_windows(20, 8, 9)
    with pytest.raises(ValidationError):
        EvalProtocol(eval_len=8, step=9)


def random_protocols(count):
    rng = np.random.default_rng(31)
    for _ in range(count):
        eval_len = int(rng.integers(1, 40))
        step = int(rng.integers(1, eval_len + 1))
        yield int(rng.integers(eval_len, 200)), eval_len, step


@pytest.mark.parametrize("n_tokens, eval_len, step", list(random_protocols(20)))
def test_random_plans_partition_the_corpus(n_tokens, eval_len, step):
    plan = sliding_windows(n_tokens, eval_len, step)
    assert plan[0].score_start == 0 and plan[-1].score_end == n_tokens
    for previous, window in zip(plan, plan[1:]):
        assert window.score_start == previous.score_end
    for window in plan:
        assert window.end - window.start == eval_len
        assert window.start <= window.score_start < window.score_end == window.end
    for window in plan[1:]:
        assert window.score_start - window.start >= eval_len - step
    report = eval_bpc_sliding(uniform_bytes, bytes(n_tokens), EvalProtocol(eval_len=eval_len, step=step))
    assert report.tokens_scored == n_tokens
    assert report.windows == len(plan)
    assert report.bpc == pytest.approx(8.0)


def test_window_inputs_shift_by_one():
    corpus = np.arange(10, 22)
    np.testing.assert_array_equal(window_inputs(corpus, EvalWindow(0, 4, 0, 4)), [BOS_ID, 10, 11, 12])
    np.testing.assert_array_equal(window_inputs(corpus, EvalWindow(2, 6, 4, 6)), [11, 12, 13, 14])


def test_uniform_predictor_scores_eight_bits():
    corpus = bytes(range(200)) * 3
    report = eval_bpc_sliding(uniform_bytes, corpus, EvalProtocol(eval_len=64, step=16))
    assert report.bpc == pytest.approx(8.0)
    assert report.tokens_scored == len(corpus)
    assert report.protocol == "v1"


def test_context_length_changes_the_score():
    # a predictor that is only sure of a token when it sees its predecessor in the window
    def copy_previous(ids):
        logits = np.zeros((len(ids), VOCAB_SIZE))
        logits[1:, :] = -50.0
        logits[np.arange(1, len(ids)), ids[1:]] = 50.0
        return logits

    corpus = bytes([7]) * 40
    tight = eval_bpc_sliding(copy_previous, corpus, EvalProtocol(eval_len=8, step=8))
    overlapping = eval_bpc_sliding(copy_previous, corpus, EvalProtocol(eval_len=8, step=2))
    assert overlapping.bpc < tight.bpc
    assert tight.windows == 5 and overlapping.windows == 17


def test_model_evaluation(tiny_charlm_cfg):
    m = build_model(tiny_charlm_cfg)
    report = eval_bpc_sliding(m, b"the quick brown fox jumps", EvalProtocol(eval_len=16, step=4))
    assert report.tokens_scored == 25
    assert report.bpc == pytest.approx(math.log2(VOCAB_SIZE), abs=0.2)
