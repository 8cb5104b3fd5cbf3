"""
Sliding-window bits-per-character evaluation.

Windows of length L start at 0, s, 2s, ...; the first window scores all of its L
tokens and each later window only its last s. When the corpus does not end on a
window boundary, one more window is right-aligned at N - L and scores only the
suffix nothing else scored. Every token is scored exactly once.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Literal, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .config import BOS_ID
from .errors import EvalProtocolError
from .model import Model, charlm_forward
from .tensor import log_softmax, no_grad

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = "v1"

Forward = Callable[[np.ndarray], np.ndarray]


class EvalProtocol(BaseModel):
    eval_len: int = Field(..., ge=1, description="Window length L")
    step: int = Field(..., ge=1, description="Fresh tokens scored per window after the first")

    @model_validator(mode="after")
    def step_within_window(self) -> "EvalProtocol":
        if self.step > self.eval_len:
            raise ValueError(f"step {self.step} exceeds eval_len {self.eval_len}")
        return self


@dataclass(frozen=True)
class EvalWindow:
    start: int
    end: int
    score_start: int
    score_end: int

    @property
    def scored(self) -> int:
        return self.score_end - self.score_start


class EvalReport(BaseModel):
    protocol: Literal["v1"] = PROTOCOL_VERSION
    eval_len: int
    step: int
    windows: int
    tokens_scored: int
    total_nll_nats: float
    bpc: float


def sliding_windows(n_tokens: int, eval_len: int, step: int) -> List[EvalWindow]:
    if step < 1 or step > eval_len:
        raise EvalProtocolError(f"step must lie in [1, {eval_len}], got {step}")
    if n_tokens < eval_len:
        raise EvalProtocolError(
            f"corpus of {n_tokens} tokens is shorter than eval_len {eval_len}; use a smaller eval length"
        )
    windows = [EvalWindow(0, eval_len, 0, eval_len)]
    start = step
    while start + eval_len <= n_tokens:
        end = start + eval_len
        windows.append(EvalWindow(start, end, end - step, end))
        start += step
    covered = windows[-1].end
    if covered < n_tokens:
        windows.append(EvalWindow(n_tokens - eval_len, n_tokens, covered, n_tokens))
    return windows


def window_inputs(corpus: np.ndarray, window: EvalWindow) -> np.ndarray:
    """Ids whose row t predicts corpus[window.start + t]; the very first token is predicted from <s>"""
    if window.start == 0:
        return np.concatenate([[BOS_ID], corpus[: window.end - 1]]).astype(np.int64)
    return corpus[window.start - 1 : window.end - 1].astype(np.int64)


def model_forward(m: Model) -> Forward:
    def forward(ids: np.ndarray) -> np.ndarray:
        with no_grad():
            return charlm_forward(ids, m).data
    return forward


def eval_bpc_sliding(
    m: Union[Model, Forward],
    corpus: Union[bytes, Sequence[int], np.ndarray],
    proto: EvalProtocol,
) -> EvalReport:
    """Total NLL over all scored tokens divided by N·ln 2"""
    forward = model_forward(m) if isinstance(m, Model) else m
    ids = np.frombuffer(corpus, dtype=np.uint8) if isinstance(corpus, (bytes, bytearray)) else np.asarray(corpus)
    plan = sliding_windows(ids.size, proto.eval_len, proto.step)
    total = 0.0
    scored = 0
    for window in plan:
        logp = log_softmax(np.asarray(forward(window_inputs(ids, window)), dtype=np.float64))
        rows = np.arange(window.score_start, window.score_end)
        total += float(-logp[rows - window.start, ids[rows]].sum())
        scored += window.scored
    if scored != ids.size:
        raise EvalProtocolError(f"scored {scored} tokens of {ids.size}")
    bpc = total / (ids.size * math.log(2.0))
    logger.info("Sliding eval: %d windows, %d tokens, %.4f bpc", len(plan), scored, bpc)
    return EvalReport(
        eval_len=proto.eval_len,
        step=proto.step,
        windows=len(plan),
        tokens_scored=scored,
        total_nll_nats=total,
        bpc=bpc,
    )
