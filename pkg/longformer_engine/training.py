"""
Training loops.

Char-LM / MLM staged training over a byte corpus, the LED copy task with
teacher forcing, and the gradient check behind `grad-check`. Every update is
AdamW with global-norm clipping; the learning rate warms up linearly over
⌈10%⌉ of each phase and is then held (or decayed, if the schedule says so).
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from .attention import init_attention_params, longformer_self_attention
from .config import BOS_ID, GradCheckConfig, LedTrainConfig, OptimizerConfig
from .embed_init import extend_model_positions
from .errors import ConfigError, CorpusError, NonFiniteLossError
from .model import (
    Model,
    beam_search,
    build_model,
    charlm_loss,
    greedy_decode,
    led_loss,
    mlm_loss,
    named_parameters,
)
from .optim import AdamW, clip_grad_norm, lr_at, mask_gradients, warmup_steps_for
from .schedule import Phase, PhaseSchedule
from .tensor import Tensor, add, backward, bits_per_char, grad_check, scale

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "lr", "loss_nats", "bpc", "grad_norm", "phase")


@dataclass
class StepMetrics:
    step: int
    lr: float
    loss_nats: float
    bpc: float
    grad_norm: float
    phase: int


class MetricsLog:
    def __init__(self, rows: Optional[List[StepMetrics]] = None):
        self.rows: List[StepMetrics] = list(rows or [])

    def append(self, row: StepMetrics) -> None:
        self.rows.append(row)

    def extend(self, other: "MetricsLog") -> None:
        self.rows.extend(other.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[StepMetrics]:
        return iter(self.rows)

    def losses(self) -> List[float]:
        return [row.loss_nats for row in self.rows]

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(METRIC_COLUMNS)
            for row in self.rows:
                writer.writerow([getattr(row, column) for column in METRIC_COLUMNS])


@dataclass
class TrainOptions:
    seed: int = 0
    log_every: int = 50
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    mask_prob: float = 0.15
    metrics_csv: Optional[Path] = None


# --------------------------------------------------------------- helpers
def corpus_ids(corpus: Union[bytes, np.ndarray, Sequence[int]]) -> np.ndarray:
    if isinstance(corpus, (bytes, bytearray)):
        return np.frombuffer(bytes(corpus), dtype=np.uint8).astype(np.int64)
    return np.asarray(corpus, dtype=np.int64)


def sample_windows(ids: np.ndarray, seqlen: int, batch: int, rng: np.random.Generator) -> List[np.ndarray]:
    """`batch` random slices of seqlen + 1 tokens (input plus shifted target)"""
    starts = rng.integers(0, ids.size - seqlen, size=batch)
    return [ids[s : s + seqlen + 1] for s in starts]


def mean_loss(losses: Sequence[Tensor]) -> Tensor:
    return scale(reduce(add, losses), 1.0 / len(losses))


def _snapshot(m: Model, phase: int, step: int, lr: float, history: MetricsLog) -> Dict[str, object]:
    params = named_parameters(m)
    return {
        "phase": phase,
        "step": step,
        "lr": lr,
        "last_losses": history.losses()[-5:],
        "non_finite_parameters": [n for n, t in params.items() if not np.isfinite(t.data).all()],
        "parameter_norms": {n: float(np.linalg.norm(t.data)) for n, t in params.items()},
    }


def _optimizer(m: Model, lr: float, options: OptimizerConfig) -> AdamW:
    return AdamW(
        named_parameters(m), lr, betas=options.betas, eps=options.eps,
        weight_decay=options.weight_decay, masks=m.masks,
    )


def _update(
    m: Model,
    optimizer: AdamW,
    loss: Tensor,
    lr: float,
    grad_clip: float,
    phase: int,
    step: int,
    history: MetricsLog,
) -> StepMetrics:
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteLossError(
            f"non-finite loss {value} at phase {phase} step {step}",
            _snapshot(m, phase, step, lr, history),
        )
    backward(loss)
    mask_gradients(optimizer.params, m.masks)
    grad_norm = clip_grad_norm(optimizer.params.values(), grad_clip)
    optimizer.step(lr)
    return StepMetrics(step, lr, value, bits_per_char(value), grad_norm, phase)


# --------------------------------------------------------- char-LM / MLM
def prepare_phase(m: Model, phase: Phase) -> None:
    """Rewrite per-layer windows and grow the position table to the phase's length"""
    if phase.half_windows != m.cfg.half_windows():
        m.cfg = m.cfg.with_half_windows(phase.half_windows)
    if phase.seqlen > m.cfg.max_positions:
        extend_model_positions(m, phase.seqlen)


def example_loss(m: Model, window: np.ndarray, opts: TrainOptions, rng: np.random.Generator) -> Tensor:
    if m.cfg.architecture == "charlm":
        return charlm_loss(window, m)
    if m.cfg.architecture == "mlm":
        return mlm_loss(window[:-1], m, opts.mask_prob, rng).loss
    raise ConfigError(f"corpus training does not apply to {m.cfg.architecture} models")


def train_phase(
    m: Model,
    corpus: Union[bytes, np.ndarray],
    phase: Phase,
    schedule: PhaseSchedule,
    opts: Optional[TrainOptions] = None,
) -> MetricsLog:
    """phase.steps updates on random corpus windows; fresh optimizer state"""
    opts = opts or TrainOptions()
    ids = corpus_ids(corpus)
    if ids.size < phase.seqlen + 1:
        raise CorpusError(f"corpus of {ids.size} bytes is shorter than seqlen + 1 = {phase.seqlen + 1}")
    prepare_phase(m, phase)
    optimizer = _optimizer(m, phase.lr, opts.optimizer)
    rng = np.random.default_rng([opts.seed, phase.number])
    m.train(np.random.default_rng([opts.seed, phase.number, 1]))
    warmup = schedule.warmup_steps(phase)
    history = MetricsLog()
    logger.info(
        "Phase %d: seqlen %d, windows %s, lr %g, %d steps x batch %d, warmup %d",
        phase.number, phase.seqlen, list(phase.windows), phase.lr, phase.steps, phase.batch, warmup,
    )
    try:
        for step in range(1, phase.steps + 1):
            lr = lr_at(step, phase.lr, phase.steps, warmup, schedule.lr_schedule)
            optimizer.zero_grad()
            windows = sample_windows(ids, phase.seqlen, phase.batch, rng)
            loss = mean_loss([example_loss(m, w, opts, rng) for w in windows])
            row = _update(m, optimizer, loss, lr, schedule.grad_clip, phase.number, step, history)
            history.append(row)
            if step % opts.log_every == 0 or step == phase.steps:
                logger.info(
                    "phase %d step %d lr %.3g loss %.4f bpc %.4f grad_norm %.4f",
                    phase.number, step, lr, row.loss_nats, row.bpc, row.grad_norm,
                )
    finally:
        m.eval()
    return history


def run_staged_training(
    m: Model,
    corpus: Union[bytes, np.ndarray],
    schedule: PhaseSchedule,
    opts: Optional[TrainOptions] = None,
) -> MetricsLog:
    opts = opts or TrainOptions()
    history = MetricsLog()
    try:
        for phase in schedule:
            history.extend(train_phase(m, corpus, phase, schedule, opts))
    finally:
        if opts.metrics_csv is not None:
            history.write_csv(opts.metrics_csv)
    return history


# -------------------------------------------------------------- LED task
CopyPair = Tuple[np.ndarray, np.ndarray]


def copy_task(size: int, src_len: int, alphabet: str, seed: int = 0) -> List[CopyPair]:
    """(source, target) pairs: source = <s> + random letters, target = the same letters"""
    try:
        letters = np.frombuffer(alphabet.encode("ascii"), dtype=np.uint8).astype(np.int64)
    except UnicodeEncodeError as exc:
        raise ConfigError(f"copy-task alphabet must be ASCII, got {alphabet!r}") from exc
    rng = np.random.default_rng(seed)
    bodies = rng.choice(letters, size=(size, src_len - 1))
    return [(np.concatenate([[BOS_ID], body]), body.copy()) for body in bodies]


def exact_match(
    m: Model, pairs: Sequence[CopyPair], beam: int = 1, length_penalty: float = 1.0
) -> float:
    hits = 0
    for src, tgt in pairs:
        max_len = len(tgt) + 1
        if beam == 1:
            predicted = greedy_decode(m, src, max_len)
        else:
            predicted = beam_search(m, src, beam, max_len, length_penalty)
        hits += int(list(predicted) == [int(t) for t in tgt])
    return hits / max(len(pairs), 1)


class LedReport(BaseModel):
    steps: int
    final_loss: float
    exact_match_greedy: float
    exact_match_beam: Optional[float] = None
    beam: int = 1


def train_led(m: Model, cfg: LedTrainConfig, metrics_csv: Optional[Path] = None) -> Tuple[LedReport, MetricsLog]:
    """Teacher-forced training on the copy task, then held-out exact match"""
    task = cfg.task
    pairs = copy_task(task.train_size, task.src_len, task.alphabet, cfg.seed)
    held_out = copy_task(task.eval_size, task.src_len, task.alphabet, cfg.seed + 1)
    optimizer = _optimizer(m, cfg.lr, cfg.optimizer)
    rng = np.random.default_rng(cfg.seed)
    m.train(np.random.default_rng([cfg.seed, 1]))
    warmup = warmup_steps_for(cfg.steps, cfg.warmup_fraction)
    history = MetricsLog()
    try:
        for step in range(1, cfg.steps + 1):
            lr = lr_at(step, cfg.lr, cfg.steps, warmup)
            optimizer.zero_grad()
            batch = rng.integers(0, len(pairs), size=cfg.batch)
            loss = mean_loss([led_loss(*pairs[i], m) for i in batch])
            row = _update(m, optimizer, loss, lr, cfg.grad_clip, 1, step, history)
            history.append(row)
            if step % cfg.log_every == 0 or step == cfg.steps:
                logger.info("led step %d lr %.3g loss %.4f grad_norm %.4f", step, lr, row.loss_nats, row.grad_norm)
    finally:
        m.eval()
        csv_path = metrics_csv or cfg.metrics_csv
        if csv_path is not None:
            history.write_csv(csv_path)

    greedy = exact_match(m, held_out)
    report = LedReport(
        steps=cfg.steps,
        final_loss=history.rows[-1].loss_nats,
        exact_match_greedy=greedy,
        exact_match_beam=exact_match(m, held_out, cfg.beam) if cfg.beam > 1 else None,
        beam=cfg.beam,
    )
    logger.info("LED copy task: greedy exact match %.3f on %d held-out pairs", greedy, len(held_out))
    return report, history


# ------------------------------------------------------------ verification
def _layer_objective(cfg: GradCheckConfig) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    model_cfg = cfg.model
    rng = np.random.default_rng(cfg.seed)
    params = init_attention_params(rng, model_cfg.d_model, model_cfg.heads, np.float64, std=0.3)
    # the global projections are perturbed so that they are checked independently
    for tensor in (params.w_qg, params.w_kg, params.w_vg):
        tensor.data += rng.normal(0.0, 0.05, size=tensor.shape)
    pattern = model_cfg.pattern(0, cfg.seq_len)
    if not pattern.global_positions:
        pattern = pattern.with_globals([0])
    X = Tensor(rng.normal(size=(cfg.seq_len, model_cfg.d_model)), requires_grad=True, dtype="float64")
    weights = rng.normal(size=(cfg.seq_len, model_cfg.d_model))

    def objective() -> Tensor:
        out = longformer_self_attention(X, params, pattern, model_cfg.attention_impl)
        return (out * Tensor(weights)).sum()

    return objective, [X, params.w_qs, params.w_ks, params.w_vs, params.w_qg, params.w_kg, params.w_vg, params.w_o]


def _model_objective(cfg: GradCheckConfig) -> Tuple[Callable[[], Tensor], List[Tensor]]:
    model_cfg = cfg.model.model_copy(update={"dtype": "float64", "dropout": 0.0, "init_std": 0.3})
    m = build_model(model_cfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    tokens = rng.integers(0, 256, size=cfg.seq_len + 1)

    if model_cfg.architecture == "charlm":
        def objective() -> Tensor:
            return charlm_loss(tokens, m)
    elif model_cfg.architecture == "mlm":
        def objective() -> Tensor:
            return mlm_loss(tokens, m, 0.5, cfg.seed).loss
    else:
        src = np.concatenate([[BOS_ID], tokens[1:]])

        def objective() -> Tensor:
            return led_loss(src, tokens[: cfg.seq_len // 2], m)
    return objective, list(named_parameters(m).values())


def run_grad_check(cfg: GradCheckConfig) -> float:
    """Worst relative error between analytic and central-difference gradients"""
    if cfg.target == "layer":
        objective, params = _layer_objective(cfg)
    else:
        objective, params = _model_objective(cfg)
    error = grad_check(objective, params, eps=cfg.eps, samples=cfg.samples, seed=cfg.seed)
    logger.info("grad check (%s, %d samples): max relative error %.3e", cfg.target, cfg.samples, error)
    return error
