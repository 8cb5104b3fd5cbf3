"""
Time and memory scaling of the band kernels.

Memory is counted, not measured: the number of score values each implementation
materializes per head, in closed form. Timing is the median wall clock of the
full qk → softmax → pv pipeline after one discarded warmup run.
"""

import csv
import logging
import statistics
import time
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
from pydantic import BaseModel

from .band_kernels import Impl, MemoryAccount, band_attention, chunk_layout, impl_name
from .band_pattern import Mode, PatternConfig, nonzero_count
from .errors import TimerResolutionError, UnsupportedConfigurationError, UsageError
from .tensor import Tensor, no_grad, resolve_dtype

logger = logging.getLogger(__name__)

MIN_MEDIAN_SECONDS = 1e-3
MIN_POINTS = 3
MIN_REPEATS = 5


def count_memory(
    impl: Union[str, Impl], n: int, h: int, mode: Mode = "bidirectional", dilation: int = 1
) -> MemoryAccount:
    """Score elements (and peak elements, scores plus band output) per head"""
    impl = impl_name(impl)
    cfg = PatternConfig(n=n, half_window=h, dilation=dilation, mode=mode)
    band = n * cfg.slots
    if impl == Impl.DENSE.value:
        return MemoryAccount(impl, n * n, n * n + band)
    if impl == Impl.LOOP.value or (impl == Impl.CHUNK.value and h == 0):
        return MemoryAccount(impl, nonzero_count(cfg), band)
    if impl == Impl.CHUNK.value:
        if dilation != 1:
            raise UnsupportedConfigurationError("chunk kernel only supports dilation 1")
        _, chunks = chunk_layout(n, h)
        elements = chunks * (2 * h) ** 2
        return MemoryAccount(impl, elements, elements + band)
    raise UsageError(f"unknown attention implementation '{impl}'")


class ScalingPoint(BaseModel):
    n: int
    seconds: float
    score_elements: int
    peak_elements: int


class ScalingReport(BaseModel):
    impl: str
    half_window: int
    mode: str
    points: List[ScalingPoint]
    time_slope: float
    score_slope: float
    peak_slope: float


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log2(y) against log2(x)"""
    return float(np.polyfit(np.log2(np.asarray(xs, dtype=np.float64)), np.log2(np.asarray(ys, dtype=np.float64)), 1)[0])


def _time_once(impl: str, cfg: PatternConfig, q: Tensor, k: Tensor, v: Tensor) -> float:
    start = time.perf_counter()
    band_attention(q, k, v, cfg, impl)
    return time.perf_counter() - start


def time_scaling(
    impl: Union[str, Impl],
    n_list: Sequence[int],
    h: int,
    repeats: int = MIN_REPEATS,
    mode: Mode = "bidirectional",
    d_head: int = 64,
    seed: int = 0,
    dtype: str = "float32",
) -> ScalingReport:
    impl = impl_name(impl)
    dtype = resolve_dtype(dtype)
    n_list = [int(n) for n in n_list]
    if len(n_list) < MIN_POINTS or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise UsageError(f"need at least {MIN_POINTS} strictly ascending sequence lengths, got {n_list}")
    if repeats < MIN_REPEATS:
        raise UsageError(f"need at least {MIN_REPEATS} repeats for a stable median, got {repeats}")

    rng = np.random.default_rng(seed)
    points = []
    for n in n_list:
        cfg = PatternConfig(n=n, half_window=h, mode=mode)
        q, k, v = (Tensor(rng.standard_normal((n, d_head)).astype(dtype)) for _ in range(3))
        with no_grad():
            _time_once(impl, cfg, q, k, v)
            median = statistics.median(_time_once(impl, cfg, q, k, v) for _ in range(repeats))
        if median < MIN_MEDIAN_SECONDS:
            raise TimerResolutionError(
                f"median {median * 1e3:.3f} ms at n={n} is below timer resolution; use larger n"
            )
        account = count_memory(impl, n, h, mode)
        points.append(ScalingPoint(n=n, seconds=median, score_elements=account.score_elements, peak_elements=account.peak_elements))
        logger.info("bench %s n=%d h=%d: %.4fs, %d score elements", impl, n, h, median, account.score_elements)

    ns = [p.n for p in points]
    return ScalingReport(
        impl=impl,
        half_window=h,
        mode=mode,
        points=points,
        time_slope=loglog_slope(ns, [p.seconds for p in points]),
        score_slope=loglog_slope(ns, [p.score_elements for p in points]),
        peak_slope=loglog_slope(ns, [p.peak_elements for p in points]),
    )


def write_scaling_csv(reports: Sequence[ScalingReport], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["impl", "n", "half_window", "seconds", "score_elements", "peak_elements", "time_slope"])
        for report in reports:
            for point in report.points:
                writer.writerow([
                    report.impl, point.n, report.half_window, f"{point.seconds:.6f}",
                    point.score_elements, point.peak_elements, f"{report.time_slope:.4f}",
                ])
