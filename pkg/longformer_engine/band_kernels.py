"""
Banded Attention Kernels

The sliding-window product QKᵀ keeps only a fixed number of diagonals. Scores are
stored in band layout: one row per query, one column per window slot, where slot
k of row i holds key i + (k - h)·d (bidirectional) or i - (h - k)·d (causal).

Three interchangeable implementations compute the band, forward and backward:

  loop   one vectorized pass per diagonal; any dilation, only valid entries touched
  chunk  overlapping blocks of 2h rows with stride h, one batched matmul, then the
         diagonals are picked out; non-dilated only, about twice the memory of loop
  dense  full n×n product followed by a band gather; the correctness/speed oracle

All kernels accept leading (head) dimensions: Q, K, V are [..., n, dk]. Scaling by
1/√dk happens inside the qk kernels so band scores agree across implementations.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from .band_pattern import RENDER_LIMIT, PatternConfig
from .errors import DimensionError, RenderGuardError, UnsupportedConfigurationError, UsageError
from .tensor import Tensor, concat, custom_op, getitem, masked_softmax, matmul


class Impl(str, Enum):
    LOOP = "loop"
    CHUNK = "chunk"
    DENSE = "dense"


@dataclass(frozen=True)
class MemoryAccount:
    """Score values materialized by one head's qk product, by deterministic counting"""
    impl: str
    score_elements: int
    peak_elements: int


@dataclass
class BandScores:
    """Band-layout scores (or probabilities) for one pattern"""
    data: Tensor
    valid: np.ndarray
    cfg: PatternConfig
    impl: str = Impl.LOOP.value
    account: Optional[MemoryAccount] = None

    @property
    def n(self) -> int:
        return self.cfg.n

    @property
    def slots(self) -> int:
        return self.cfg.slots

    def keys(self) -> np.ndarray:
        return self.cfg.key_grid()[0]

    def with_data(self, data: Tensor) -> "BandScores":
        return replace(self, data=data)


# ------------------------------------------------------------------ layout
def _valid_entries(cfg: PatternConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    keys, valid = cfg.key_grid()
    rows, slots = np.nonzero(valid)
    return valid, rows, slots, keys[rows, slots]


def _diagonal_range(n: int, offset: int) -> Tuple[int, int]:
    return max(0, -offset), min(n, n - offset)


def _check_rows(op: str, cfg: PatternConfig, *tensors: Tensor) -> None:
    first = tensors[0]
    for t in tensors[1:]:
        if t.shape[:-1] != first.shape[:-1]:
            raise DimensionError(op, first.shape, t.shape)
    if first.ndim < 2 or first.shape[-2] != cfg.n:
        raise DimensionError(op, first.shape, (cfg.n,), detail="rows must equal the pattern length")


def _scale(t: Tensor) -> np.floating:
    return t.dtype.type(1.0 / math.sqrt(t.shape[-1]))


def chunk_layout(n: int, half_window: int) -> Tuple[int, int]:
    """Padded length (a multiple of h, at least 2h) and the number of 2h-row chunks"""
    padded = max(2 * half_window, -(-n // half_window) * half_window)
    return padded, padded // half_window - 1


def _chunk_coordinates(
    rows: np.ndarray, keys: np.ndarray, half_window: int, chunks: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Chunk, local row and local column holding every valid (row, key) pair.

    Keys right of the query come from the chunk starting at the query's block,
    keys left of it from the chunk one block earlier, so each pair is computed once.
    """
    block = rows // half_window
    chunk = np.where(keys >= rows, np.minimum(block, chunks - 1), np.maximum(block - 1, 0))
    start = chunk * half_window
    return chunk, rows - start, keys - start


def _pad_rows(x: np.ndarray, padded: int) -> np.ndarray:
    extra = padded - x.shape[-2]
    if extra == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[-2] = (0, extra)
    return np.pad(x, widths)


def _to_chunks(x: np.ndarray, half_window: int) -> np.ndarray:
    blocks = x.reshape(x.shape[:-2] + (x.shape[-2] // half_window, half_window, x.shape[-1]))
    return np.concatenate([blocks[..., :-1, :, :], blocks[..., 1:, :, :]], axis=-2)


def _fold_chunks(xc: np.ndarray, half_window: int) -> np.ndarray:
    lead = xc.shape[:-3]
    count = xc.shape[-3]
    blocks = np.zeros(lead + (count + 1, half_window, xc.shape[-1]), dtype=xc.dtype)
    blocks[..., :-1, :, :] += xc[..., :half_window, :]
    blocks[..., 1:, :, :] += xc[..., half_window:, :]
    return blocks.reshape(lead + ((count + 1) * half_window, xc.shape[-1]))


# ---------------------------------------------------------------- qk kernels
def band_qk_loop(Q: Tensor, K: Tensor, cfg: PatternConfig) -> BandScores:
    """Band of QKᵀ/√dk computed one diagonal at a time; supports dilation and both modes"""
    _check_rows("band_qk_loop", cfg, Q, K)
    n = cfg.n
    scale = _scale(Q)
    offsets = [int(o) for o in cfg.offsets()]
    valid = cfg.key_grid()[1]
    data = np.zeros(Q.shape[:-1] + (cfg.slots,), dtype=Q.dtype)
    for slot, offset in enumerate(offsets):
        lo, hi = _diagonal_range(n, offset)
        if lo < hi:
            data[..., lo:hi, slot] = (Q.data[..., lo:hi, :] * K.data[..., lo + offset:hi + offset, :]).sum(-1) * scale

    def backward_fn(g):
        g = g * valid
        grad_q = np.zeros_like(Q.data)
        grad_k = np.zeros_like(K.data)
        for slot, offset in enumerate(offsets):
            lo, hi = _diagonal_range(n, offset)
            if lo >= hi:
                continue
            weight = g[..., lo:hi, slot, None] * scale
            grad_q[..., lo:hi, :] += weight * K.data[..., lo + offset:hi + offset, :]
            grad_k[..., lo + offset:hi + offset, :] += weight * Q.data[..., lo:hi, :]
        return grad_q, grad_k

    scores = custom_op("band_qk_loop", data, (Q, K), backward_fn)
    account = MemoryAccount(Impl.LOOP.value, int(valid.sum()), n * cfg.slots)
    return BandScores(scores, valid, cfg, Impl.LOOP.value, account)


def band_qk_chunk(Q: Tensor, K: Tensor, cfg: PatternConfig) -> BandScores:
    """
    Band of QKᵀ/√dk from overlapping 2h-row chunks (stride h) and one batched matmul.

    Only the non-dilated pattern is supported. n is padded to a multiple of h with
    masked rows that are dropped before returning. With h = 0 there is nothing to
    chunk and the diagonal is computed directly.
    """
    if cfg.dilation != 1:
        raise UnsupportedConfigurationError(
            f"chunk kernel only supports dilation 1, got {cfg.dilation}; use the loop kernel"
        )
    _check_rows("band_qk_chunk", cfg, Q, K)
    if cfg.half_window == 0:
        band = band_qk_loop(Q, K, cfg)
        return replace(band, impl=Impl.CHUNK.value, account=replace(band.account, impl=Impl.CHUNK.value))

    n, h = cfg.n, cfg.half_window
    scale = _scale(Q)
    padded, chunks = chunk_layout(n, h)
    valid, rows, slots, keys = _valid_entries(cfg)
    chunk, local_row, local_col = _chunk_coordinates(rows, keys, h, chunks)

    q_chunks = _to_chunks(_pad_rows(Q.data, padded), h)
    k_chunks = _to_chunks(_pad_rows(K.data, padded), h)
    chunk_scores = (q_chunks @ np.swapaxes(k_chunks, -1, -2)) * scale
    data = np.zeros(Q.shape[:-1] + (cfg.slots,), dtype=Q.dtype)
    data[..., rows, slots] = chunk_scores[..., chunk, local_row, local_col]

    def backward_fn(g):
        grad_scores = np.zeros_like(chunk_scores)
        grad_scores[..., chunk, local_row, local_col] = g[..., rows, slots] * scale
        grad_q = _fold_chunks(grad_scores @ k_chunks, h)[..., :n, :]
        grad_k = _fold_chunks(np.swapaxes(grad_scores, -1, -2) @ q_chunks, h)[..., :n, :]
        return np.ascontiguousarray(grad_q), np.ascontiguousarray(grad_k)

    scores = custom_op("band_qk_chunk", data, (Q, K), backward_fn)
    elements = chunks * (2 * h) ** 2
    account = MemoryAccount(Impl.CHUNK.value, elements, elements + n * cfg.slots)
    return BandScores(scores, valid, cfg, Impl.CHUNK.value, account)


def band_qk_dense(Q: Tensor, K: Tensor, cfg: PatternConfig) -> BandScores:
    """Band of QKᵀ/√dk gathered from the full n×n product"""
    _check_rows("band_qk_dense", cfg, Q, K)
    n = cfg.n
    scale = _scale(Q)
    valid, rows, slots, keys = _valid_entries(cfg)
    full = (Q.data @ np.swapaxes(K.data, -1, -2)) * scale
    data = np.zeros(Q.shape[:-1] + (cfg.slots,), dtype=Q.dtype)
    data[..., rows, slots] = full[..., rows, keys]

    def backward_fn(g):
        grad_full = np.zeros_like(full)
        grad_full[..., rows, keys] = g[..., rows, slots] * scale
        return grad_full @ K.data, np.swapaxes(grad_full, -1, -2) @ Q.data

    scores = custom_op("band_qk_dense", data, (Q, K), backward_fn)
    account = MemoryAccount(Impl.DENSE.value, n * n, n * n + n * cfg.slots)
    return BandScores(scores, valid, cfg, Impl.DENSE.value, account)


QK_KERNELS: Dict[str, Callable[[Tensor, Tensor, PatternConfig], BandScores]] = {
    Impl.LOOP.value: band_qk_loop,
    Impl.CHUNK.value: band_qk_chunk,
    Impl.DENSE.value: band_qk_dense,
}


def impl_name(impl: Union[str, Impl]) -> str:
    return impl.value if isinstance(impl, Impl) else str(impl)


def band_qk(Q: Tensor, K: Tensor, cfg: PatternConfig, impl: str = Impl.LOOP.value) -> BandScores:
    kernel = QK_KERNELS.get(impl_name(impl))
    if kernel is None:
        raise UsageError(f"unknown attention implementation '{impl}', expected one of {sorted(QK_KERNELS)}")
    return kernel(Q, K, cfg)


# ------------------------------------------------------------------ softmax
def band_softmax(
    local: BandScores,
    global_scores: Optional[Tensor] = None,
    dedupe: Optional[np.ndarray] = None,
    global_mask: Optional[np.ndarray] = None,
) -> Tuple[BandScores, Optional[Tensor]]:
    """
    One softmax per query row over its valid band slots plus its global-key scores.

    `dedupe` marks band slots whose key is a global position; those slots are masked
    so the global logit is the only one for that key. `global_mask` [n, g] hides
    global keys a query may not see (causal mode).
    """
    mask = local.valid if dedupe is None else local.valid & ~dedupe
    if global_scores is None:
        return local.with_data(masked_softmax(local.data, mask)), None

    if global_scores.shape[:-1] != local.data.shape[:-1]:
        raise DimensionError("band_softmax", local.data.shape, global_scores.shape)
    count = global_scores.shape[-1]
    if global_mask is None:
        global_mask = np.ones((local.n, count), dtype=bool)
    joint_mask = np.concatenate([mask, np.asarray(global_mask, dtype=bool)], axis=-1)
    probs = masked_softmax(concat([local.data, global_scores], axis=-1), joint_mask)
    band_probs = getitem(probs, (Ellipsis, slice(0, local.slots)))
    global_probs = getitem(probs, (Ellipsis, slice(local.slots, local.slots + count)))
    return local.with_data(band_probs), global_probs


# --------------------------------------------------------------- pv kernels
def _band_pv_loop(probs: BandScores, V: Tensor) -> Tensor:
    n = probs.n
    P = probs.data
    offsets = [int(o) for o in probs.cfg.offsets()]
    out = np.zeros(V.shape, dtype=V.dtype)
    for slot, offset in enumerate(offsets):
        lo, hi = _diagonal_range(n, offset)
        if lo < hi:
            out[..., lo:hi, :] += P.data[..., lo:hi, slot, None] * V.data[..., lo + offset:hi + offset, :]

    def backward_fn(g):
        grad_p = np.zeros_like(P.data)
        grad_v = np.zeros_like(V.data)
        for slot, offset in enumerate(offsets):
            lo, hi = _diagonal_range(n, offset)
            if lo >= hi:
                continue
            grad_p[..., lo:hi, slot] = (g[..., lo:hi, :] * V.data[..., lo + offset:hi + offset, :]).sum(-1)
            grad_v[..., lo + offset:hi + offset, :] += P.data[..., lo:hi, slot, None] * g[..., lo:hi, :]
        return grad_p, grad_v

    return custom_op("band_pv_loop", out, (P, V), backward_fn)


def _band_pv_chunk(probs: BandScores, V: Tensor) -> Tensor:
    cfg = probs.cfg
    if cfg.dilation != 1:
        raise UnsupportedConfigurationError(
            f"chunk kernel only supports dilation 1, got {cfg.dilation}; use the loop kernel"
        )
    if cfg.half_window == 0:
        return _band_pv_loop(probs, V)
    n, h = cfg.n, cfg.half_window
    P = probs.data
    padded, chunks = chunk_layout(n, h)
    _, rows, slots, keys = _valid_entries(cfg)
    chunk, local_row, local_col = _chunk_coordinates(rows, keys, h, chunks)

    p_chunks = np.zeros(P.shape[:-2] + (chunks, 2 * h, 2 * h), dtype=P.dtype)
    p_chunks[..., chunk, local_row, local_col] = P.data[..., rows, slots]
    v_chunks = _to_chunks(_pad_rows(V.data, padded), h)
    out = _fold_chunks(p_chunks @ v_chunks, h)[..., :n, :]

    def backward_fn(g):
        g_chunks = _to_chunks(_pad_rows(g, padded), h)
        grad_p_chunks = g_chunks @ np.swapaxes(v_chunks, -1, -2)
        grad_p = np.zeros_like(P.data)
        grad_p[..., rows, slots] = grad_p_chunks[..., chunk, local_row, local_col]
        grad_v = _fold_chunks(np.swapaxes(p_chunks, -1, -2) @ g_chunks, h)[..., :n, :]
        return grad_p, np.ascontiguousarray(grad_v)

    return custom_op("band_pv_chunk", np.ascontiguousarray(out), (P, V), backward_fn)


def _band_pv_dense(probs: BandScores, V: Tensor) -> Tensor:
    n = probs.n
    P = probs.data
    _, rows, slots, keys = _valid_entries(probs.cfg)
    full = np.zeros(P.shape[:-1] + (n,), dtype=P.dtype)
    full[..., rows, keys] = P.data[..., rows, slots]

    def backward_fn(g):
        grad_full = g @ np.swapaxes(V.data, -1, -2)
        grad_p = np.zeros_like(P.data)
        grad_p[..., rows, slots] = grad_full[..., rows, keys]
        return grad_p, np.swapaxes(full, -1, -2) @ g

    return custom_op("band_pv_dense", full @ V.data, (P, V), backward_fn)


PV_KERNELS: Dict[str, Callable[[BandScores, Tensor], Tensor]] = {
    Impl.LOOP.value: _band_pv_loop,
    Impl.CHUNK.value: _band_pv_chunk,
    Impl.DENSE.value: _band_pv_dense,
}


def band_pv(
    probs: BandScores,
    V: Tensor,
    global_probs: Optional[Tensor] = None,
    global_values: Optional[Tensor] = None,
    impl: Optional[str] = None,
) -> Tensor:
    """out[i] = Σ_band p·V[j] + Σ_global p·V_g[j]"""
    impl = impl_name(impl or probs.impl)
    if impl not in PV_KERNELS:
        raise UsageError(f"unknown attention implementation '{impl}', expected one of {sorted(PV_KERNELS)}")
    if V.ndim < 2 or V.shape[:-2] != probs.data.shape[:-2] or V.shape[-2] != probs.n:
        raise DimensionError("band_pv", probs.data.shape, V.shape)
    out = PV_KERNELS[impl](probs, V)
    if global_probs is None:
        return out
    if global_values is None or global_values.shape[-2] != global_probs.shape[-1]:
        raise DimensionError(
            "band_pv", global_probs.shape, None if global_values is None else global_values.shape,
            detail="global probabilities and global values disagree",
        )
    return out + matmul(global_probs, global_values)


def band_attention(
    Q: Tensor, K: Tensor, V: Tensor, cfg: PatternConfig, impl: str = Impl.LOOP.value
) -> Tuple[Tensor, MemoryAccount]:
    """Sliding-window attention without globals: qk → band softmax → pv"""
    scores = band_qk(Q, K, cfg, impl)
    probs, _ = band_softmax(scores)
    return band_pv(probs, V, impl=impl), scores.account


# ----------------------------------------------------------------- bridges
def band_to_dense(band: BandScores) -> Tensor:
    """Scatter band slots to their (row, key) positions; all other entries are exactly 0"""
    if band.n > RENDER_LIMIT:
        raise RenderGuardError(f"band_to_dense: n={band.n} exceeds the dense limit {RENDER_LIMIT}")
    n = band.n
    _, rows, slots, keys = _valid_entries(band.cfg)
    source = band.data
    out = np.zeros(source.shape[:-1] + (n,), dtype=source.dtype)
    out[..., rows, keys] = source.data[..., rows, slots]

    def backward_fn(g):
        grad = np.zeros_like(source.data)
        grad[..., rows, slots] = g[..., rows, keys]
        return (grad,)

    return custom_op("band_to_dense", out, (source,), backward_fn)


def dense_to_band(dense: Tensor, cfg: PatternConfig, impl: str = Impl.DENSE.value) -> BandScores:
    """Gather the band slots of a dense [..., n, n] matrix"""
    if dense.ndim < 2 or dense.shape[-1] != cfg.n or dense.shape[-2] != cfg.n:
        raise DimensionError("dense_to_band", dense.shape, (cfg.n, cfg.n))
    valid, rows, slots, keys = _valid_entries(cfg)
    out = np.zeros(dense.shape[:-1] + (cfg.slots,), dtype=dense.dtype)
    out[..., rows, slots] = dense.data[..., rows, keys]

    def backward_fn(g):
        grad = np.zeros_like(dense.data)
        grad[..., rows, keys] = g[..., rows, slots]
        return (grad,)

    return BandScores(custom_op("dense_to_band", out, (dense,), backward_fn), valid, cfg, impl)
