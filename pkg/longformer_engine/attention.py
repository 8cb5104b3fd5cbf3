"""
Longformer Self-Attention Layer

Multi-head attention where every non-global query attends its sliding (possibly
dilated) window plus the global positions, and every global query attends the
whole sequence. Window keys use the local projections (Q_s, K_s, V_s); global
keys and global queries use a second set (Q_g, K_g, V_g) that starts as an exact
copy of the first.

A non-global query takes one softmax over its band logits and its global-key
logits together. A global key that also falls inside the window keeps only the
global logit; its band slot is masked.
"""

import math
from dataclasses import dataclass, fields
from typing import Callable, Iterator, List, Optional, Set, Tuple, Union

import numpy as np

from .band_kernels import band_pv, band_qk, band_softmax
from .band_pattern import PatternConfig
from .errors import DimensionError
from .tensor import (
    Tensor,
    concat,
    dropout,
    gelu,
    getitem,
    layernorm,
    masked_softmax,
    no_grad,
    set_rows,
)


@dataclass
class AttentionParams:
    """Projection weights of one Longformer attention layer, all [d_model, d_model]"""
    w_qs: Tensor
    w_ks: Tensor
    w_vs: Tensor
    w_qg: Tensor
    w_kg: Tensor
    w_vg: Tensor
    w_o: Tensor
    heads: int
    relative_bias: Optional[Tensor] = None

    def __post_init__(self):
        d_model = self.w_qs.shape[0]
        for f in ("w_qs", "w_ks", "w_vs", "w_qg", "w_kg", "w_vg", "w_o"):
            if getattr(self, f).shape != (d_model, d_model):
                raise DimensionError("AttentionParams", getattr(self, f).shape, (d_model, d_model), detail=f)
        if d_model % self.heads:
            raise DimensionError("AttentionParams", (d_model,), (self.heads,), detail="heads must divide d_model")

    @property
    def d_model(self) -> int:
        return self.w_qs.shape[0]

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads


@dataclass
class DenseAttentionParams:
    """Single-projection multi-head attention (LED decoder self- and cross-attention)"""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int


@dataclass
class FeedForward:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class EncoderBlock:
    attn: AttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ffn: FeedForward


def iter_parameters(prefix: str, obj) -> Iterator[Tuple[str, Tensor]]:
    """(dotted name, tensor) for every Tensor field of a parameter dataclass, in field order"""
    for f in fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}.{f.name}" if prefix else f.name
        if isinstance(value, Tensor):
            yield name, value
        elif hasattr(value, "__dataclass_fields__"):
            yield from iter_parameters(name, value)


# ----------------------------------------------------------------- init
def _normal(rng: np.random.Generator, shape, std: float, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def init_attention_params(
    rng: np.random.Generator,
    d_model: int,
    heads: int,
    dtype=np.float32,
    std: float = 0.02,
    relative_span: Optional[int] = None,
) -> AttentionParams:
    shape = (d_model, d_model)
    local = [_normal(rng, shape, std, dtype) for _ in range(3)]
    params = AttentionParams(
        *local,
        *[Tensor(np.zeros(shape, dtype=dtype), requires_grad=True) for _ in range(3)],
        w_o=_normal(rng, shape, std, dtype),
        heads=heads,
        relative_bias=(
            Tensor(np.zeros((heads, 2 * relative_span + 1), dtype=dtype), requires_grad=True)
            if relative_span is not None else None
        ),
    )
    return init_global_projections(params)


def init_global_projections(p: AttentionParams) -> AttentionParams:
    """Overwrite the global projections in place with copies of the local ones"""
    np.copyto(p.w_qg.data, p.w_qs.data)
    np.copyto(p.w_kg.data, p.w_ks.data)
    np.copyto(p.w_vg.data, p.w_vs.data)
    return p


def init_dense_attention(rng: np.random.Generator, d_model: int, heads: int, dtype=np.float32, std: float = 0.02):
    shape = (d_model, d_model)
    return DenseAttentionParams(*[_normal(rng, shape, std, dtype) for _ in range(4)], heads=heads)


def init_feed_forward(rng: np.random.Generator, d_model: int, mult: int, dtype=np.float32, std: float = 0.02):
    hidden = mult * d_model
    return FeedForward(
        _normal(rng, (d_model, hidden), std, dtype),
        Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
        _normal(rng, (hidden, d_model), std, dtype),
        Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True),
    )


def layernorm_params(d_model: int, dtype=np.float32) -> Tuple[Tensor, Tensor]:
    return (
        Tensor(np.ones(d_model, dtype=dtype), requires_grad=True),
        Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True),
    )


# ------------------------------------------------------------- attention
def _relative_slots(cfg: PatternConfig, span: int) -> np.ndarray:
    steps = np.arange(cfg.slots) - cfg.half_window
    return np.clip(steps, -span, span) + span


def longformer_self_attention(
    X: Tensor,
    p: AttentionParams,
    cfg: PatternConfig,
    impl: str = "loop",
) -> Tensor:
    """
    Sliding-window + global multi-head self-attention over X [n, d_model].

    `cfg` may carry per-head windows; global positions are shared by all heads.
    """
    if X.ndim != 2 or X.shape[1] != p.d_model:
        raise DimensionError("longformer_self_attention", X.shape, (cfg.n, p.d_model))
    if X.shape[0] != cfg.n:
        raise DimensionError("longformer_self_attention", X.shape, (cfg.n,), detail="pattern length")
    if cfg.per_head is not None and len(cfg.per_head) != p.heads:
        raise DimensionError("longformer_self_attention", (len(cfg.per_head),), (p.heads,), detail="per-head windows")

    n, dk = cfg.n, p.d_head
    scale = 1.0 / math.sqrt(dk)
    globals_ = np.asarray(cfg.global_positions, dtype=np.int64)
    rows = np.arange(n)

    q_local = X @ p.w_qs
    k_local = X @ p.w_ks
    v_local = X @ p.w_vs
    if globals_.size:
        k_global = X @ p.w_kg
        v_global = X @ p.w_vg
        q_global_rows = getitem(X, globals_) @ p.w_qg
        global_visible = globals_[None, :] <= rows[:, None] if cfg.causal else None
        row_visible = rows[None, :] <= globals_[:, None] if cfg.causal else None

    outputs = []
    for head in range(p.heads):
        cols = slice(head * dk, (head + 1) * dk)
        head_cfg = cfg.for_head(head)
        q = getitem(q_local, (slice(None), cols))
        k = getitem(k_local, (slice(None), cols))
        v = getitem(v_local, (slice(None), cols))

        band = band_qk(q, k, head_cfg, impl)
        if p.relative_bias is not None:
            span = (p.relative_bias.shape[1] - 1) // 2
            bias = getitem(p.relative_bias, (head, _relative_slots(head_cfg, span)))
            band = band.with_data(band.data + bias)

        if not globals_.size:
            probs, _ = band_softmax(band)
            outputs.append(band_pv(probs, v, impl=impl))
            continue

        kg = getitem(k_global, (globals_, cols))
        vg = getitem(v_global, (globals_, cols))
        keys, valid = head_cfg.key_grid()
        dedupe = valid & np.isin(keys, globals_)
        probs, global_probs = band_softmax(band, (q @ kg.T) * scale, dedupe, global_visible)
        out = band_pv(probs, v, global_probs, vg, impl=impl)

        # global queries see every key through the global projections
        q_rows = getitem(q_global_rows, (slice(None), cols))
        k_all = getitem(k_global, (slice(None), cols))
        v_all = getitem(v_global, (slice(None), cols))
        row_probs = masked_softmax((q_rows @ k_all.T) * scale, row_visible)
        outputs.append(set_rows(out, globals_, row_probs @ v_all))

    return concat(outputs, axis=-1) @ p.w_o


def multihead_attention(
    x_q: Tensor,
    x_kv: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
    heads: int,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Dense scaled dot-product attention; `mask` [n_q, n_kv] marks allowed pairs"""
    if x_q.ndim != 2 or x_kv.ndim != 2 or x_q.shape[1] != x_kv.shape[1]:
        raise DimensionError("multihead_attention", x_q.shape, x_kv.shape)
    d_model = w_q.shape[1]
    if d_model % heads:
        raise DimensionError("multihead_attention", (d_model,), (heads,), detail="heads must divide d_model")
    dk = d_model // heads
    scale = 1.0 / math.sqrt(dk)
    Q, K, V = x_q @ w_q, x_kv @ w_k, x_kv @ w_v
    outputs = []
    for head in range(heads):
        cols = (slice(None), slice(head * dk, (head + 1) * dk))
        scores = (getitem(Q, cols) @ getitem(K, cols).T) * scale
        outputs.append(masked_softmax(scores, mask) @ getitem(V, cols))
    return concat(outputs, axis=-1) @ w_o


def dense_attention(X: Tensor, p: AttentionParams, mask: Optional[np.ndarray] = None) -> Tensor:
    """Oracle: ordinary multi-head self-attention with the local projections"""
    return multihead_attention(X, X, p.w_qs, p.w_ks, p.w_vs, p.w_o, p.heads, mask)


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


# ---------------------------------------------------------------- blocks
def feed_forward(x: Tensor, f: FeedForward) -> Tensor:
    return gelu(x @ f.w1 + f.b1) @ f.w2 + f.b2


def encoder_block(
    X: Tensor,
    block: EncoderBlock,
    cfg: PatternConfig,
    impl: str = "loop",
    layernorm_position: str = "pre",
    dropout_p: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    """Residual attention + GeLU feed-forward, pre- or post-layernorm"""
    sublayers = (
        (lambda h: longformer_self_attention(h, block.attn, cfg, impl), block.ln1_g, block.ln1_b),
        (lambda h: feed_forward(h, block.ffn), block.ln2_g, block.ln2_b),
    )
    x = X
    for fn, gamma, beta in sublayers:
        if layernorm_position == "pre":
            x = x + dropout(fn(layernorm(x, gamma, beta)), dropout_p, rng, training)
        else:
            x = layernorm(x + dropout(fn(x), dropout_p, rng, training), gamma, beta)
    return x


# -------------------------------------------------------------- probing
def influence_width(
    fn: Callable[[Tensor], Tensor],
    X: Union[Tensor, np.ndarray],
    j: int,
    delta: float = 1e-3,
    tol: float = 1e-9,
) -> Set[int]:
    """Output rows that move by more than `tol` when input row j is shifted by `delta`"""
    base_input = X.data if isinstance(X, Tensor) else np.asarray(X)
    if not 0 <= j < base_input.shape[0]:
        raise DimensionError("influence_width", base_input.shape, (j,), detail="probe row out of range")
    perturbed = base_input.copy()
    perturbed[j] += delta
    with no_grad():
        before = fn(Tensor(base_input)).data
        after = fn(Tensor(perturbed)).data
    moved = np.abs(after - before).reshape(before.shape[0], -1).max(axis=1) > tol
    return set(int(i) for i in np.nonzero(moved)[0])


def stack_forward(blocks: List[EncoderBlock], cfgs: List[PatternConfig], impl: str = "loop"):
    """Dropout-free forward through a stack of encoder blocks, for receptive-field probes"""
    def forward(X: Tensor) -> Tensor:
        for block, cfg in zip(blocks, cfgs):
            X = encoder_block(X, block, cfg, impl)
        return X
    return forward
