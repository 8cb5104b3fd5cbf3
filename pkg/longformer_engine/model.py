"""
Model Assemblies

Three stacks share one token table (tied with the output head) and learned
absolute positions:

  charlm  causal Longformer layers, next-byte prediction
  mlm     bidirectional Longformer layers, masked-byte recovery
  led     bidirectional Longformer encoder with a global start token, and a
          decoder with full causal self-attention plus full cross-attention

Sequences are single examples [n]; batching loops over examples.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .attention import (
    DenseAttentionParams,
    EncoderBlock,
    FeedForward,
    causal_mask,
    encoder_block,
    feed_forward,
    init_attention_params,
    init_dense_attention,
    init_feed_forward,
    iter_parameters,
    layernorm_params,
    multihead_attention,
)
from .config import BOS_ID, BYTE_VOCAB, EOS_ID, MASK_ID, ModelConfig
from .errors import DataError, DimensionError, MissingStartTokenError, SequenceTooLongError, UsageError
from .tensor import (
    Tensor,
    bits_per_char,
    cross_entropy,
    dropout,
    layernorm,
    log_softmax,
    no_grad,
    resolve_dtype,
    take_rows,
)


MASK_FRACTION = 0.8
RANDOM_FRACTION = 0.1


@dataclass
class DecoderBlock:
    self_attn: DenseAttentionParams
    cross_attn: DenseAttentionParams
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ln3_g: Tensor
    ln3_b: Tensor
    ffn: FeedForward


@dataclass
class Model:
    cfg: ModelConfig
    token_embedding: Tensor
    position_embedding: Tensor
    blocks: List[EncoderBlock]
    final_ln_g: Optional[Tensor] = None
    final_ln_b: Optional[Tensor] = None
    decoder_position_embedding: Optional[Tensor] = None
    decoder_blocks: List[DecoderBlock] = field(default_factory=list)
    decoder_ln_g: Optional[Tensor] = None
    decoder_ln_b: Optional[Tensor] = None
    masks: Dict[str, np.ndarray] = field(default_factory=dict)
    training: bool = False
    rng: Optional[np.random.Generator] = None

    def parameters(self) -> List[Tensor]:
        return list(named_parameters(self).values())

    def train(self, rng: Optional[np.random.Generator] = None) -> "Model":
        self.training = True
        if rng is not None:
            self.rng = rng
        return self

    def eval(self) -> "Model":
        self.training = False
        return self


# ------------------------------------------------------------- building
def build_model(cfg: ModelConfig, seed: Optional[int] = 0) -> Model:
    """Fresh model with N(0, init_std) weights, unit layernorm gains and zero biases"""
    rng = np.random.default_rng(seed)
    dtype = resolve_dtype(cfg.dtype)
    dm, std = cfg.d_model, cfg.init_std
    span = cfg.relative_span if cfg.relative_bias else None

    def normal(shape):
        return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)

    model = Model(
        cfg=cfg,
        token_embedding=normal((cfg.vocab_size, dm)),
        position_embedding=normal((cfg.max_positions, dm)),
        blocks=[
            EncoderBlock(
                init_attention_params(rng, dm, cfg.heads, dtype, std, span),
                *layernorm_params(dm, dtype),
                *layernorm_params(dm, dtype),
                init_feed_forward(rng, dm, cfg.ffn_mult, dtype, std),
            )
            for _ in range(cfg.layers)
        ],
    )
    if cfg.layernorm_position == "pre":
        model.final_ln_g, model.final_ln_b = layernorm_params(dm, dtype)
    if cfg.architecture == "led":
        model.decoder_position_embedding = normal((cfg.decoder_max_positions, dm))
        model.decoder_blocks = [
            DecoderBlock(
                init_dense_attention(rng, dm, cfg.heads, dtype, std),
                init_dense_attention(rng, dm, cfg.heads, dtype, std),
                *layernorm_params(dm, dtype),
                *layernorm_params(dm, dtype),
                *layernorm_params(dm, dtype),
                init_feed_forward(rng, dm, cfg.ffn_mult, dtype, std),
            )
            for _ in range(cfg.decoder_layers)
        ]
        if cfg.layernorm_position == "pre":
            model.decoder_ln_g, model.decoder_ln_b = layernorm_params(dm, dtype)
    return model


def named_parameters(m: Model) -> Dict[str, Tensor]:
    """Every trainable tensor by stable dotted name, in registration order"""
    params: Dict[str, Tensor] = {
        "token_embedding": m.token_embedding,
        "position_embedding": m.position_embedding,
    }
    for i, block in enumerate(m.blocks):
        params.update(iter_parameters(f"blocks.{i}", block))
    if m.final_ln_g is not None:
        params["final_ln_g"] = m.final_ln_g
        params["final_ln_b"] = m.final_ln_b
    if m.decoder_position_embedding is not None:
        params["decoder_position_embedding"] = m.decoder_position_embedding
    for i, block in enumerate(m.decoder_blocks):
        params.update(iter_parameters(f"decoder_blocks.{i}", block))
    if m.decoder_ln_g is not None:
        params["decoder_ln_g"] = m.decoder_ln_g
        params["decoder_ln_b"] = m.decoder_ln_b
    for tensor_name, tensor in params.items():
        tensor.name = tensor_name
    return params


def count_parameters(cfg: ModelConfig) -> int:
    """
    Closed-form parameter count.

    embeddings (V + P)·d, plus per Longformer layer 7·d² projections (three local,
    three global, one output), the FFN 2·d·f + f + d and two layernorms 4·d; the
    output head is tied to the token table. The LED decoder adds (P_dec)·d and per
    layer 8·d² (self + cross attention), the FFN and three layernorms.
    """
    d = cfg.d_model
    hidden = cfg.ffn_mult * d
    ffn = 2 * d * hidden + hidden + d
    final_ln = 2 * d if cfg.layernorm_position == "pre" else 0
    attention = 7 * d * d
    if cfg.relative_bias:
        attention += cfg.heads * (2 * cfg.relative_span + 1)
    total = (cfg.vocab_size + cfg.max_positions) * d + cfg.layers * (attention + ffn + 4 * d) + final_ln
    if cfg.architecture == "led":
        total += cfg.decoder_max_positions * d
        total += cfg.decoder_layers * (8 * d * d + ffn + 6 * d) + final_ln
    return total


def parameter_checksum(m: Model, names: Optional[Sequence[str]] = None) -> str:
    """sha256 over parameter names and raw bytes, in registration order"""
    digest = hashlib.sha256()
    for name, tensor in named_parameters(m).items():
        if names is not None and name not in names:
            continue
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(tensor.data).tobytes())
    return digest.hexdigest()


# ------------------------------------------------------------- forwards
def _as_ids(tokens: Sequence[int], vocab: int) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError("tokens", ids.shape, detail="expected a 1-D id sequence")
    if ids.size == 0:
        raise DataError("empty token sequence")
    if ids.min() < 0 or ids.max() >= vocab:
        raise DataError(f"token ids outside [0, {vocab})")
    return ids


def _embed(m: Model, ids: np.ndarray, positions: Tensor) -> Tensor:
    if ids.size > positions.shape[0]:
        raise SequenceTooLongError(
            f"sequence of {ids.size} tokens exceeds {positions.shape[0]} positions; extend the position table first"
        )
    x = take_rows(m.token_embedding, ids) + take_rows(positions, np.arange(ids.size))
    return dropout(x, m.cfg.dropout, m.rng, m.training)


def _encode(m: Model, ids: np.ndarray) -> Tensor:
    cfg = m.cfg
    x = _embed(m, ids, m.position_embedding)
    for layer, block in enumerate(m.blocks):
        x = encoder_block(
            x, block, cfg.pattern(layer, ids.size), cfg.attention_impl,
            cfg.layernorm_position, cfg.dropout, m.rng, m.training,
        )
    if m.final_ln_g is not None:
        x = layernorm(x, m.final_ln_g, m.final_ln_b)
    return x


def _require(m: Model, *architectures: str) -> None:
    if m.cfg.architecture not in architectures:
        raise UsageError(f"operation needs a {'/'.join(architectures)} model, got {m.cfg.architecture}")


def charlm_forward(tokens: Sequence[int], m: Model) -> Tensor:
    """Causal next-byte logits [n, V]; logits[i] depends only on tokens[0..i]"""
    _require(m, "charlm")
    return _encode(m, _as_ids(tokens, m.cfg.vocab_size)) @ m.token_embedding.T


def charlm_loss(tokens: Sequence[int], m: Model) -> Tensor:
    """Mean next-byte cross-entropy (nats) of tokens[1:] given tokens[:-1]"""
    ids = _as_ids(tokens, m.cfg.vocab_size)
    if ids.size < 2:
        raise DataError("charlm_loss needs at least two tokens")
    return cross_entropy(charlm_forward(ids[:-1], m), ids[1:])


def mlm_forward(tokens: Sequence[int], m: Model) -> Tensor:
    _require(m, "mlm")
    return _encode(m, _as_ids(tokens, m.cfg.vocab_size)) @ m.token_embedding.T


@dataclass
class MlmLoss:
    loss: Tensor
    selected: np.ndarray
    corrupted: np.ndarray

    @property
    def bpc(self) -> float:
        return bits_per_char(self.loss)


def corrupt_for_mlm(
    ids: np.ndarray, mask_prob: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Select positions with probability mask_prob; 80% become <mask>, 10% a random byte, 10% stay"""
    if not 0.0 < mask_prob < 1.0:
        raise UsageError(f"mask_prob must lie in (0, 1), got {mask_prob}")
    selected = rng.random(ids.size) < mask_prob
    if not selected.any():
        raise DataError(
            f"no position of a {ids.size}-token input was selected at mask_prob={mask_prob}; "
            "use a longer input or a higher mask probability"
        )
    action = rng.random(ids.size)
    corrupted = ids.copy()
    corrupted[selected & (action < MASK_FRACTION)] = MASK_ID
    randomize = selected & (action >= MASK_FRACTION) & (action < MASK_FRACTION + RANDOM_FRACTION)
    corrupted[randomize] = rng.integers(0, BYTE_VOCAB, size=int(randomize.sum()))
    return corrupted, selected


def mlm_loss(
    tokens: Sequence[int],
    m: Model,
    mask_prob: float = 0.15,
    rng_seed: Union[int, np.random.Generator, None] = 0,
) -> MlmLoss:
    """Cross-entropy averaged over the corrupted positions only"""
    ids = _as_ids(tokens, m.cfg.vocab_size)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    corrupted, selected = corrupt_for_mlm(ids, mask_prob, rng)
    logits = mlm_forward(corrupted, m)
    return MlmLoss(cross_entropy(logits, ids, weight=selected.astype(logits.dtype)), selected, corrupted)


# ------------------------------------------------------------------ LED
def decoder_block(
    y: Tensor,
    memory: Tensor,
    block: DecoderBlock,
    layernorm_position: str = "pre",
    dropout_p: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    self_mask = causal_mask(y.shape[0])
    sa, ca = block.self_attn, block.cross_attn
    sublayers = (
        (lambda h: multihead_attention(h, h, sa.w_q, sa.w_k, sa.w_v, sa.w_o, sa.heads, self_mask),
         block.ln1_g, block.ln1_b),
        (lambda h: multihead_attention(h, memory, ca.w_q, ca.w_k, ca.w_v, ca.w_o, ca.heads),
         block.ln2_g, block.ln2_b),
        (lambda h: feed_forward(h, block.ffn), block.ln3_g, block.ln3_b),
    )
    for fn, gamma, beta in sublayers:
        if layernorm_position == "pre":
            y = y + dropout(fn(layernorm(y, gamma, beta)), dropout_p, rng, training)
        else:
            y = layernorm(y + dropout(fn(y), dropout_p, rng, training), gamma, beta)
    return y


def led_encode(m: Model, src: Sequence[int]) -> Tensor:
    """Encoder states [ns, d]; src must begin with the start token, which attends globally"""
    _require(m, "led")
    ids = _as_ids(src, m.cfg.vocab_size)
    if ids[0] != BOS_ID:
        raise MissingStartTokenError(f"led source must begin with the start id {BOS_ID}, got {int(ids[0])}")
    return _encode(m, ids)


def led_decode(m: Model, memory: Tensor, tgt_prefix: Sequence[int]) -> Tensor:
    """Decoder logits [nt, V] over a target prefix, attending all encoder states"""
    _require(m, "led")
    ids = _as_ids(tgt_prefix, m.cfg.vocab_size)
    y = _embed(m, ids, m.decoder_position_embedding)
    for block in m.decoder_blocks:
        y = decoder_block(y, memory, block, m.cfg.layernorm_position, m.cfg.dropout, m.rng, m.training)
    if m.decoder_ln_g is not None:
        y = layernorm(y, m.decoder_ln_g, m.decoder_ln_b)
    return y @ m.token_embedding.T


def led_forward(src: Sequence[int], tgt_prefix: Sequence[int], m: Model) -> Tensor:
    return led_decode(m, led_encode(m, src), tgt_prefix)


def led_loss(src: Sequence[int], tgt: Sequence[int], m: Model) -> Tensor:
    """Teacher-forced cross-entropy: decoder reads <s> + tgt and predicts tgt + </s>"""
    tgt = [int(t) for t in tgt]
    return cross_entropy(led_forward(src, [BOS_ID, *tgt], m), [*tgt, EOS_ID])


# ------------------------------------------------------------- decoding
class Scorer(Protocol):
    def next_log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        """Log-probabilities of the next token after `prefix` (which starts with <s>)"""


class LedScorer:
    """Scores decoder prefixes against one source, encoding it only once"""

    def __init__(self, m: Model, src: Sequence[int]):
        self.model = m
        with no_grad():
            self.memory = led_encode(m, src)

    def next_log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        with no_grad():
            logits = led_decode(self.model, self.memory, prefix).data[-1]
        return log_softmax(logits.astype(np.float64))


def _scorer(m: Union[Model, Scorer], src: Optional[Sequence[int]]) -> Scorer:
    if isinstance(m, Model):
        if src is None:
            raise UsageError("decoding a model needs a source sequence")
        return LedScorer(m, src)
    return m


@dataclass(frozen=True)
class Hypothesis:
    tokens: Tuple[int, ...]
    logprob: float
    finished: bool = False

    def score(self, length_penalty: float) -> float:
        length = len(self.tokens) + (1 if self.finished else 0)
        return self.logprob / max(length, 1) ** length_penalty


def greedy_decode(m: Union[Model, Scorer], src: Optional[Sequence[int]] = None, max_len: int = 64) -> List[int]:
    scorer = _scorer(m, src)
    prefix = [BOS_ID]
    for _ in range(max_len):
        token = int(np.argmax(scorer.next_log_probs(prefix)))
        if token == EOS_ID:
            break
        prefix.append(token)
    return prefix[1:]


def beam_hypotheses(
    scorer: Scorer, beam: int, max_len: int, length_penalty: float = 1.0
) -> List[Hypothesis]:
    """
    Finished hypotheses, best first.

    Candidates are ranked by cumulative log-probability. An end-of-sequence
    candidate is kept only if it ranks inside the beam; search stops once `beam`
    hypotheses have finished or max_len tokens were generated, in which case
    unfinished beams compete as they are.
    """
    if beam < 1:
        raise UsageError(f"beam must be >= 1, got {beam}")
    live = [Hypothesis((), 0.0)]
    finished: List[Hypothesis] = []
    for _ in range(max_len):
        scores = np.stack([h.logprob + scorer.next_log_probs([BOS_ID, *h.tokens]) for h in live])
        vocab = scores.shape[1]
        flat = scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")
        next_live: List[Hypothesis] = []
        for rank, index in enumerate(order):
            value = float(flat[index])
            if not np.isfinite(value) or (rank >= beam and len(next_live) >= beam):
                break
            parent, token = live[index // vocab], int(index % vocab)
            if token == EOS_ID:
                if rank < beam:
                    finished.append(Hypothesis(parent.tokens, value, True))
            elif len(next_live) < beam:
                next_live.append(Hypothesis(parent.tokens + (token,), value))
        live = next_live
        if len(finished) >= beam or not live:
            break
    if len(finished) < beam:
        finished.extend(live)
    return sorted(finished, key=lambda h: (-h.score(length_penalty), h.tokens))


def beam_search(
    m: Union[Model, Scorer],
    src: Optional[Sequence[int]] = None,
    beam: int = 4,
    max_len: int = 64,
    length_penalty: float = 1.0,
) -> List[int]:
    """Best finished hypothesis by logprob / len^length_penalty; <s> and </s> are not returned"""
    if beam < 1:
        raise UsageError(f"beam must be >= 1, got {beam}")
    hypotheses = beam_hypotheses(_scorer(m, src), beam, max_len, length_penalty)
    return list(hypotheses[0].tokens) if hypotheses else []


def source_ids(text: bytes) -> List[int]:
    """LED encoder input for raw bytes: the start id followed by the byte ids"""
    return [BOS_ID, *bytes(text)]


def ids_to_bytes(ids: Sequence[int]) -> bytes:
    """Byte ids back to bytes; reserved ids are dropped"""
    return bytes(int(t) for t in ids if 0 <= int(t) < BYTE_VOCAB)
