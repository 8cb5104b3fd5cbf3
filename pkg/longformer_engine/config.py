"""
JSON configuration documents.

Field names mirror the model and schedule types; unknown keys are rejected
everywhere so a stale config never silently changes meaning.
"""

import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .band_pattern import HeadWindow, LayerPattern, Mode, PatternConfig
from .errors import ConfigError, DataError, UsageError


BYTE_VOCAB = 256
MASK_ID = 256
PAD_ID = 257
BOS_ID = 258
EOS_ID = 259
VOCAB_SIZE = 260

Architecture = Literal["charlm", "mlm", "led"]
AttentionImpl = Literal["loop", "chunk", "dense"]

T = TypeVar("T", bound=BaseModel)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _half_windows_from_windows(values: Any) -> Any:
    if not isinstance(values, dict) or "windows" not in values:
        return values
    values = dict(values)
    windows = values.pop("windows")
    if "half_windows" in values:
        raise ValueError("give either 'windows' or 'half_windows', not both")
    if windows is not None:
        odd = [w for w in windows if int(w) < 0 or int(w) % 2]
        if odd:
            raise ValueError(f"windows must be non-negative even integers, got {odd}")
        windows = [int(w) // 2 for w in windows]
    values["half_windows"] = windows
    return values


class ModelConfig(StrictModel):
    """Architecture and attention layout of one model"""
    architecture: Architecture = "charlm"
    layers: int = Field(2, ge=1, description="Encoder (or LM) layers")
    heads: int = Field(2, ge=1)
    d_model: int = Field(64, ge=1)
    vocab_size: int = Field(VOCAB_SIZE, ge=VOCAB_SIZE, description="256 bytes + 4 reserved ids")
    max_positions: int = Field(512, ge=1, description="Rows of the learned position table")
    half_window: int = Field(8, ge=0, description="Window used by layers without an explicit pattern")
    dilation: int = Field(1, ge=1)
    patterns: Tuple[LayerPattern, ...] = Field((), description="One pattern per layer, overriding half_window/dilation")
    global_positions: Tuple[int, ...] = ()
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    ffn_mult: int = Field(4, ge=1)
    relative_bias: bool = False
    relative_span: int = Field(64, ge=0, description="Slots beyond ±span share the edge bias")
    layernorm_position: Literal["pre", "post"] = "pre"
    decoder_layers: int = Field(0, ge=0)
    decoder_max_positions: int = Field(256, ge=1)
    attention_impl: AttentionImpl = "loop"
    dtype: Literal["float32", "float64"] = "float32"
    init_std: float = Field(0.02, gt=0.0)
    position_origin: Optional[int] = Field(None, ge=1, description="Position rows before the last copy extension")

    @model_validator(mode="before")
    @classmethod
    def accept_window(cls, values: Any) -> Any:
        if isinstance(values, dict) and "window" in values:
            values = dict(values)
            window = values.pop("window")
            if not isinstance(window, int) or window < 0 or window % 2:
                raise ValueError(f"window must be a non-negative even integer, got {window!r}")
            values["half_window"] = window // 2
        return values

    @model_validator(mode="after")
    def consistent(self) -> "ModelConfig":
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if self.patterns and len(self.patterns) != self.layers:
            raise ValueError(f"{len(self.patterns)} layer patterns given for {self.layers} layers")
        for index, pattern in enumerate(self.patterns):
            if pattern.heads is not None and len(pattern.heads) != self.heads:
                raise ValueError(f"layer {index} has {len(pattern.heads)} head overrides for {self.heads} heads")
        if self.architecture == "led" and self.decoder_layers < 1:
            raise ValueError("led needs decoder_layers >= 1")
        if self.architecture != "led" and self.decoder_layers:
            raise ValueError(f"decoder_layers only applies to led, not {self.architecture}")
        if self.position_origin is not None and self.position_origin > self.max_positions:
            raise ValueError("position_origin exceeds max_positions")
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    @property
    def mode(self) -> Mode:
        return "causal" if self.architecture == "charlm" else "bidirectional"

    @property
    def encoder_globals(self) -> Tuple[int, ...]:
        if self.architecture == "led":
            return tuple(sorted({0, *self.global_positions}))
        return self.global_positions

    def layer_pattern(self, layer: int) -> LayerPattern:
        if self.patterns:
            return self.patterns[layer]
        return LayerPattern(half_window=self.half_window, dilation=self.dilation)

    def half_windows(self) -> Tuple[int, ...]:
        return tuple(self.layer_pattern(i).half_window for i in range(self.layers))

    def pattern(self, layer: int, n: int) -> PatternConfig:
        """Resolved attention pattern of `layer` for a length-n input"""
        pattern = self.layer_pattern(layer)
        try:
            return PatternConfig(
                n=n,
                half_window=pattern.half_window,
                dilation=pattern.dilation,
                mode=self.mode,
                global_positions=self.encoder_globals,
                per_head=pattern.heads,
            )
        except ValidationError as exc:
            raise DataError(f"layer {layer}: {exc}") from exc

    def with_half_windows(self, half_windows: Tuple[int, ...]) -> "ModelConfig":
        """Same per-layer dilations and head overrides, new base half-windows"""
        if len(half_windows) != self.layers:
            raise ConfigError(f"{len(half_windows)} half-windows given for {self.layers} layers")
        patterns = []
        for i, half in enumerate(half_windows):
            current = self.layer_pattern(i)
            heads = None
            if current.heads is not None:
                heads = tuple(HeadWindow(half_window=int(half), dilation=h.dilation) for h in current.heads)
            patterns.append(LayerPattern(half_window=int(half), dilation=current.dilation, heads=heads))
        return self.model_copy(update={"patterns": tuple(patterns)})


class OptimizerConfig(StrictModel):
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)


class PhaseBase(StrictModel):
    """Phase-1 values every later phase is derived from"""
    seqlen: int = Field(..., ge=1)
    half_windows: Tuple[int, ...] = Field(..., description="Per-layer half-windows (or `windows`, full and even)")
    lr: float = Field(..., gt=0.0)
    steps: int = Field(..., ge=1)
    batch: int = Field(1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def accept_windows(cls, values: Any) -> Any:
        return _half_windows_from_windows(values)


class PhaseOverride(StrictModel):
    seqlen: Optional[int] = Field(None, ge=1)
    half_windows: Optional[Tuple[int, ...]] = None
    lr: Optional[float] = Field(None, gt=0.0)
    steps: Optional[int] = Field(None, ge=1)
    batch: Optional[int] = Field(None, ge=1)

    @model_validator(mode="before")
    @classmethod
    def accept_windows(cls, values: Any) -> Any:
        return _half_windows_from_windows(values)


class ScheduleSpec(StrictModel):
    base: PhaseBase
    phases: int = Field(1, ge=1)
    overrides: Dict[int, PhaseOverride] = Field(default_factory=dict, description="Keyed by 1-based phase number")
    warmup_fraction: float = Field(0.1, ge=0.0, le=1.0)
    warmup_cap: int = Field(10_000, ge=0)
    grad_clip: float = Field(0.25, gt=0.0)
    lr_schedule: Literal["constant", "cosine", "polynomial"] = "constant"

    @field_validator("overrides")
    @classmethod
    def phases_exist(cls, value: Dict[int, PhaseOverride]) -> Dict[int, PhaseOverride]:
        bad = [k for k in value if k < 1]
        if bad:
            raise ValueError(f"phase numbers start at 1, got {bad}")
        return value


class CharLmTrainConfig(StrictModel):
    model: ModelConfig
    schedule: ScheduleSpec
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seed: int = 0
    log_every: int = Field(50, ge=1)
    metrics_csv: Optional[str] = None
    mask_prob: float = Field(0.15, gt=0.0, lt=1.0, description="Only used by mlm models")


class CopyTaskConfig(StrictModel):
    train_size: int = Field(2000, ge=1)
    eval_size: int = Field(200, ge=1)
    src_len: int = Field(64, ge=2, description="Source length including the start token")
    alphabet: str = Field("abcdefghij", min_length=1)


class LedTrainConfig(StrictModel):
    model: ModelConfig
    task: CopyTaskConfig = Field(default_factory=CopyTaskConfig)
    steps: int = Field(2000, ge=1)
    batch: int = Field(8, ge=1)
    lr: float = Field(1e-3, gt=0.0)
    warmup_fraction: float = Field(0.1, ge=0.0, le=1.0)
    grad_clip: float = Field(0.25, gt=0.0)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    seed: int = 0
    log_every: int = Field(50, ge=1)
    metrics_csv: Optional[str] = None
    beam: int = Field(1, ge=1)

    @model_validator(mode="after")
    def is_led(self) -> "LedTrainConfig":
        if self.model.architecture != "led":
            raise ValueError(f"train-led needs an led model, got {self.model.architecture}")
        return self


class GradCheckConfig(StrictModel):
    model: ModelConfig
    target: Literal["layer", "model"] = "model"
    seq_len: int = Field(16, ge=2)
    samples: int = Field(32, ge=1)
    eps: float = Field(1e-5, gt=0.0)
    seed: int = 0


def load_json(path: Union[str, Path], model_cls: Type[T]) -> T:
    """Read and validate a JSON config; every failure is a ConfigError naming the file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config '{path}': {exc}") from exc
    try:
        return model_cls.model_validate(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_model_config(document: Union[str, bytes, Dict[str, Any]]) -> ModelConfig:
    try:
        if isinstance(document, dict):
            return ModelConfig.model_validate(document)
        return ModelConfig.model_validate_json(document)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
