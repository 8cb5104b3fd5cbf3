"""
Staged training schedules and the named attention-window presets.

Each phase doubles the sequence length and every window and halves the learning
rate of the phase before it, unless an override pins a field. Later phases keep
doubling from the overridden value.
"""

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel

from .band_pattern import HeadWindow, LayerPattern
from .config import ModelConfig, PhaseBase, PhaseOverride, ScheduleSpec
from .errors import ConfigError
from .optim import LrSchedule, warmup_steps_for

FULL_SCALE_LR = 2.5e-4
FULL_SCALE_SEQLEN = 2048
FULL_SCALE_SEQLEN_CAP = 23040
FULL_SCALE_WINDOW_RANGE = (32, 8192)
FULL_SCALE_BATCHES = (32, 32, 16, 16, 16)
FULL_SCALE_STEPS = {
    "small": (430_000, 50_000, 50_000, 35_000, 5_000),
    "large": (350_000, 25_000, 10_000, 5_000, 5_000),
}
FULL_SCALE_DROPOUT = {"small": 0.2, "large": 0.4}
DILATED_HEADS = 2


@dataclass(frozen=True)
class Phase:
    number: int
    seqlen: int
    half_windows: Tuple[int, ...]
    lr: float
    steps: int
    batch: int

    @property
    def windows(self) -> Tuple[int, ...]:
        return tuple(2 * h for h in self.half_windows)


@dataclass(frozen=True)
class PhaseSchedule:
    phases: Tuple[Phase, ...]
    warmup_fraction: float = 0.1
    warmup_cap: int = 10_000
    grad_clip: float = 0.25
    lr_schedule: LrSchedule = "constant"

    def warmup_steps(self, phase: Phase) -> int:
        return warmup_steps_for(phase.steps, self.warmup_fraction, self.warmup_cap)

    def __len__(self) -> int:
        return len(self.phases)

    def __iter__(self):
        return iter(self.phases)


def make_phase_schedule(
    base: PhaseBase,
    k: int,
    overrides: Optional[Dict[int, PhaseOverride]] = None,
    **options,
) -> PhaseSchedule:
    """
    k phases derived from `base`: seqlen and windows ×2, lr ÷2 per phase.

    `overrides` maps a 1-based phase number to replacement fields. A seqlen that
    falls below the previous phase's is rejected.
    """
    if k < 1:
        raise ConfigError(f"a schedule needs at least one phase, got {k}")
    overrides = overrides or {}
    unknown = sorted(p for p in overrides if not 1 <= p <= k)
    if unknown:
        raise ConfigError(f"overrides for phases {unknown} outside 1..{k}")

    phases: List[Phase] = []
    current = Phase(1, base.seqlen, tuple(base.half_windows), base.lr, base.steps, base.batch)
    for number in range(1, k + 1):
        if number > 1:
            previous = phases[-1]
            current = replace(
                previous,
                number=number,
                seqlen=previous.seqlen * 2,
                half_windows=tuple(h * 2 for h in previous.half_windows),
                lr=previous.lr / 2,
            )
        override = overrides.get(number)
        if override is not None:
            changes = override.model_dump(exclude_none=True)
            if "half_windows" in changes:
                changes["half_windows"] = tuple(changes["half_windows"])
            current = replace(current, **changes)
        if phases and current.seqlen < phases[-1].seqlen:
            raise ConfigError(
                f"phase {number} seqlen {current.seqlen} is shorter than phase {number - 1} "
                f"seqlen {phases[-1].seqlen}"
            )
        if len(current.half_windows) != len(base.half_windows):
            raise ConfigError(f"phase {number} has {len(current.half_windows)} windows, expected {len(base.half_windows)}")
        phases.append(current)
    return PhaseSchedule(tuple(phases), **options)


def schedule_from_spec(spec: ScheduleSpec) -> PhaseSchedule:
    return make_phase_schedule(
        spec.base,
        spec.phases,
        spec.overrides,
        warmup_fraction=spec.warmup_fraction,
        warmup_cap=spec.warmup_cap,
        grad_clip=spec.grad_clip,
        lr_schedule=spec.lr_schedule,
    )


# ------------------------------------------------------------- windows
def round_even(value: float) -> int:
    return int(round(value / 2.0)) * 2


def geometric_windows(first: int, last: int, layers: int) -> Tuple[int, ...]:
    """Full windows growing geometrically from `first` to `last`, rounded to the nearest even"""
    if layers == 1:
        return (round_even(first),)
    ratio = last / first
    return tuple(round_even(first * ratio ** (i / (layers - 1))) for i in range(layers))


def _dilated_layer(half_window: int, dilation: int, heads: int) -> LayerPattern:
    if dilation == 1:
        return LayerPattern(half_window=half_window)
    overrides = tuple(
        HeadWindow(half_window=half_window, dilation=dilation if head < DILATED_HEADS else 1)
        for head in range(heads)
    )
    return LayerPattern(half_window=half_window, heads=overrides)


def dilation_by_layer(layers: int) -> Tuple[int, ...]:
    """
    Upper-half dilation mapping on two heads.

    The lower half of the stack is contiguous; the upper half is split in three
    equal groups with dilation 2, 3 and 4.
    """
    dilations = [1] * layers
    start = layers // 2
    group = max((layers - start) // 3, 1)
    for index in range(start, layers):
        dilations[index] = min(2 + (index - start) // group, 4)
    return tuple(dilations)


def patterns_from_windows(
    windows: Sequence[int], heads: int, dilations: Optional[Sequence[int]] = None
) -> Tuple[LayerPattern, ...]:
    dilations = dilations or [1] * len(windows)
    return tuple(_dilated_layer(w // 2, d, heads) for w, d in zip(windows, dilations))


class AblationPreset(BaseModel):
    name: str
    layers: int
    heads: int
    patterns: Tuple[LayerPattern, ...]
    description: str

    def windows(self) -> Tuple[int, ...]:
        return tuple(p.window for p in self.patterns)

    def dilated_heads(self) -> Tuple[int, ...]:
        """Heads with dilation > 1, per layer"""
        return tuple(
            sum(1 for h in p.heads if h.dilation > 1) if p.heads is not None else int(p.dilation > 1)
            for p in self.patterns
        )

    def apply(self, cfg: ModelConfig) -> ModelConfig:
        if cfg.layers != self.layers or cfg.heads != self.heads:
            raise ConfigError(
                f"preset {self.name} is for {self.layers} layers x {self.heads} heads, "
                f"model has {cfg.layers} x {cfg.heads}"
            )
        return cfg.model_copy(update={"patterns": self.patterns})


def _preset_family(suffix: str, layers: int, heads: int, low: int, high: int, fixed: int) -> List[AblationPreset]:
    increasing = geometric_windows(low, high, layers)
    return [
        AblationPreset(
            name=f"increasing{suffix}", layers=layers, heads=heads,
            patterns=patterns_from_windows(increasing, heads),
            description=f"windows grow from {low} (bottom) to {high} (top)",
        ),
        AblationPreset(
            name=f"fixed{suffix}", layers=layers, heads=heads,
            patterns=patterns_from_windows([fixed] * layers, heads),
            description=f"every layer uses window {fixed}",
        ),
        AblationPreset(
            name=f"decreasing{suffix}", layers=layers, heads=heads,
            patterns=patterns_from_windows(increasing[::-1], heads),
            description=f"windows shrink from {high} (bottom) to {low} (top)",
        ),
        AblationPreset(
            name=f"dilation{suffix}", layers=layers, heads=heads,
            patterns=patterns_from_windows(increasing, heads, dilation_by_layer(layers)),
            description=f"increasing windows, dilation on {DILATED_HEADS} heads of the upper layers",
        ),
    ]


def ablation_presets() -> Dict[str, AblationPreset]:
    """Window-layout ablations: 12-layer 8-head layouts and 4-layer 4-head `_desk` versions"""
    presets = _preset_family("", 12, 8, 32, 512, 230)
    presets += _preset_family("_desk", 4, 4, 4, 64, 28)
    return {p.name: p for p in presets}


# ------------------------------------------------------------ full scale
def full_scale_model_config(size: str = "small") -> ModelConfig:
    """Full-scale char-LM layout (configuration only): windows 32 to 8192, dilation on 2 heads upward"""
    if size not in FULL_SCALE_STEPS:
        raise ConfigError(f"unknown model size '{size}', expected small or large")
    layers, d_model = (12, 512) if size == "small" else (30, 512)
    windows = geometric_windows(*FULL_SCALE_WINDOW_RANGE, layers)
    return ModelConfig(
        architecture="charlm",
        layers=layers,
        heads=8,
        d_model=d_model,
        max_positions=FULL_SCALE_SEQLEN_CAP,
        patterns=patterns_from_windows(windows, 8, dilation_by_layer(layers)),
        dropout=FULL_SCALE_DROPOUT[size],
    )


def full_scale_schedule(size: str = "small", layers: Optional[int] = None) -> PhaseSchedule:
    """Five phases from seqlen 2048 and lr 2.5e-4, the last capped at 23,040 tokens"""
    if size not in FULL_SCALE_STEPS:
        raise ConfigError(f"unknown model size '{size}', expected small or large")
    layers = layers or (12 if size == "small" else 30)
    windows = geometric_windows(*FULL_SCALE_WINDOW_RANGE, layers)
    steps = FULL_SCALE_STEPS[size]
    base = PhaseBase(seqlen=FULL_SCALE_SEQLEN, windows=list(windows), lr=FULL_SCALE_LR, steps=steps[0], batch=FULL_SCALE_BATCHES[0])
    overrides = {
        number: PhaseOverride(steps=steps[number - 1], batch=FULL_SCALE_BATCHES[number - 1])
        for number in range(2, len(steps) + 1)
    }
    overrides[len(steps)] = overrides[len(steps)].model_copy(update={"seqlen": FULL_SCALE_SEQLEN_CAP})
    return make_phase_schedule(base, len(steps), overrides)


def total_steps(schedule: PhaseSchedule) -> int:
    return sum(p.steps for p in schedule)