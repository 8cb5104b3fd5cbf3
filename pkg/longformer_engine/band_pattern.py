"""
Attention Pattern Geometry

Which (query, key) pairs a sliding-window / dilated / global configuration
attends, how many there are, and how far information can travel through a
stack of such layers. Everything here is pure and safe to call concurrently.

Windows are parameterized by the half-window h (tokens per side, w = 2h) and a
dilation d >= 1 where d = 1 means contiguous.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DataError, RenderGuardError, UsageError


RENDER_LIMIT = 4096

Mode = Literal["bidirectional", "causal"]


def _accept_window(values: Any) -> Any:
    """Translate a full `window` (even) into `half_window`"""
    if not isinstance(values, dict) or "window" not in values:
        return values
    values = dict(values)
    window = values.pop("window")
    if "half_window" in values:
        raise ValueError("give either 'window' or 'half_window', not both")
    if not isinstance(window, int) or window < 0 or window % 2:
        raise ValueError(f"window must be a non-negative even integer, got {window!r}")
    values["half_window"] = window // 2
    return values


class HeadWindow(BaseModel):
    """Window override for one attention head"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    half_window: int = Field(..., ge=0, description="Tokens attended on each side; the full window is 2 * half_window")
    dilation: int = Field(1, ge=1, description="Step between attended keys, 1 = contiguous")

    @model_validator(mode="before")
    @classmethod
    def accept_window(cls, values: Any) -> Any:
        return _accept_window(values)

    @property
    def window(self) -> int:
        return 2 * self.half_window


class LayerPattern(HeadWindow):
    """Window for one layer, optionally overridden per head"""
    heads: Optional[Tuple[HeadWindow, ...]] = Field(None, description="Per-head overrides, one entry per head")


class PatternConfig(BaseModel):
    """One attention pattern: sequence length, window, dilation, mode and global positions"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(..., ge=1, description="Sequence length")
    half_window: int = Field(0, ge=0)
    dilation: int = Field(1, ge=1)
    mode: Mode = "bidirectional"
    global_positions: Tuple[int, ...] = ()
    per_head: Optional[Tuple[HeadWindow, ...]] = None
    per_layer: Optional[Tuple[LayerPattern, ...]] = None

    @model_validator(mode="before")
    @classmethod
    def accept_window(cls, values: Any) -> Any:
        return _accept_window(values)

    @field_validator("global_positions")
    @classmethod
    def sorted_unique(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(sorted(set(int(g) for g in value)))

    @model_validator(mode="after")
    def globals_in_range(self) -> "PatternConfig":
        bad = [g for g in self.global_positions if not 0 <= g < self.n]
        if bad:
            raise ValueError(f"global positions {bad} outside [0, {self.n})")
        return self

    # -------------------------------------------------------------- derived
    @property
    def window(self) -> int:
        return 2 * self.half_window

    @property
    def causal(self) -> bool:
        return self.mode == "causal"

    @property
    def slots(self) -> int:
        return self.half_window + 1 if self.causal else 2 * self.half_window + 1

    def offsets(self) -> np.ndarray:
        """Key offset of every band slot, ascending; slot h is the query itself"""
        upper = 0 if self.causal else self.half_window
        return self.dilation * np.arange(-self.half_window, upper + 1, dtype=np.int64)

    def key_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """Key index per (row, slot) and whether it lies inside [0, n)"""
        keys = np.arange(self.n, dtype=np.int64)[:, None] + self.offsets()[None, :]
        return keys, (keys >= 0) & (keys < self.n)

    # ------------------------------------------------------------ resolving
    def _replace(self, **changes: Any) -> "PatternConfig":
        values = self.model_dump()
        values.update(changes)
        return PatternConfig(**values)

    def with_length(self, n: int) -> "PatternConfig":
        return self._replace(n=n)

    def with_globals(self, global_positions: Iterable[int]) -> "PatternConfig":
        return self._replace(global_positions=tuple(global_positions))

    def for_layer(self, layer: int) -> "PatternConfig":
        if self.per_layer is None:
            return self
        pattern = self.per_layer[layer]
        return self._replace(
            half_window=pattern.half_window,
            dilation=pattern.dilation,
            per_head=pattern.model_dump()["heads"],
            per_layer=None,
        )

    def for_head(self, head: int) -> "PatternConfig":
        if self.per_head is None:
            return self._replace(per_layer=None) if self.per_layer is not None else self
        override = self.per_head[head]
        return self._replace(
            half_window=override.half_window,
            dilation=override.dilation,
            per_head=None,
            per_layer=None,
        )


class ReceptiveFieldReport(BaseModel):
    layers: int
    half_width: int
    theoretical_width: int
    empirical_width: Optional[int] = None

    @model_validator(mode="after")
    def empirical_within_theory(self) -> "ReceptiveFieldReport":
        if self.empirical_width is not None and self.empirical_width > self.theoretical_width:
            raise ValueError(
                f"empirical width {self.empirical_width} exceeds theoretical width {self.theoretical_width}"
            )
        return self


def band_indices(cfg: PatternConfig, i: int) -> List[int]:
    """
    Keys attended by query `i`: the (dilated) window clipped to [0, n), then any
    global positions not already present. A global query attends every key it may
    see (all of them, or [0, i] in causal mode).
    """
    if not 0 <= i < cfg.n:
        raise DataError(f"query index {i} outside [0, {cfg.n})")
    if i in cfg.global_positions:
        return list(range(i + 1 if cfg.causal else cfg.n))
    keys = [i + int(o) for o in cfg.offsets() if 0 <= i + o < cfg.n]
    present = set(keys)
    for g in cfg.global_positions:
        if g not in present and (not cfg.causal or g <= i):
            keys.append(g)
    return keys


def row_counts(cfg: PatternConfig) -> np.ndarray:
    """Number of keys attended by every query row, in closed form"""
    n, h, d = cfg.n, cfg.half_window, cfg.dilation
    rows = np.arange(n, dtype=np.int64)
    counts = np.minimum(h, rows // d) + 1
    if not cfg.causal:
        counts += np.minimum(h, (n - 1 - rows) // d)
    if cfg.global_positions:
        globals_ = np.asarray(cfg.global_positions, dtype=np.int64)
        diff = globals_[None, :] - rows[:, None]
        if cfg.causal:
            in_window = (diff <= 0) & (-diff <= h * d) & (diff % d == 0)
            visible = diff <= 0
        else:
            in_window = (np.abs(diff) <= h * d) & (diff % d == 0)
            visible = np.ones_like(in_window)
        counts += (visible & ~in_window).sum(axis=1)
        counts[globals_] = globals_ + 1 if cfg.causal else n
    return counts


def nonzero_count(cfg: PatternConfig) -> int:
    """Attended (query, key) pairs, global rows and columns counted once"""
    return int(row_counts(cfg).sum())


def receptive_field(
    per_layer: Sequence[Union[HeadWindow, Tuple[int, int]]],
    mode: Mode = "bidirectional",
) -> ReceptiveFieldReport:
    """Theoretical receptive field of a stack: half-width Σ h_ℓ·d_ℓ"""
    if len(per_layer) < 1:
        raise UsageError("receptive_field needs at least one layer")
    half = 0
    for layer in per_layer:
        h, d = (layer.half_window, layer.dilation) if isinstance(layer, HeadWindow) else layer
        half += int(h) * int(d)
    width = half + 1 if mode == "causal" else 2 * half + 1
    return ReceptiveFieldReport(layers=len(per_layer), half_width=half, theoretical_width=width)


def pattern_matrix(cfg: PatternConfig) -> np.ndarray:
    """Dense 0/1 matrix with M[i, j] = 1 iff j ∈ band_indices(cfg, i)"""
    if cfg.n > RENDER_LIMIT:
        raise RenderGuardError(
            f"n={cfg.n} exceeds the dense render limit {RENDER_LIMIT}; use CSV-only mode instead"
        )
    n = cfg.n
    matrix = np.zeros((n, n), dtype=np.uint8)
    keys, valid = cfg.key_grid()
    rows = np.broadcast_to(np.arange(n)[:, None], keys.shape)
    matrix[rows[valid], keys[valid]] = 1
    for g in cfg.global_positions:
        if cfg.causal:
            matrix[g, : g + 1] = 1
            matrix[g:, g] = 1
        else:
            matrix[g, :] = 1
            matrix[:, g] = 1
    return matrix


def _write_csv(path: Path, rows: Iterable[Sequence[int]]) -> None:
    with open(path, "w", encoding="ascii") as f:
        for row in rows:
            f.write(",".join(str(int(v)) for v in row))
            f.write("\n")


def _write_pgm(path: Path, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(f"P2\n{matrix.shape[1]} {matrix.shape[0]}\n1\n")
        for row in matrix:
            f.write(" ".join(str(int(v)) for v in row))
            f.write("\n")


def render_pattern(
    cfg: PatternConfig,
    out: Optional[Union[str, Path]] = None,
    csv_only: bool = False,
) -> Optional[np.ndarray]:
    """
    Render the pattern as a dense 0/1 matrix and optionally write it as .csv or .pgm (P2, maxval 1).

    With csv_only the rows are streamed to a CSV file without building the matrix,
    which lifts the size guard; nothing is returned in that case.
    """
    path = Path(out) if out is not None else None
    if path is not None and path.suffix.lower() not in (".csv", ".pgm"):
        raise UsageError(f"pattern output must end in .csv or .pgm, got '{path.name}'")
    if csv_only:
        if path is None or path.suffix.lower() != ".csv":
            raise UsageError("CSV-only mode needs an output path ending in .csv")
        _write_csv(path, _stream_rows(cfg))
        return None
    matrix = pattern_matrix(cfg)
    if path is not None:
        if path.suffix.lower() == ".csv":
            _write_csv(path, matrix)
        else:
            _write_pgm(path, matrix)
    return matrix


def _stream_rows(cfg: PatternConfig):
    for i in range(cfg.n):
        row = np.zeros(cfg.n, dtype=np.uint8)
        row[band_indices(cfg, i)] = 1
        yield row


def describe(cfg: PatternConfig) -> Dict[str, Any]:
    counts = row_counts(cfg)
    return {
        "n": cfg.n,
        "half_window": cfg.half_window,
        "dilation": cfg.dilation,
        "mode": cfg.mode,
        "global_positions": list(cfg.global_positions),
        "nonzero_count": int(counts.sum()),
        "density": float(counts.sum()) / float(cfg.n * cfg.n),
    }
