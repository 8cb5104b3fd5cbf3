"""
Position-table extension by copy-tiling, and which parameters stay trainable afterwards.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Union

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .model import Model, named_parameters
from .tensor import Tensor

logger = logging.getLogger(__name__)


class FreezeMode(str, Enum):
    ALL_TRAINABLE = "all_trainable"
    ONLY_NEW_POSITIONS = "only_new_positions"
    ONLY_POSITIONS = "only_positions"


@dataclass(frozen=True)
class FreezePolicy:
    mode: FreezeMode = FreezeMode.ALL_TRAINABLE

    @classmethod
    def parse(cls, mode: Union[str, FreezeMode, "FreezePolicy"]) -> "FreezePolicy":
        if isinstance(mode, FreezePolicy):
            return mode
        try:
            return cls(FreezeMode(mode))
        except ValueError as exc:
            choices = ", ".join(m.value for m in FreezeMode)
            raise ConfigError(f"unknown freeze mode '{mode}', expected one of: {choices}") from exc


def copy_extend_positions(E: Tensor, target: int) -> Tensor:
    """E'[i] = E[i mod m] for i < target; a new leaf, E itself is untouched"""
    if E.ndim != 2 or E.shape[0] < 1:
        raise DataError(f"position table must be [m, d] with m >= 1, got {E.shape}")
    rows = E.shape[0]
    if target < rows:
        raise DataError(f"cannot extend {rows} positions to {target}; truncation is not an extension")
    return Tensor(E.data[np.arange(target) % rows], requires_grad=E.requires_grad)


def extend_model_positions(m: Model, target: int) -> Model:
    """
    Replace the (encoder) position table by its tiled extension in place.

    The previous row count becomes `position_origin`, so only_new_positions can
    tell copied rows from original ones after a checkpoint round trip. An active
    freeze carries over: existing rows keep their mask and the added rows are
    trainable exactly when some row of the old table was.
    """
    origin = m.position_embedding.shape[0]
    m.position_embedding = copy_extend_positions(m.position_embedding, target)
    m.cfg = m.cfg.model_copy(update={"max_positions": target, "position_origin": origin})
    old = m.masks.get("position_embedding")
    if old is not None:
        grown = np.empty(m.position_embedding.shape, dtype=bool)
        grown[:origin] = old
        grown[origin:] = old.any()
        m.masks["position_embedding"] = grown
    logger.info("Extended position table from %d to %d rows (%d copies)", origin, target, -(-target // origin))
    return m


def apply_freeze(m: Model, policy: Union[FreezePolicy, str]) -> Dict[str, np.ndarray]:
    """
    Build and attach boolean training masks, one per parameter, True = trainable.

    only_new_positions leaves rows [position_origin, max_positions) of the position
    table trainable; only_positions the whole table; all_trainable everything.
    """
    policy = FreezePolicy.parse(policy)
    params = named_parameters(m)
    if policy.mode is FreezeMode.ALL_TRAINABLE:
        masks = {name: np.ones(t.shape, dtype=bool) for name, t in params.items()}
    else:
        masks = {name: np.zeros(t.shape, dtype=bool) for name, t in params.items()}
        if policy.mode is FreezeMode.ONLY_POSITIONS:
            masks["position_embedding"][:] = True
        else:
            origin = m.cfg.position_origin
            if origin is None:
                raise UsageError("only_new_positions needs an extended position table (no position_origin recorded)")
            masks["position_embedding"][origin:] = True
    # in place, so optimizers holding m.masks see the new policy
    m.masks.clear()
    m.masks.update(masks)
    logger.info("Freeze policy %s: %d trainable entries", policy.mode.value, trainable_count(masks))
    return masks


def trainable_count(masks: Dict[str, np.ndarray]) -> int:
    return sum(int(mask.sum()) for mask in masks.values())
