from typing import Any, Dict

from pydantic import ValidationError

from request_models import ReqPatternRender, ReqReceptiveField
from logging_wrapper import apply_decorator_to_module
from longformer_engine.band_pattern import PatternConfig, describe, pattern_matrix, receptive_field
from longformer_engine.errors import ConfigError

from app_logger import get_logger

logger = get_logger(__name__)

ROWS_LIMIT = 256


async def render_pattern_endpoint(req: ReqPatternRender) -> Dict[str, Any]:
    """Nonzero count and density of a pattern, plus its rows for small n"""
    try:
        cfg = PatternConfig(
            n=req.n,
            half_window=req.half_window,
            dilation=req.dilation,
            mode=req.mode,
            global_positions=tuple(req.global_positions),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    summary = describe(cfg)
    rows = None
    if req.include_rows and cfg.n <= ROWS_LIMIT:
        rows = pattern_matrix(cfg).astype(int).tolist()
    return {
        "n": cfg.n,
        "nonzero_count": summary["nonzero_count"],
        "density": summary["density"],
        "rows": rows,
    }


async def receptive_field_endpoint(req: ReqReceptiveField) -> Dict[str, Any]:
    report = receptive_field([(layer.half_window, layer.dilation) for layer in req.layers], req.mode)
    return report.model_dump()


# Apply the decorator to all functions in this module
apply_decorator_to_module(logger)(__name__)
