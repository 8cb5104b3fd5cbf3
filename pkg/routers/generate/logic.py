import asyncio
from typing import Any, Dict

from request_models import ReqGenerate
from logging_wrapper import apply_decorator_to_module
from model_store import ModelStore
from longformer_engine.model import beam_search, ids_to_bytes, source_ids

from app_logger import get_logger

logger = get_logger(__name__)


async def generate_endpoint(req: ReqGenerate) -> Dict[str, Any]:
    """Beam-search decode the request text with the served encoder-decoder"""
    model = await ModelStore.get_model()
    src = source_ids(req.text.encode("utf-8"))
    tokens = await asyncio.to_thread(beam_search, model, src, req.beam, req.max_len, req.length_penalty)
    logger.info(f"Generated {len(tokens)} tokens from {len(src)} source ids (beam={req.beam})")
    return {
        "text": ids_to_bytes(tokens).decode("utf-8", errors="replace"),
        "token_ids": tokens,
        "beam": req.beam,
    }


# Apply the decorator to all functions in this module
apply_decorator_to_module(logger)(__name__)
