from typing import Any, Dict

from request_models import ReqBenchMemory
from logging_wrapper import apply_decorator_to_module
from longformer_engine.bench import count_memory

from app_logger import get_logger

logger = get_logger(__name__)


async def bench_memory_endpoint(req: ReqBenchMemory) -> Dict[str, Any]:
    account = count_memory(req.impl, req.n, req.half_window, req.mode, req.dilation)
    return {
        "impl": account.impl,
        "n": req.n,
        "half_window": req.half_window,
        "score_elements": account.score_elements,
        "peak_elements": account.peak_elements,
    }


# Apply the decorator to all functions in this module
apply_decorator_to_module(logger)(__name__)
