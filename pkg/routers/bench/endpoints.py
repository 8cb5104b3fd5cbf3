"""
Benchmark router module
Closed-form memory accounting of the band kernels
"""

from fastapi import APIRouter
from request_processor import request_handling
from request_models import ReqBenchMemory
from response_models import ResBenchMemory
from routers.bench.logic import bench_memory_endpoint

from config_factory import CONF


bench_router = APIRouter()


@bench_router.post(CONF.bench_memory, response_model=ResBenchMemory)
async def bench_memory_ep(req: ReqBenchMemory):
    """
    Score and peak elements per head for one kernel configuration

    Args:
        req: Bench request containing impl, n, half_window, mode, dilation

    Returns:
        Memory account response
    """
    response = await request_handling(
        req,
        ReqBenchMemory,
        ResBenchMemory,
        bench_memory_endpoint,
    )
    return response
