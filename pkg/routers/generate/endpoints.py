"""
Generation router module
Serves beam-search decoding from the cached encoder-decoder checkpoint
"""

from fastapi import APIRouter
from request_processor import request_handling
from request_models import ReqGenerate
from response_models import ResGenerate
from routers.generate.logic import generate_endpoint

from config_factory import CONF


generate_router = APIRouter()


@generate_router.post(CONF.generate, response_model=ResGenerate)
async def generate_ep(req: ReqGenerate):
    response = await request_handling(
        req,
        ReqGenerate,
        ResGenerate,
        generate_endpoint,
    )
    return response
