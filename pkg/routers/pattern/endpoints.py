"""
Attention pattern router module
Renders band patterns and computes stacked receptive fields
"""

from fastapi import APIRouter
from request_processor import request_handling
from request_models import ReqPatternRender, ReqReceptiveField
from response_models import ResPatternRender, ResReceptiveField
from routers.pattern.logic import receptive_field_endpoint, render_pattern_endpoint

from config_factory import CONF


pattern_router = APIRouter()


@pattern_router.post(CONF.pattern_render, response_model=ResPatternRender)
async def pattern_render_ep(req: ReqPatternRender):
    """
    Count the attended pairs of a band pattern

    Args:
        req: Pattern request containing n, half_window, dilation, mode, global positions

    Returns:
        Nonzero count, density and (for n <= 256) the 0/1 rows
    """
    response = await request_handling(
        req,
        ReqPatternRender,
        ResPatternRender,
        render_pattern_endpoint,
    )
    return response


@pattern_router.post(CONF.pattern_receptive_field, response_model=ResReceptiveField)
async def receptive_field_ep(req: ReqReceptiveField):
    response = await request_handling(
        req,
        ReqReceptiveField,
        ResReceptiveField,
        receptive_field_endpoint,
    )
    return response
