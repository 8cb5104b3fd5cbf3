from pydantic import BaseModel, Field
from typing import List, Optional


class ResPatternRender(BaseModel):
    """Response model for the attention pattern render API"""
    n: int = Field(..., description="Sequence length")
    nonzero_count: int = Field(..., description="Attended (query, key) pairs")
    density: float = Field(..., description="nonzero_count / n^2")
    rows: Optional[List[List[int]]] = Field(None, description="0/1 pattern rows, only for n <= 256")


class ResReceptiveField(BaseModel):
    """Response model for the stacked receptive field API"""
    layers: int = Field(..., description="Number of layers in the stack")
    half_width: int = Field(..., description="Sum of half_window * dilation over layers")
    theoretical_width: int = Field(..., description="Positions reachable by the top layer")
    empirical_width: Optional[int] = Field(None, description="Measured width, when probed")


class ResBenchMemory(BaseModel):
    """Response model for the band kernel memory accounting API"""
    impl: str = Field(..., description="Band kernel implementation")
    n: int = Field(..., description="Sequence length")
    half_window: int = Field(..., description="Half-window of the band")
    score_elements: int = Field(..., description="Score values materialized per head")
    peak_elements: int = Field(..., description="Score values plus band output per head")


class ResGenerate(BaseModel):
    """Response model for encoder-decoder generation"""
    text: str = Field(..., description="Generated text (reserved ids dropped, invalid UTF-8 replaced)")
    token_ids: List[int] = Field(..., description="Generated ids without start and end tokens")
    beam: int = Field(..., description="Beam size used")
