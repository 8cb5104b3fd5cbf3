from pydantic import BaseModel, Field
from typing import List, Literal


class ReqPatternRender(BaseModel):
    """Request model for the attention pattern render API"""
    n: int = Field(..., ge=1, le=4096, description="Sequence length")
    half_window: int = Field(0, ge=0, description="Tokens attended on each side of the query")
    dilation: int = Field(1, ge=1, description="Step between attended keys, 1 = contiguous")
    mode: Literal["bidirectional", "causal"] = Field("bidirectional", description="Attention direction")
    global_positions: List[int] = Field(default_factory=list, description="Positions with symmetric global attention")
    include_rows: bool = Field(True, description="Return the 0/1 pattern rows (only for n <= 256)")


class ReqLayerWindow(BaseModel):
    half_window: int = Field(..., ge=0, description="Half-window of the layer")
    dilation: int = Field(1, ge=1, description="Dilation of the layer")


class ReqReceptiveField(BaseModel):
    """Request model for the stacked receptive field API"""
    layers: List[ReqLayerWindow] = Field(..., min_length=1, description="Window of every layer, bottom first")
    mode: Literal["bidirectional", "causal"] = Field("bidirectional", description="Attention direction")


class ReqBenchMemory(BaseModel):
    """Request model for the band kernel memory accounting API"""
    impl: Literal["loop", "chunk", "dense"] = Field(..., description="Band kernel implementation")
    n: int = Field(..., ge=1, description="Sequence length")
    half_window: int = Field(..., ge=0, description="Half-window of the band")
    mode: Literal["bidirectional", "causal"] = Field("bidirectional", description="Attention direction")
    dilation: int = Field(1, ge=1, description="Dilation (chunk supports only 1)")


class ReqGenerate(BaseModel):
    """Request model for encoder-decoder generation from the served checkpoint"""
    text: str = Field(..., description="Source text, encoded as UTF-8 bytes")
    beam: int = Field(4, ge=1, description="Beam size, 1 = greedy")
    max_len: int = Field(64, ge=1, description="Maximum number of generated tokens")
    length_penalty: float = Field(1.0, ge=0.0, description="Exponent of the length normalization")
