from pydantic import BaseModel, Field
from typing import List, Optional


class TickIn(BaseModel):
    """One observed tick."""
    time: float
    log_price: float


class FilterRequest(BaseModel):
    """Request schema for filtering a tick stream."""
    config: str = Field(..., description="Run configuration text; paths.table must name a built table")
    ticks: List[TickIn]
    probe_every: Optional[float] = None
    ticks_only: bool = False


class TrajectoryEntry(BaseModel):
    time: float
    kind: str
    posterior: List[float]
    volatility_estimate: float


class FilterResponse(BaseModel):
    """Response schema for filtering."""
    states: List[float]
    trajectory: List[TrajectoryEntry]
    warnings: List[str] = []
    request_id: str
    timestamp: str
