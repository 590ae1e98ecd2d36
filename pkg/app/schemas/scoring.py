"""
Pydantic schemas for the scoring API.
"""

from datetime import datetime

from pydantic import BaseModel, Field


class FeatureVector(BaseModel):
    """Raw (unnormalized) model input for one annotation."""
    deltas: list[float] = Field(..., min_length=1, description="M time deltas in seconds, oldest first")
    engineered: list[float] = Field(..., min_length=7, max_length=7, description="Features f1..f7")


class ScoreRequest(BaseModel):
    """Batch of feature vectors to score."""
    items: list[FeatureVector] = Field(..., min_length=1)


class ScoreResponse(BaseModel):
    """Probabilities that more than gamma annotations follow in the session."""
    scores: list[float]


class HistoryEvent(BaseModel):
    """One annotation of a volunteer's history."""
    timestamp: datetime
    logged_in: bool = True
    annotation_id: str | None = None


class HistoryRequest(BaseModel):
    """A single volunteer's raw history; the latest annotation is scored."""
    user_id: str = Field(..., min_length=1)
    events: list[HistoryEvent] = Field(..., min_length=1)
    gap_minutes: float = Field(30.0, gt=0)


class HistoryResponse(BaseModel):
    """Score for the latest annotation of a history, with its features."""
    user_id: str
    score: float
    session_index: int
    position: int
    deltas: list[float]
    engineered: list[float]


class ModelInfo(BaseModel):
    """Metadata of the served model."""
    variant: str
    M: int
    gamma: int | None
    emit_policy: str | None
    schema_version: int
