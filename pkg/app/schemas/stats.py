"""
Pydantic schemas for descriptive log statistics.
"""

from pydantic import BaseModel, Field


class LogSummary(BaseModel):
    """
    Descriptive statistics of an annotation log.

    Group means are over per-user annotation counts. The Welch fields are
    ``None`` when either group has fewer than two users.
    """
    total_annotations: int = Field(..., ge=0)
    total_users: int = Field(..., ge=0)
    top_k: int = Field(..., ge=1)
    top_k_share: float = Field(..., ge=0, le=1)
    logged_in_users: int = Field(..., ge=0)
    anonymous_users: int = Field(..., ge=0)
    mean_annotations_logged_in: float | None = Field(None, ge=0)
    mean_annotations_anonymous: float | None = Field(None, ge=0)
    welch_t: float | None = None
    welch_df: float | None = None
    welch_p: float | None = Field(None, ge=0, le=1)


class SessionSummary(BaseModel):
    """Session counts for a whole log, as dumped by ``sessionize --stats``."""
    gap_minutes: float
    total_users: int
    total_sessions: int
    total_annotations: int
    sessions_per_user: dict[str, int]
    session_size_histogram: dict[int, int]
