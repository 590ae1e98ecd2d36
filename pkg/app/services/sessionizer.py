"""
Session splitting.

A session is a maximal run of one volunteer's annotations in which every gap
between consecutive annotations is shorter than the gap threshold (30 minutes
by default). A gap of exactly the threshold starts a new session.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from datetime import datetime

from app.core.errors import SessionOrderError
from app.schemas.config import SessionizerConfig
from app.schemas.stats import SessionSummary
from app.services.ingest import AnnotationEvent, ValidatedLog


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Session:
    """One session of one user; ``events`` is non-empty and time-ordered."""
    user_id: str
    session_index: int
    events: tuple[AnnotationEvent, ...]

    @property
    def start(self) -> datetime:
        return self.events[0].timestamp

    @property
    def end(self) -> datetime:
        return self.events[-1].timestamp

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class SessionStats:
    """
    Per-user session aggregates.

    ``mean_gaps`` holds the mean inter-annotation gap of each session in
    seconds, or ``None`` for single-annotation sessions.
    """
    user_id: str | None
    session_count: int
    annotation_counts: list[int]
    mean_gaps: list[float | None]


def sessionize(
    user_events: list[AnnotationEvent] | tuple[AnnotationEvent, ...],
    config: SessionizerConfig | None = None,
) -> list[Session]:
    """
    Split one user's time-ordered events into sessions.

    Args:
        user_events: Events of a single user, sorted non-decreasing by time.
        config: Gap rule; defaults to 30 minutes.

    Returns:
        list: Sessions in time order with session_index 0, 1, 2, ...

    Raises:
        SessionOrderError: If events are unsorted or belong to several users.
    """
    config = config or SessionizerConfig()
    if not user_events:
        return []

    user_id = user_events[0].user_id
    threshold = config.gap_threshold

    sessions: list[Session] = []
    current: list[AnnotationEvent] = [user_events[0]]
    for previous, event in zip(user_events, user_events[1:]):
        if event.user_id != user_id:
            raise SessionOrderError(
                f"mixed user ids in one sequence: {user_id!r} and {event.user_id!r}"
            )
        gap = event.timestamp - previous.timestamp
        if gap.total_seconds() < 0:
            raise SessionOrderError(
                f"events of user {user_id!r} are not sorted by timestamp"
            )
        if gap >= threshold:
            sessions.append(Session(user_id, len(sessions), tuple(current)))
            current = []
        current.append(event)
    sessions.append(Session(user_id, len(sessions), tuple(current)))

    return sessions


def sessionize_log(log: ValidatedLog, config: SessionizerConfig | None = None) -> dict[str, list[Session]]:
    """Sessionize every user of a validated log, keyed by user id."""
    config = config or SessionizerConfig()
    result = {user_id: sessionize(events, config) for user_id, events in log.users.items()}
    total = sum(len(sessions) for sessions in result.values())
    logger.info(f"Built {total} sessions for {len(result)} users")
    return result


def session_stats(sessions: list[Session]) -> SessionStats:
    """
    Aggregate counts and mean gaps per session for one user.

    Args:
        sessions: Sessions of a single user ordered by session_index.

    Returns:
        SessionStats: Per-session annotation counts and mean gaps (seconds).
    """
    counts: list[int] = []
    mean_gaps: list[float | None] = []
    for session in sessions:
        counts.append(len(session))
        if len(session) < 2:
            mean_gaps.append(None)
        else:
            span = (session.end - session.start).total_seconds()
            mean_gaps.append(span / (len(session) - 1))

    return SessionStats(
        user_id=sessions[0].user_id if sessions else None,
        session_count=len(sessions),
        annotation_counts=counts,
        mean_gaps=mean_gaps,
    )


def summarize_sessions(
    sessions_by_user: dict[str, list[Session]],
    config: SessionizerConfig,
) -> SessionSummary:
    """Sessions per user and the distribution of session sizes."""
    histogram: Counter[int] = Counter()
    per_user: dict[str, int] = {}
    annotations = 0
    for user_id, sessions in sessions_by_user.items():
        per_user[user_id] = len(sessions)
        for session in sessions:
            histogram[len(session)] += 1
            annotations += len(session)

    return SessionSummary(
        gap_minutes=config.gap_threshold.total_seconds() / 60.0,
        total_users=len(per_user),
        total_sessions=sum(per_user.values()),
        total_annotations=annotations,
        sessions_per_user=per_user,
        session_size_histogram=dict(sorted(histogram.items())),
    )
