"""
Annotation log ingestion.

Parses the native event-log CSV and Zooniverse classification exports into
``AnnotationEvent`` records, groups and de-duplicates them per user, and
computes the descriptive statistics of a log (contribution skew and the
logged-in vs anonymous Welch t-test).
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable

import numpy as np
import pandas as pd
from scipy import special

from app.core.errors import EmptyLogError, InputError, ParseError, SchemaError
from app.schemas.stats import LogSummary


logger = logging.getLogger(__name__)


NATIVE_COLUMNS = ["user_id", "logged_in", "timestamp", "annotation_id"]
ZOONIVERSE_REQUIRED_COLUMNS = ["user_name", "user_id", "created_at"]
ANONYMOUS_PREFIX = "not-logged-in-"
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


@dataclass(frozen=True, order=False)
class AnnotationEvent:
    """
    One timestamped annotation by one (possibly anonymous) volunteer.

    ``timestamp`` is a timezone-aware UTC datetime with second resolution.
    """
    user_id: str
    logged_in: bool
    timestamp: datetime
    annotation_id: str | None = None

    def dedup_key(self) -> tuple[str, datetime, str | None]:
        return (self.user_id, self.timestamp, self.annotation_id)


@dataclass(frozen=True)
class ValidatedLog:
    """
    Events grouped by user (user ids in lexicographic order), each group
    sorted ascending by timestamp with exact duplicates removed.
    """
    users: dict[str, tuple[AnnotationEvent, ...]]
    # repair counts describe the input, not the log; equality ignores them
    duplicates_removed: int = field(default=0, compare=False)
    users_resorted: int = field(default=0, compare=False)

    @property
    def user_count(self) -> int:
        return len(self.users)

    @property
    def event_count(self) -> int:
        return sum(len(group) for group in self.users.values())

    @property
    def corrections(self) -> int:
        """Number of repairs validation had to make."""
        return self.duplicates_removed + self.users_resorted

    @property
    def events(self) -> list[AnnotationEvent]:
        """All events, user by user, each user's events in time order."""
        return [event for group in self.users.values() for event in group]

    def is_empty(self) -> bool:
        return not self.users


# ============================================================================
# Parsing
# ============================================================================

def parse_timestamp(value: str) -> datetime:
    """
    Parse an ISO-8601 timestamp into a UTC datetime truncated to seconds.

    Naive timestamps are taken to be UTC.

    Raises:
        ValueError: If the value is not an ISO-8601 instant.
    """
    text = value.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    parsed = datetime.fromisoformat(text)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(value: datetime) -> str:
    return value.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_event_log(source: IO[str] | Iterable[str], allow_empty: bool = False) -> list[AnnotationEvent]:
    """
    Parse the native event-log CSV (``user_id,logged_in,timestamp,annotation_id``).

    Args:
        source: UTF-8 text stream with a header row. LF and CRLF are accepted.
        allow_empty: Return an empty list for a header-only file instead of raising.

    Returns:
        list: One event per data row, in file order.

    Raises:
        EmptyLogError: If the file is empty (or header-only and not ``allow_empty``).
        SchemaError: If the header lacks a required column.
        ParseError: If a row is malformed; the error carries the line number.
    """
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        raise EmptyLogError("event log is empty")

    header = [name.strip().lstrip("\ufeff") for name in header]
    for column in NATIVE_COLUMNS[:3]:
        if column not in header:
            raise SchemaError(column)
    expected_width = len(header)
    positions = {name: header.index(name) for name in NATIVE_COLUMNS if name in header}

    events: list[AnnotationEvent] = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != expected_width:
            raise ParseError(
                f"expected {expected_width} columns, found {len(row)}", line=line
            )

        user_id = row[positions["user_id"]].strip()
        if not user_id:
            raise ParseError("empty user_id", line=line)

        flag = row[positions["logged_in"]].strip()
        if flag not in ("0", "1"):
            raise ParseError(f"logged_in must be 0 or 1, got {flag!r}", line=line)

        try:
            timestamp = parse_timestamp(row[positions["timestamp"]])
        except ValueError:
            raise ParseError(
                f"unparseable timestamp {row[positions['timestamp']]!r}", line=line
            ) from None

        annotation_id = None
        if "annotation_id" in positions:
            annotation_id = row[positions["annotation_id"]].strip() or None

        events.append(
            AnnotationEvent(
                user_id=user_id,
                logged_in=flag == "1",
                timestamp=timestamp,
                annotation_id=annotation_id,
            )
        )

    if not events and not allow_empty:
        raise EmptyLogError("event log has a header but no data rows")

    logger.info(f"Parsed {len(events)} events from native log")
    return events


def write_event_log(events: Iterable[AnnotationEvent], sink: IO[str]) -> int:
    """
    Write events in the native CSV format.

    Args:
        events: Events to write, in the order given.
        sink: Text stream opened with ``newline=""``.

    Returns:
        int: Number of rows written.
    """
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(NATIVE_COLUMNS)
    count = 0
    for event in events:
        writer.writerow([
            event.user_id,
            "1" if event.logged_in else "0",
            format_timestamp(event.timestamp),
            event.annotation_id or "",
        ])
        count += 1
    return count


def parse_zooniverse_export(source: IO[str] | str) -> list[AnnotationEvent]:
    """
    Parse a Zooniverse classification-export CSV.

    Mapping rules:
    - ``created_at`` becomes the timestamp (e.g. ``2020-01-01 00:00:00 UTC``)
    - a ``user_name`` starting with ``not-logged-in-`` marks an anonymous
      volunteer; the full user_name (a cookie pseudonym) becomes the user id
    - otherwise the volunteer is logged in and keyed by the ``user_id`` column
    - ``classification_id``, when present, becomes the annotation id

    Args:
        source: Text stream or path of the export.

    Returns:
        list: One event per classification row, in file order.

    Raises:
        EmptyLogError: If the export has no rows.
        SchemaError: If a required column is missing.
        ParseError: If ``created_at`` cannot be parsed.
    """
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise EmptyLogError("classification export is empty") from None

    frame.columns = [str(name).strip().lstrip("\ufeff") for name in frame.columns]
    for column in ZOONIVERSE_REQUIRED_COLUMNS:
        if column not in frame.columns:
            raise SchemaError(column)
    if frame.empty:
        raise EmptyLogError("classification export has a header but no rows")

    created = frame["created_at"].str.strip().str.replace(r"\s*UTC$", "", regex=True)
    timestamps = pd.to_datetime(created, utc=True, errors="coerce", format="ISO8601")
    bad = timestamps.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # +2: header line, 1-based numbering
        raise ParseError(
            f"unparseable created_at {frame['created_at'].iloc[row]!r}", line=row + 2
        )

    has_ids = "classification_id" in frame.columns
    events: list[AnnotationEvent] = []
    for row, (user_name, user_id, stamp) in enumerate(
        zip(frame["user_name"], frame["user_id"], timestamps)
    ):
        user_name = user_name.strip()
        if user_name.startswith(ANONYMOUS_PREFIX):
            key, logged_in = user_name, False
        else:
            key, logged_in = user_id.strip() or user_name, True
        if not key:
            raise ParseError("row has neither user_id nor user_name", line=row + 2)

        annotation_id = None
        if has_ids:
            annotation_id = frame["classification_id"].iloc[row].strip() or None
        events.append(
            AnnotationEvent(
                user_id=key,
                logged_in=logged_in,
                timestamp=stamp.to_pydatetime().replace(microsecond=0),
                annotation_id=annotation_id,
            )
        )

    logger.info(f"Parsed {len(events)} classifications from Zooniverse export")
    return events


# ============================================================================
# Validation
# ============================================================================

def validate_log(events: Iterable[AnnotationEvent]) -> ValidatedLog:
    """
    Group events by user, sort each group by time and drop exact duplicates.

    Duplicates are events sharing (user_id, timestamp, annotation_id); the
    first occurrence is kept. Events with equal timestamps keep input order.

    Args:
        events: Events in any order.

    Returns:
        ValidatedLog: Grouped log; empty input yields an empty log.
    """
    grouped: dict[str, list[AnnotationEvent]] = defaultdict(list)
    seen: set[tuple[str, datetime, str | None]] = set()
    duplicates = 0

    for event in events:
        key = event.dedup_key()
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        grouped[event.user_id].append(event)

    resorted = 0
    users: dict[str, tuple[AnnotationEvent, ...]] = {}
    for user_id in sorted(grouped):
        group = grouped[user_id]
        ordered = sorted(group, key=lambda e: e.timestamp)
        if any(a is not b for a, b in zip(group, ordered)):
            resorted += 1
        users[user_id] = tuple(ordered)

    if duplicates:
        logger.warning(f"Dropped {duplicates} duplicate events")
    if resorted:
        logger.warning(f"Re-sorted events of {resorted} users into time order")

    log = ValidatedLog(users=users, duplicates_removed=duplicates, users_resorted=resorted)
    logger.info(f"Validated log: {log.user_count} users, {log.event_count} events")
    return log


# ============================================================================
# Descriptive statistics
# ============================================================================

@dataclass(frozen=True)
class WelchResult:
    """Welch's unequal-variance t-test outcome."""
    t: float
    df: float
    p: float


def welch_t_test(first: Iterable[float], second: Iterable[float]) -> WelchResult | None:
    """
    Two-sided Welch t-test.

    The p-value is the Student-t tail from the regularized incomplete beta
    function with Welch–Satterthwaite degrees of freedom.

    Returns:
        WelchResult, or None if either sample has fewer than two values.
    """
    a = np.asarray(list(first), dtype=np.float64)
    b = np.asarray(list(second), dtype=np.float64)
    if a.size < 2 or b.size < 2:
        return None

    diff = float(a.mean() - b.mean())
    va = float(a.var(ddof=1)) / a.size
    vb = float(b.var(ddof=1)) / b.size
    se2 = va + vb

    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult(t=0.0, df=float(a.size + b.size - 2), p=1.0)
        return WelchResult(t=math.copysign(math.inf, diff), df=float(a.size + b.size - 2), p=0.0)

    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))
    return WelchResult(t=t, df=df, p=min(1.0, max(0.0, p)))


def descriptive_stats(log: ValidatedLog, k: int = 20) -> LogSummary:
    """
    Summarize contribution skew and the logged-in vs anonymous difference.

    A user's logged-in status is the flag on their first event.

    Args:
        log: Validated, non-empty log.
        k: Number of most prolific users for ``top_k_share``.

    Returns:
        LogSummary: Counts, top-k share, group means and Welch test.

    Raises:
        InputError: If the log is empty or ``k`` is not in 1..total_users.
    """
    if log.is_empty():
        raise InputError("cannot summarize an empty log")
    if k < 1:
        raise InputError(f"top-k must be >= 1, got {k}")
    if k > log.user_count:
        raise InputError(f"top-k {k} exceeds the number of users ({log.user_count})")

    counts = np.array([len(group) for group in log.users.values()], dtype=np.int64)
    flags = np.array([group[0].logged_in for group in log.users.values()], dtype=bool)
    total = int(counts.sum())

    top = np.sort(counts)[::-1][:k]
    top_share = float(top.sum()) / total

    logged_counts = counts[flags]
    anonymous_counts = counts[~flags]
    welch = welch_t_test(logged_counts, anonymous_counts)

    summary = LogSummary(
        total_annotations=total,
        total_users=log.user_count,
        top_k=k,
        top_k_share=top_share,
        logged_in_users=int(flags.sum()),
        anonymous_users=int((~flags).sum()),
        mean_annotations_logged_in=float(logged_counts.mean()) if logged_counts.size else None,
        mean_annotations_anonymous=float(anonymous_counts.mean()) if anonymous_counts.size else None,
        welch_t=welch.t if welch and math.isfinite(welch.t) else None,
        welch_df=welch.df if welch else None,
        welch_p=welch.p if welch else None,
    )

    logger.info(
        f"Summary: {total} annotations, {log.user_count} users, "
        f"top-{k} share {top_share:.4f}"
    )
    return summary
