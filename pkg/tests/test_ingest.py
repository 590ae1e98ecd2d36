"""
Tests for event-log parsing, validation and descriptive statistics.
"""

import io
import math
from datetime import datetime, timezone

import numpy as np
import pytest
from scipy import stats

from app.core.errors import EmptyLogError, InputError, ParseError, SchemaError
from app.services.ingest import (
    descriptive_stats,
    parse_event_log,
    parse_timestamp,
    parse_zooniverse_export,
    validate_log,
    welch_t_test,
    write_event_log,
)
from tests.conftest import make_event, make_events


HEADER = "user_id,logged_in,timestamp,annotation_id\n"


class TestParseEventLog:
    """Test suite for the native CSV reader."""

    def test_single_row(self):
        """Test direct field mapping of one row."""
        events = parse_event_log(io.StringIO(HEADER + "u1,1,2019-10-01T12:00:05Z,a1\n"))

        assert len(events) == 1
        event = events[0]
        assert event.user_id == "u1"
        assert event.logged_in is True
        assert event.timestamp == datetime(2019, 10, 1, 12, 0, 5, tzinfo=timezone.utc)
        assert event.annotation_id == "a1"

    def test_crlf_and_missing_annotation_id(self):
        """Test CRLF line endings and an empty annotation id."""
        events = parse_event_log(io.StringIO(HEADER.replace("\n", "\r\n") + "u2,0,2019-10-01T12:00:05Z,\r\n"))

        assert events[0].logged_in is False
        assert events[0].annotation_id is None

    def test_header_only_is_empty_log(self):
        """Test that a header-only file is rejected."""
        with pytest.raises(EmptyLogError):
            parse_event_log(io.StringIO(HEADER))

    def test_header_only_allowed(self):
        """Test that allow_empty returns no events for a header-only file."""
        assert parse_event_log(io.StringIO(HEADER), allow_empty=True) == []

    def test_empty_file(self):
        """Test that a completely empty file is rejected."""
        with pytest.raises(EmptyLogError):
            parse_event_log(io.StringIO(""))

    def test_bad_timestamp_reports_line(self):
        """Test that an unparseable timestamp names its line."""
        text = HEADER + "u1,1,2019-10-01T12:00:05Z,a1\nu1,1,notatime,a2\n"
        with pytest.raises(ParseError) as excinfo:
            parse_event_log(io.StringIO(text))

        assert excinfo.value.line == 3
        assert "line 3" in str(excinfo.value)

    def test_bad_logged_in_flag(self):
        """Test that logged_in must be 0 or 1."""
        with pytest.raises(ParseError):
            parse_event_log(io.StringIO(HEADER + "u1,yes,2019-10-01T12:00:05Z,a1\n"))

    def test_wrong_column_count(self):
        """Test that rows with extra fields are rejected."""
        with pytest.raises(ParseError) as excinfo:
            parse_event_log(io.StringIO(HEADER + "u1,1,2019-10-01T12:00:05Z,a1,extra\n"))
        assert excinfo.value.line == 2

    def test_missing_column(self):
        """Test that a missing required column is a schema error."""
        with pytest.raises(SchemaError) as excinfo:
            parse_event_log(io.StringIO("user_id,timestamp\nu1,2019-10-01T12:00:05Z\n"))
        assert excinfo.value.column == "logged_in"

    def test_fractional_seconds_truncated(self):
        """Test that sub-second precision is dropped."""
        assert parse_timestamp("2019-10-01T12:00:05.987Z").microsecond == 0

    def test_write_then_parse(self):
        """Test that the writer emits what the reader accepts."""
        events = make_events("u1", [0, 60, 3600])
        sink = io.StringIO()

        assert write_event_log(events, sink) == 3
        assert parse_event_log(io.StringIO(sink.getvalue())) == events


class TestParseZooniverseExport:
    """Test suite for the Zooniverse classification-export reader."""

    COLUMNS = "classification_id,user_name,user_id,created_at\n"

    def test_logged_in_user(self):
        """Test that a named user is keyed by the user_id column."""
        events = parse_zooniverse_export(io.StringIO(self.COLUMNS + "c1,alice,42,2020-01-01 00:00:00 UTC\n"))

        assert events[0].user_id == "42"
        assert events[0].logged_in is True
        assert events[0].timestamp == datetime(2020, 1, 1, tzinfo=timezone.utc)
        assert events[0].annotation_id == "c1"

    def test_anonymous_user(self):
        """Test that a not-logged-in pseudonym becomes the user id."""
        events = parse_zooniverse_export(
            io.StringIO(self.COLUMNS + "c2,not-logged-in-abc123,,2020-01-01 00:00:00 UTC\n")
        )

        assert events[0].user_id == "not-logged-in-abc123"
        assert events[0].logged_in is False

    def test_missing_created_at(self):
        """Test that the missing column is named."""
        with pytest.raises(SchemaError) as excinfo:
            parse_zooniverse_export(io.StringIO("user_name,user_id\nalice,42\n"))
        assert excinfo.value.column == "created_at"

    def test_native_file_is_schema_error(self):
        """Test that a native log is not accepted as an export."""
        with pytest.raises(SchemaError):
            parse_zooniverse_export(io.StringIO(HEADER + "u1,1,2019-10-01T12:00:05Z,a1\n"))


class TestValidateLog:
    """Test suite for validate_log."""

    def test_duplicates_removed(self):
        """Test that identical rows collapse to one event."""
        event = make_event("u1", 0, annotation_id="a")
        log = validate_log([event, event])

        assert log.event_count == 1
        assert log.duplicates_removed == 1
        assert log.corrections == 1

    def test_out_of_order_sorted(self):
        """Test that each user's events end up in time order."""
        events = [make_event("u1", 100, annotation_id="b"), make_event("u1", 0, annotation_id="a")]
        log = validate_log(events)

        stamps = [e.timestamp for e in log.users["u1"]]
        assert stamps == sorted(stamps)
        assert log.users_resorted == 1

    def test_counts(self):
        """Test user and event counts for 3 users with 2 events each."""
        events = [e for user in ("c", "a", "b") for e in make_events(user, [0, 10])]
        log = validate_log(events)

        assert log.user_count == 3
        assert log.event_count == 6
        assert list(log.users) == ["a", "b", "c"]
        assert log.corrections == 0

    def test_empty(self):
        """Test that no events give an empty log."""
        assert validate_log([]).is_empty()

    def test_idempotent(self):
        """Test that validating a validated log changes nothing, across 500 random logs."""
        rng = np.random.default_rng(2024)
        for _ in range(500):
            size = int(rng.integers(1, 30))
            events = [
                make_event(f"u{rng.integers(0, 4)}", int(rng.integers(0, 50)), annotation_id=f"a{rng.integers(0, 5)}")
                for _ in range(size)
            ]
            events += [events[i] for i in rng.integers(0, size, size=int(rng.integers(0, 5)))]
            events = [events[i] for i in rng.permutation(len(events))]

            once = validate_log(events)
            twice = validate_log(once.events)

            assert twice == once
            assert twice.users == once.users
            assert twice.corrections == 0

    def test_equality_ignores_repair_counts(self):
        """Test that a log with a dropped duplicate equals its clean re-validation."""
        event = make_event("u1", 0, annotation_id="a")
        once = validate_log([event, make_event("u1", 5, annotation_id="b"), event])
        twice = validate_log(once.events)

        assert once.duplicates_removed == 1
        assert twice.duplicates_removed == 0
        assert once == twice


def _log_with_counts(logged_in: list[int], anonymous: list[int]):
    events = []
    for i, count in enumerate(logged_in):
        events += make_events(f"L{i}", list(range(count)), logged_in=True)
    for i, count in enumerate(anonymous):
        events += make_events(f"not-logged-in-{i}", list(range(count)), logged_in=False)
    return validate_log(events)


class TestDescriptiveStats:
    """Test suite for descriptive_stats and the Welch test."""

    def test_group_means_and_welch(self):
        """Test means 5 and 2 and the Welch statistic with sample variances."""
        summary = descriptive_stats(_log_with_counts([4, 6], [1, 3]), k=1)

        assert summary.mean_annotations_logged_in == 5.0
        assert summary.mean_annotations_anonymous == 2.0
        assert summary.welch_t == pytest.approx(3.0 / math.sqrt(2.0))
        assert summary.welch_df == pytest.approx(2.0)

    def test_welch_matches_scipy(self, rng):
        """Test the t statistic and p-value against scipy on random samples."""
        for _ in range(20):
            a = rng.integers(1, 50, size=rng.integers(2, 30))
            b = rng.integers(1, 50, size=rng.integers(2, 30))
            if a.var() == 0 and b.var() == 0:
                continue
            ours = welch_t_test(a, b)
            reference = stats.ttest_ind(a, b, equal_var=False)

            assert ours.t == pytest.approx(reference.statistic, rel=1e-9)
            assert ours.p == pytest.approx(reference.pvalue, rel=1e-6, abs=1e-12)

    def test_identical_groups(self):
        """Test that identical per-user counts give t = 0 and p = 1."""
        summary = descriptive_stats(_log_with_counts([3, 3], [3, 3]), k=1)

        assert summary.welch_t == 0.0
        assert summary.welch_p == 1.0

    def test_small_group_leaves_test_undefined(self):
        """Test that a group with one user reports no t-test."""
        summary = descriptive_stats(_log_with_counts([3], [1, 2]), k=1)

        assert summary.welch_t is None
        assert summary.welch_p is None

    def test_top_k_share(self):
        """Test the share of the k most active users."""
        summary = descriptive_stats(_log_with_counts([10, 5], [3, 2]), k=2)

        assert summary.top_k_share == pytest.approx(15 / 20)
        assert summary.total_annotations == 20

    def test_k_exceeds_users(self):
        """Test that k larger than the user count is rejected."""
        with pytest.raises(InputError):
            descriptive_stats(_log_with_counts([1, 2], [3]), k=4)

    def test_synthetic_direction(self, small_synthetic_log):
        """Test that logged-in volunteers annotate more on the synthetic log."""
        summary = descriptive_stats(small_synthetic_log)

        assert summary.mean_annotations_logged_in > summary.mean_annotations_anonymous
        assert summary.welch_t is not None and summary.welch_t > 0
