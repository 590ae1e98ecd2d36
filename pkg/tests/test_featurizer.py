"""
Tests for feature engineering, labelling, dataset construction and normalization.
"""

import math

import numpy as np
import pytest

from app.core.errors import InputError, ShapeError
from app.schemas.config import EmitPolicy, FeaturizerConfig, SessionizerConfig
from app.services.featurizer import (
    Normalizer,
    apply_normalizer,
    build_dataset,
    compute_features,
    fit_normalizer,
    label_item,
    load_dataset,
    relabel,
    save_dataset,
)
from app.services.ingest import validate_log
from app.services.sessionizer import sessionize
from tests.conftest import make_events


PAD = FeaturizerConfig(M=5, gamma=1, emit_policy=EmitPolicy.PAD_SHORT_WINDOWS)


class TestComputeFeatures:
    """Test suite for the engineered features and delta window."""

    def test_worked_example(self):
        """Test one past session of 4 and a current session of 2 with M=2."""
        sessions = sessionize(make_events("u", [0, 60, 120, 180, 100_000, 100_050]))
        deltas, engineered = compute_features(sessions, 1, 1, 2)

        assert deltas.tolist() == [99_820.0, 50.0]
        assert engineered.tolist() == [4.0, 4.0, 60.0, 50.0, 6.0, 2.0, 1.0]

    def test_no_history(self):
        """Test the zero fill when nothing precedes the annotation."""
        sessions = sessionize(make_events("u", [0, 10], logged_in=False))
        deltas, engineered = compute_features(sessions, 0, 0, 3)

        assert deltas.tolist() == [0.0, 0.0, 0.0]
        assert engineered.tolist() == [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]

    def test_recent_sessions_limited_to_five(self):
        """Test that f2 only averages the five latest past sessions."""
        seconds = []
        start = 0
        for size in (10, 1, 1, 1, 1, 1, 1):
            seconds += [start + 10 * i for i in range(size)]
            start += 100_000
        sessions = sessionize(make_events("u", seconds))
        _, engineered = compute_features(sessions, 6, 0, 1)

        assert engineered[0] == pytest.approx(15 / 6)
        assert engineered[1] == 1.0

    def test_position_out_of_range(self):
        """Test that a position past the session end is rejected."""
        sessions = sessionize(make_events("u", [0, 10]))
        with pytest.raises(InputError):
            compute_features(sessions, 0, 2, 2)

    def test_session_out_of_range(self):
        """Test that an unknown session index is rejected."""
        sessions = sessionize(make_events("u", [0]))
        with pytest.raises(InputError):
            compute_features(sessions, 1, 0, 2)


class TestLabelItem:
    """Test suite for label_item."""

    @pytest.fixture
    def session(self):
        return sessionize(make_events("u", [10 * i for i in range(10)]))[0]

    def test_above_threshold(self, session):
        """Test position 5 of 10 with gamma 2."""
        assert label_item(session, 5, 2) == (4, 1)

    def test_strict_inequality(self, session):
        """Test position 5 of 10 with gamma 5."""
        assert label_item(session, 5, 5) == (4, 0)

    def test_last_annotation(self, session):
        """Test the last annotation is never engaged."""
        assert label_item(session, 9, 1) == (0, 0)

    def test_out_of_range(self, session):
        """Test that a position past the end is rejected."""
        with pytest.raises(InputError):
            label_item(session, 10, 1)


def _brute_force_count(log, M: int, policy: EmitPolicy) -> int:
    if policy == EmitPolicy.PAD_SHORT_WINDOWS:
        return log.event_count
    return sum(max(0, len(events) - M) for events in log.users.values())


class TestBuildDataset:
    """Test suite for build_dataset."""

    def test_padded_single_session(self):
        """Test that 3 events give raw_y 2, 1, 0 under padding."""
        dataset = build_dataset(validate_log(make_events("u", [0, 10, 20])), fconfig=PAD)

        assert [item.raw_y for item in dataset] == [2, 1, 0]
        assert dataset[0].deltas == (0.0,) * 5

    def test_full_window_never_fills(self):
        """Test that 3 events with M=5 give no items when the window is required."""
        dataset = build_dataset(validate_log(make_events("u", [0, 10, 20])), fconfig=FeaturizerConfig(M=5))

        assert len(dataset) == 0
        assert dataset.features.shape == (0, 12)

    def test_interleaved_users_sorted(self):
        """Test global time order across users."""
        log = validate_log(make_events("a", [0, 20, 40]) + make_events("b", [10, 30, 50]))
        dataset = build_dataset(log, fconfig=PAD)

        stamps = [item.timestamp for item in dataset]
        assert stamps == sorted(stamps)
        assert [item.user_id for item in dataset] == ["a", "b", "a", "b", "a", "b"]

    def test_empty_log(self):
        """Test that an empty log gives an empty dataset."""
        assert len(build_dataset(validate_log([]))) == 0

    def test_labels_follow_gamma(self):
        """Test label = raw_y > gamma and relabel."""
        log = validate_log(make_events("u", [10 * i for i in range(8)]))
        dataset = build_dataset(log, fconfig=FeaturizerConfig(M=1, gamma=3, emit_policy=EmitPolicy.PAD_SHORT_WINDOWS))

        assert dataset.labels.tolist() == [int(y > 3) for y in dataset.raw_targets]
        relabeled = relabel(dataset, 5)
        assert relabeled.config.gamma == 5
        assert relabeled.labels.tolist() == [int(y > 5) for y in dataset.raw_targets]

    @pytest.mark.parametrize("policy", list(EmitPolicy))
    def test_item_count_matches_recount(self, rng, policy):
        """Test item counts and per-session invariants on random logs."""
        M = 3
        for _ in range(30):
            events = []
            for u in range(int(rng.integers(1, 6))):
                gaps = rng.choice([5, 100, 1000, 5000, 90_000], size=int(rng.integers(0, 15)))
                seconds = np.concatenate([[0], np.cumsum(gaps)]) + int(rng.integers(0, 1000))
                events += make_events(f"u{u}", seconds.tolist(), logged_in=bool(u % 2))
            log = validate_log(events)
            dataset = build_dataset(log, SessionizerConfig(), FeaturizerConfig(M=M, emit_policy=policy))

            assert len(dataset) == _brute_force_count(log, M, policy)
            by_session: dict[tuple[str, int], list] = {}
            for item in dataset:
                assert len(item.deltas) == M
                assert all(d >= 0 for d in item.deltas)
                by_session.setdefault((item.user_id, item.session_index), []).append(item)
            for items in by_session.values():
                items.sort(key=lambda it: it.position)
                ys = [it.raw_y for it in items]
                assert ys[-1] == 0
                assert ys == list(range(len(ys) - 1, -1, -1))

    def test_total_count_non_decreasing(self, small_synthetic_log):
        """Test that f5 never decreases along one user's items."""
        dataset = build_dataset(small_synthetic_log, fconfig=FeaturizerConfig(M=2))
        last: dict[str, float] = {}
        for item in dataset:
            assert item.engineered[4] >= last.get(item.user_id, 0.0)
            last[item.user_id] = item.engineered[4]


class TestNormalizer:
    """Test suite for the log1p + standardization normalizer."""

    def test_single_item_fit(self):
        """Test that a one-item fit returns the log1p-transformed input."""
        dataset = build_dataset(validate_log(make_events("u", [0, 60, 180])), fconfig=FeaturizerConfig(M=2))
        normalizer = fit_normalizer(dataset)
        item = dataset[0]

        assert normalizer.constant.all()
        expected = np.array(item.deltas + item.engineered)
        expected[[0, 1, 4, 5]] = np.log1p(expected[[0, 1, 4, 5]])
        np.testing.assert_allclose(apply_normalizer(normalizer, item), expected)

    def test_zero_delta_maps_to_zero(self):
        """Test log1p(0) = 0 on a constant column."""
        normalizer = Normalizer.fit(np.zeros((3, 8)), M=1)

        assert normalizer.transform(np.zeros((1, 8)))[0, 0] == 0.0

    def test_standardized_on_fit_slice(self, small_synthetic_log):
        """Test mean 0 and std 1 for non-constant dimensions of the fit slice."""
        dataset = build_dataset(small_synthetic_log, fconfig=FeaturizerConfig(M=5))
        normalizer = fit_normalizer(dataset)
        transformed = normalizer.transform(dataset.features)
        varying = ~normalizer.constant

        np.testing.assert_allclose(transformed[:, varying].mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(transformed[:, varying].std(axis=0), 1.0, atol=1e-9)
        assert len(np.unique(transformed[:, -1])) <= 2

    def test_empty_fit_rejected(self):
        """Test that an empty slice cannot be fitted."""
        empty = build_dataset(validate_log([]))
        with pytest.raises(InputError):
            fit_normalizer(empty)

    def test_width_mismatch(self):
        """Test that a wrongly sized item is rejected."""
        normalizer = Normalizer.fit(np.ones((2, 8)), M=1)
        dataset = build_dataset(validate_log(make_events("u", [0, 10, 20])), fconfig=FeaturizerConfig(M=2))
        with pytest.raises(ShapeError):
            apply_normalizer(normalizer, dataset[0])

    def test_dict_round_trip(self):
        """Test that to_dict/from_dict preserve the transform."""
        matrix = np.arange(16, dtype=float).reshape(2, 8)
        normalizer = Normalizer.fit(matrix, M=1)
        restored = Normalizer.from_dict(normalizer.to_dict())

        np.testing.assert_array_equal(restored.transform(matrix), normalizer.transform(matrix))


class TestPersistence:
    """Test suite for dataset files."""

    def test_save_and_load(self, tmp_path, small_synthetic_log):
        """Test that a saved dataset loads back with identical values."""
        dataset = build_dataset(small_synthetic_log, fconfig=FeaturizerConfig(M=3, gamma=2))
        save_dataset(dataset, tmp_path)
        loaded = load_dataset(tmp_path)

        assert loaded.config == dataset.config
        assert loaded.items == dataset.items
        assert math.isclose(float(loaded.features.sum()), float(dataset.features.sum()))
