"""
Shared fixtures for the test suite.
"""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from app.schemas.config import SynthConfig
from app.services.ingest import AnnotationEvent, validate_log
from app.services.synth import generate_log


EPOCH = datetime(2019, 10, 1, tzinfo=timezone.utc)


def make_event(user_id: str, seconds: float, logged_in: bool = True, annotation_id: str | None = None) -> AnnotationEvent:
    """Event ``seconds`` after a fixed epoch."""
    return AnnotationEvent(
        user_id=user_id,
        logged_in=logged_in,
        timestamp=EPOCH + timedelta(seconds=seconds),
        annotation_id=annotation_id,
    )


def make_events(user_id: str, seconds: list[float], logged_in: bool = True) -> list[AnnotationEvent]:
    return [make_event(user_id, s, logged_in, f"{user_id}-{i}") for i, s in enumerate(seconds)]


@pytest.fixture
def event_factory():
    return make_event


@pytest.fixture
def events_factory():
    return make_events


@pytest.fixture(scope="session")
def small_synthetic_log():
    """Validated synthetic log of 120 volunteers."""
    config = SynthConfig(user_count=120, seed=7)
    return validate_log(generate_log(config))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
