"""
Seeded synthetic annotation logs.

Volunteers get a heavy-tailed total number of annotations, logged-in users
about twice as many as anonymous ones. Annotations are laid out in sessions:
gaps inside a session stay below 30 minutes, gaps between sessions are at
least 30 minutes. With ``signal_strength > 0`` the chance that a session ends
after an annotation rises with the ratio of the last gap to the running mean
gap of the session, a pattern visible in the delta window.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

import numpy as np

from app.core.seeding import derive_rng
from app.schemas.config import SynthConfig
from app.services.ingest import ANONYMOUS_PREFIX, AnnotationEvent, parse_timestamp, write_event_log


logger = logging.getLogger(__name__)


SESSION_GAP_SECONDS = 1800
MIN_GAP_SECONDS = 1
MAX_GAP_SECONDS = SESSION_GAP_SECONDS - 1


@dataclass(frozen=True)
class _Volunteer:
    index: int
    user_id: str
    logged_in: bool
    activity: float


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _mean_one_lognormal(rng: np.random.Generator, sigma: float) -> float:
    return float(rng.lognormal(-sigma * sigma / 2.0, sigma))


def _draw_volunteers(config: SynthConfig) -> list[_Volunteer]:
    """
    Logged-in flag and activity factor per user.

    Activity factors are rescaled to mean one within each group so that the
    group means follow the configured ratio closely.
    """
    volunteers = []
    for index in range(config.user_count):
        rng = derive_rng(config.seed, "user", index, "profile")
        logged_in = bool(rng.random() < config.logged_in_fraction)
        activity = _mean_one_lognormal(rng, config.activity_sigma)
        if logged_in:
            user_id = f"u{index:05d}"
        else:
            user_id = f"{ANONYMOUS_PREFIX}{int(rng.integers(0, 2 ** 48)):012x}"
        volunteers.append(_Volunteer(index, user_id, logged_in, activity))

    for group in (True, False):
        members = [v for v in volunteers if v.logged_in is group]
        if not members:
            continue
        mean = sum(v.activity for v in members) / len(members)
        for v in members:
            volunteers[v.index] = _Volunteer(v.index, v.user_id, v.logged_in, v.activity / mean)
    return volunteers


def _user_events(volunteer: _Volunteer, config: SynthConfig, start) -> list[AnnotationEvent]:
    rng = derive_rng(config.seed, "user", volunteer.index, "events")

    target = config.anonymous_mean_annotations
    if volunteer.logged_in:
        target *= config.logged_in_multiplier
    total = 1 + int(rng.poisson((target - 1.0) * volunteer.activity))

    gap_mu = config.gap_log_mean + rng.normal(0.0, config.user_gap_sigma)
    session_mean = 1.0 + (config.mean_session_length - 1.0) * _mean_one_lognormal(rng, config.session_length_sigma)
    base_logit = _logit(1.0 / session_mean)
    coupling = config.signal_strength * config.signal_gain

    t = int(rng.integers(0, int(config.span_days * 86400)))
    events: list[AnnotationEvent] = []
    session_gaps: list[int] = []
    for j in range(total):
        events.append(
            AnnotationEvent(
                user_id=volunteer.user_id,
                logged_in=volunteer.logged_in,
                timestamp=start + timedelta(seconds=t),
                annotation_id=f"a{volunteer.index:05d}-{j:05d}",
            )
        )
        if j == total - 1:
            break

        if config.force_single_session:
            end_session = False
        else:
            logit = base_logit
            if session_gaps and coupling:
                running_mean = sum(session_gaps) / len(session_gaps)
                logit += coupling * math.log(session_gaps[-1] / running_mean)
            end_session = bool(rng.random() < 1.0 / (1.0 + math.exp(-logit)))

        if end_session:
            t += SESSION_GAP_SECONDS + int(round(rng.exponential(config.inter_session_gap_hours * 3600)))
            session_gaps = []
        else:
            gap = int(round(float(np.clip(rng.lognormal(gap_mu, config.gap_log_sigma), MIN_GAP_SECONDS, MAX_GAP_SECONDS))))
            t += gap
            session_gaps.append(gap)
    return events


def generate_log(config: SynthConfig | None = None) -> list[AnnotationEvent]:
    """
    Generate a synthetic annotation log.

    Args:
        config: Generator settings; the same config always yields the same log.

    Returns:
        list[AnnotationEvent]: Events sorted by (timestamp, user_id, annotation_id).
    """
    config = config or SynthConfig()
    start = parse_timestamp(config.start)
    events: list[AnnotationEvent] = []
    for volunteer in _draw_volunteers(config):
        events.extend(_user_events(volunteer, config, start))
    events.sort(key=lambda e: (e.timestamp, e.user_id, e.annotation_id))
    logger.info(f"Generated {len(events)} events for {config.user_count} users (seed={config.seed})")
    return events


def write_synthetic_log(config: SynthConfig, out_path: str | Path, emit_config: bool = True) -> list[Path]:
    """
    Generate a log and write it as native CSV, plus ``<out>.config.json``.

    Returns:
        list[Path]: Files written.
    """
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as sink:
        write_event_log(generate_log(config), sink)
    written = [out]
    if emit_config:
        config_path = out.with_name(out.name + ".config.json")
        config_path.write_text(
            json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        written.append(config_path)
    return written
