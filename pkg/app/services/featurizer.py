"""
Supervised dataset construction.

A sliding window moves over every session; each annotation yields one item
with the M most recent inter-annotation time deltas, seven engineered
activity features and the number of annotations still to come in the
session. The label is ``raw_y > gamma``.

Engineered features, in order:
    f1  mean session size over all past sessions
    f2  mean session size over the five most recent past sessions
    f3  mean inter-annotation gap pooled over all past sessions (s)
    f4  mean inter-annotation gap so far in the current session (s)
    f5  annotations completed over the whole history, current one included
    f6  annotations completed in the current session, current one included
    f7  logged-in flag
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from datetime import datetime
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence, overload

import numpy as np
import pandas as pd

from app.core.errors import InputError, ShapeError
from app.schemas.config import EmitPolicy, FeaturizerConfig, SessionizerConfig
from app.services.ingest import ValidatedLog, format_timestamp, parse_timestamp
from app.services.sessionizer import Session, sessionize


logger = logging.getLogger(__name__)


ENGINEERED_COUNT = 7
RECENT_SESSIONS = 5
FEATURE_NAMES = [
    "f1_mean_session_size",
    "f2_mean_recent_session_size",
    "f3_mean_gap_past_sessions",
    "f4_mean_gap_current_session",
    "f5_total_annotations",
    "f6_session_annotations",
    "f7_logged_in",
]
# f3 and f4 are durations and get the same log1p treatment as the deltas
LOG_SCALED_FEATURES = (2, 3)

DATASET_FILE = "dataset.csv"
CONFIG_FILE = "dataset.config.json"


@dataclass(frozen=True)
class DatasetItem:
    """One training/testing example built from one annotation."""
    user_id: str
    session_index: int
    position: int
    timestamp: datetime
    deltas: tuple[float, ...]
    engineered: tuple[float, ...]
    raw_y: int
    label: int

    @property
    def width(self) -> int:
        return len(self.deltas) + len(self.engineered)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.deltas + self.engineered, dtype=np.float64)

    def sort_key(self) -> tuple[datetime, str, int, int]:
        return (self.timestamp, self.user_id, self.session_index, self.position)


@dataclass
class Dataset:
    """Items in global time order, ties broken by user, session and position."""
    items: list[DatasetItem]
    config: FeaturizerConfig

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[DatasetItem]:
        return iter(self.items)

    @overload
    def __getitem__(self, key: int) -> DatasetItem: ...

    @overload
    def __getitem__(self, key: slice) -> "Dataset": ...

    def __getitem__(self, key):
        if isinstance(key, slice):
            return Dataset(items=self.items[key], config=self.config)
        return self.items[key]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(items=[self.items[i] for i in indices], config=self.config)

    @property
    def width(self) -> int:
        return self.config.M + ENGINEERED_COUNT

    @cached_property
    def features(self) -> np.ndarray:
        """Raw feature matrix of shape (n, M + 7)."""
        if not self.items:
            return np.zeros((0, self.width), dtype=np.float64)
        return np.array([item.deltas + item.engineered for item in self.items], dtype=np.float64)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([item.label for item in self.items], dtype=np.int64)

    @cached_property
    def raw_targets(self) -> np.ndarray:
        return np.array([item.raw_y for item in self.items], dtype=np.int64)


# ============================================================================
# Features and labels
# ============================================================================

class UserHistory:
    """
    Prefix sums over one user's sessions so that each item's features cost
    O(M) instead of a rescan of the history.
    """

    def __init__(self, sessions: Sequence[Session]):
        self.sessions = list(sessions)
        self.times = np.array(
            [event.timestamp.timestamp() for s in self.sessions for event in s.events],
            dtype=np.float64,
        )
        counts = np.array([len(s) for s in self.sessions], dtype=np.int64)
        spans = np.array([(s.end - s.start).total_seconds() for s in self.sessions], dtype=np.float64)

        self.counts = counts
        self.offsets = np.concatenate([[0], np.cumsum(counts)])
        self.cum_gap_sums = np.concatenate([[0.0], np.cumsum(spans)])
        self.cum_gap_counts = np.concatenate([[0], np.cumsum(counts - 1)])

    def global_index(self, session_index: int, position: int) -> int:
        return int(self.offsets[session_index]) + position

    def features(self, session_index: int, position: int, M: int) -> tuple[np.ndarray, np.ndarray]:
        """Deltas (zero-padded on the oldest side) and engineered features."""
        if not 0 <= session_index < len(self.sessions):
            raise InputError(f"session_index {session_index} out of range")
        session = self.sessions[session_index]
        if not 0 <= position < len(session):
            raise InputError(
                f"position {position} out of range for session of length {len(session)}"
            )

        s = session_index
        past_counts = self.counts[:s]
        f1 = float(past_counts.mean()) if s else 0.0
        f2 = float(past_counts[-RECENT_SESSIONS:].mean()) if s else 0.0

        gap_count = int(self.cum_gap_counts[s])
        f3 = float(self.cum_gap_sums[s]) / gap_count if gap_count else 0.0

        start = int(self.offsets[s])
        current = start + position
        f4 = (self.times[current] - self.times[start]) / position if position else 0.0

        f5 = float(current + 1)
        f6 = float(position + 1)
        f7 = 1.0 if session.events[position].logged_in else 0.0

        first = max(0, current - M)
        window = np.diff(self.times[first:current + 1])
        deltas = np.zeros(M, dtype=np.float64)
        if window.size:
            deltas[M - window.size:] = window

        engineered = np.array([f1, f2, f3, f4, f5, f6, f7], dtype=np.float64)
        return deltas, engineered


def compute_features(
    user_sessions: Sequence[Session],
    session_index: int,
    position: int,
    M: int,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Features of the annotation at ``position`` of session ``session_index``.

    The delta window spans session boundaries: it holds the differences
    between the M+1 most recent annotations of the user's whole history,
    oldest first, zero-padded when fewer exist.

    Args:
        user_sessions: All sessions of one user, ordered by session_index.
        session_index: Session holding the current annotation.
        position: 0-based index of the current annotation in that session.
        M: Number of deltas.

    Returns:
        tuple: (deltas of length M, engineered features of length 7)

    Raises:
        InputError: If session_index or position is out of range.
    """
    return UserHistory(user_sessions).features(session_index, position, M)


def label_item(session: Session, position: int, gamma: int) -> tuple[int, int]:
    """
    Annotations still to come in the session, and whether they exceed gamma.

    Raises:
        InputError: If position is out of range.
    """
    if not 0 <= position < len(session):
        raise InputError(f"position {position} out of range for session of length {len(session)}")
    raw_y = len(session) - 1 - position
    return raw_y, int(raw_y > gamma)


def build_dataset(
    log: ValidatedLog,
    sconfig: SessionizerConfig | None = None,
    fconfig: FeaturizerConfig | None = None,
) -> Dataset:
    """
    Slide the window over every session of every user.

    Under ``require_full_window`` an annotation is emitted only once the
    user has at least M earlier annotations; ``pad_short_windows`` emits all
    annotations with zero-padded deltas.

    Args:
        log: Validated log.
        sconfig: Session rule.
        fconfig: Window width, gamma and emit policy.

    Returns:
        Dataset: Items sorted by (timestamp, user_id, session_index, position).
    """
    sconfig = sconfig or SessionizerConfig()
    fconfig = fconfig or FeaturizerConfig()
    M = fconfig.M
    require_full = fconfig.emit_policy == EmitPolicy.REQUIRE_FULL_WINDOW

    items: list[DatasetItem] = []
    for user_id, events in log.users.items():
        sessions = sessionize(events, sconfig)
        history = UserHistory(sessions)
        for session in sessions:
            for position, event in enumerate(session.events):
                if require_full and history.global_index(session.session_index, position) < M:
                    continue
                deltas, engineered = history.features(session.session_index, position, M)
                raw_y, label = label_item(session, position, fconfig.gamma)
                items.append(
                    DatasetItem(
                        user_id=user_id,
                        session_index=session.session_index,
                        position=position,
                        timestamp=event.timestamp,
                        deltas=tuple(float(v) for v in deltas),
                        engineered=tuple(float(v) for v in engineered),
                        raw_y=raw_y,
                        label=label,
                    )
                )

    items.sort(key=DatasetItem.sort_key)
    dataset = Dataset(items=items, config=fconfig)

    positives = int(dataset.labels.sum()) if items else 0
    logger.info(
        f"Built dataset: {len(items)} items from {log.event_count} annotations "
        f"(M={M}, gamma={fconfig.gamma}, policy={fconfig.emit_policy.value}, "
        f"positives={positives})"
    )
    return dataset


def relabel(dataset: Dataset, gamma: int) -> Dataset:
    """Same items with labels recomputed for another engagement threshold."""
    config = dataset.config.model_copy(update={"gamma": gamma})
    items = [dataclasses.replace(item, label=int(item.raw_y > gamma)) for item in dataset.items]
    return Dataset(items=items, config=config)


# ============================================================================
# Normalization
# ============================================================================

def log_scaled_columns(M: int) -> list[int]:
    """Columns compressed by log1p: all deltas plus f3 and f4."""
    return list(range(M)) + [M + i for i in LOG_SCALED_FEATURES]


@dataclass(frozen=True, eq=False)
class Normalizer:
    """
    log1p on durations, then per-dimension standardization.

    Dimensions that were constant on the fit slice are flagged and passed
    through after log1p without centering or scaling.
    """
    M: int
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    CONSTANT_TOLERANCE = 1e-12

    @property
    def width(self) -> int:
        return self.M + ENGINEERED_COUNT

    @staticmethod
    def _log_scale(matrix: np.ndarray, M: int) -> np.ndarray:
        scaled = np.array(matrix, dtype=np.float64, copy=True)
        columns = log_scaled_columns(M)
        scaled[:, columns] = np.log1p(scaled[:, columns])
        return scaled

    @classmethod
    def fit(cls, matrix: np.ndarray, M: int) -> "Normalizer":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if matrix.shape[0] == 0:
            raise InputError("cannot fit a normalizer on an empty slice")
        if matrix.shape[1] != M + ENGINEERED_COUNT:
            raise ShapeError(f"expected {M + ENGINEERED_COUNT} columns, got {matrix.shape[1]}")

        scaled = cls._log_scale(matrix, M)
        mean = scaled.mean(axis=0)
        std = scaled.std(axis=0)
        constant = std <= cls.CONSTANT_TOLERANCE
        return cls(M=M, mean=mean, std=std, constant=constant)

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if matrix.shape[1] != self.width:
            raise ShapeError(f"expected {self.width} features, got {matrix.shape[1]}")
        scaled = self._log_scale(matrix, self.M)
        safe_std = np.where(self.constant, 1.0, self.std)
        safe_mean = np.where(self.constant, 0.0, self.mean)
        return (scaled - safe_mean) / safe_std

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        return cls(
            M=int(data["M"]),
            mean=np.array(data["mean"], dtype=np.float64),
            std=np.array(data["std"], dtype=np.float64),
            constant=np.array(data["constant"], dtype=bool),
        )


def fit_normalizer(items: Dataset) -> Normalizer:
    """
    Fit normalization statistics on a dataset slice.

    Raises:
        InputError: If the slice is empty.
    """
    if len(items) == 0:
        raise InputError("cannot fit a normalizer on an empty slice")
    return Normalizer.fit(items.features, items.config.M)


def apply_normalizer(normalizer: Normalizer, item: DatasetItem) -> np.ndarray:
    """Normalized feature vector of length M + 7 for one item."""
    if item.width != normalizer.width:
        raise ShapeError(f"item has {item.width} features, normalizer expects {normalizer.width}")
    return normalizer.transform(item.vector[np.newaxis, :])[0]


# ============================================================================
# Persistence
# ============================================================================

def dataset_columns(M: int) -> list[str]:
    return (
        ["user_id", "timestamp", "session_index", "position", "raw_y", "label"]
        + [f"delta_{i + 1}" for i in range(M)]
        + FEATURE_NAMES
    )


def save_dataset(dataset: Dataset, out_dir: str | Path) -> tuple[Path, Path]:
    """
    Write ``dataset.csv`` and its ``dataset.config.json`` sidecar.

    Floats are written with 17 significant digits so that loading restores
    them bit for bit.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    M = dataset.config.M
    columns = dataset_columns(M)

    rows = [
        [item.user_id, format_timestamp(item.timestamp), item.session_index,
         item.position, item.raw_y, item.label, *item.deltas, *item.engineered]
        for item in dataset.items
    ]
    frame = pd.DataFrame(rows, columns=columns)
    csv_path = out / DATASET_FILE
    frame.to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")

    config_path = out / CONFIG_FILE
    config_path.write_text(
        json.dumps(dataset.config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info(f"Wrote {len(dataset)} items to {csv_path}")
    return csv_path, config_path


def load_dataset(in_dir: str | Path) -> Dataset:
    """Read a dataset written by ``save_dataset``."""
    source = Path(in_dir)
    config = FeaturizerConfig.model_validate_json((source / CONFIG_FILE).read_text(encoding="utf-8"))
    columns = dataset_columns(config.M)

    frame = pd.read_csv(
        source / DATASET_FILE,
        dtype={"user_id": str, "timestamp": str},
        keep_default_na=False,
        float_precision="round_trip",
    )
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InputError(f"dataset file lacks columns: {', '.join(missing)}")

    delta_cols = columns[6:6 + config.M]
    items = [
        DatasetItem(
            user_id=str(row["user_id"]),
            session_index=int(row["session_index"]),
            position=int(row["position"]),
            timestamp=parse_timestamp(row["timestamp"]),
            deltas=tuple(float(row[c]) for c in delta_cols),
            engineered=tuple(float(row[c]) for c in FEATURE_NAMES),
            raw_y=int(row["raw_y"]),
            label=int(row["label"]),
        )
        for row in frame.to_dict(orient="records")
    ]
    return Dataset(items=items, config=config)
