"""
Pydantic schemas for pipeline configuration.

Each config validates its own invariants; an invalid value raises
``pydantic.ValidationError`` at construction time.
"""

import enum
import math
from datetime import timedelta

from pydantic import BaseModel, ConfigDict, Field, field_validator


class SessionizerConfig(BaseModel):
    """Session split rule: a gap of at least ``gap_threshold`` starts a new session."""

    model_config = ConfigDict(frozen=True)

    gap_threshold: timedelta = Field(default=timedelta(minutes=30))

    @field_validator("gap_threshold")
    @classmethod
    def _positive_gap(cls, value: timedelta) -> timedelta:
        if value <= timedelta(0):
            raise ValueError("gap_threshold must be positive")
        return value

    @classmethod
    def from_minutes(cls, minutes: float) -> "SessionizerConfig":
        """Build a config from a gap expressed in minutes."""
        return cls(gap_threshold=timedelta(minutes=minutes))


class EmitPolicy(str, enum.Enum):
    """
    What to do with annotations that have fewer than M predecessors.

    REQUIRE_FULL_WINDOW skips them; PAD_SHORT_WINDOWS zero-pads the oldest deltas.
    """
    REQUIRE_FULL_WINDOW = "require_full_window"
    PAD_SHORT_WINDOWS = "pad_short_windows"


class FeaturizerConfig(BaseModel):
    """Window width, engagement threshold and emit policy of a dataset build."""

    model_config = ConfigDict(frozen=True)

    M: int = Field(default=5, ge=1, description="Number of time-delta features")
    gamma: int = Field(default=5, ge=1, description="Engagement threshold")
    emit_policy: EmitPolicy = EmitPolicy.REQUIRE_FULL_WINDOW


class ModelVariant(str, enum.Enum):
    """The four classifiers compared by the evaluation."""
    LSTM_NET = "lstm_net"
    DNN_NET = "dnn_net"
    RANDOM_FOREST = "random_forest"
    LOGISTIC_REGRESSION = "logistic_regression"

    @property
    def short_name(self) -> str:
        return _SHORT_NAMES[self]

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def parse(cls, name: str) -> "ModelVariant":
        """Accept either the full variant value or its short CLI name."""
        key = name.strip().lower()
        for variant in cls:
            if key in (variant.value, variant.short_name):
                return variant
        valid = ", ".join(v.short_name for v in cls)
        raise ValueError(f"unknown model '{name}' (valid: {valid})")


_SHORT_NAMES = {
    ModelVariant.LSTM_NET: "lstm",
    ModelVariant.DNN_NET: "dnn",
    ModelVariant.RANDOM_FOREST: "rf",
    ModelVariant.LOGISTIC_REGRESSION: "lr",
}

_DISPLAY_NAMES = {
    ModelVariant.LSTM_NET: "LSTM-net",
    ModelVariant.DNN_NET: "DNN-net",
    ModelVariant.RANDOM_FOREST: "RF",
    ModelVariant.LOGISTIC_REGRESSION: "LR",
}

# Column order of the report tables
VARIANT_ORDER = list(ModelVariant)


class AdamConfig(BaseModel):
    """Adam hyperparameters."""

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=0.001, gt=0)
    beta1: float = Field(default=0.9, gt=0, lt=1)
    beta2: float = Field(default=0.999, gt=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)


class ForestConfig(BaseModel):
    """Random forest settings; ``features_per_split=None`` means ceil(sqrt(d))."""

    model_config = ConfigDict(frozen=True)

    tree_count: int = Field(default=50, ge=1)
    max_depth: int = Field(default=16, ge=1)
    min_leaf: int = Field(default=2, ge=1)
    features_per_split: int | None = Field(default=None, ge=1)
    bootstrap: bool = True

    def candidate_count(self, width: int) -> int:
        if self.features_per_split is not None:
            return min(self.features_per_split, width)
        return max(1, math.ceil(math.sqrt(width)))


class LogRegConfig(BaseModel):
    """Logistic regression settings (full-batch Adam)."""

    model_config = ConfigDict(frozen=True)

    l2_lambda: float = Field(default=1e-4, ge=0)
    epochs: int = Field(default=200, ge=1)
    learning_rate: float = Field(default=0.05, gt=0)


class ModelConfig(BaseModel):
    """
    Full configuration of one classifier.

    Only the block matching ``variant`` is used when training; the others keep
    their defaults so that one config object can describe any variant.
    """

    model_config = ConfigDict(frozen=True)

    variant: ModelVariant = ModelVariant.DNN_NET
    M: int = Field(default=5, ge=1)

    # LSTM-net
    lstm_hidden: int = Field(default=32, ge=1)
    feature_dense: int = Field(default=32, ge=1)
    lstm_head: list[int] = Field(default_factory=lambda: [32, 16])

    # DNN-net
    dnn_layers: list[int] = Field(default_factory=lambda: [64, 32, 16])

    # Network training
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=32, ge=1)
    adam: AdamConfig = Field(default_factory=AdamConfig)

    forest: ForestConfig = Field(default_factory=ForestConfig)
    logreg: LogRegConfig = Field(default_factory=LogRegConfig)

    seed: int = 0

    @field_validator("lstm_head", "dnn_layers")
    @classmethod
    def _positive_sizes(cls, value: list[int]) -> list[int]:
        if any(size < 1 for size in value):
            raise ValueError("layer sizes must be >= 1")
        return value

    @property
    def input_width(self) -> int:
        return self.M + 7


class SynthConfig(BaseModel):
    """
    Synthetic annotation-log generator settings.

    Defaults are calibrated to a skewed volunteer population in which
    logged-in users contribute about twice as many annotations as anonymous
    ones (20.99 vs 10.53 on average).
    """

    model_config = ConfigDict(frozen=True)

    user_count: int = Field(default=2000, ge=1)
    logged_in_fraction: float = Field(default=4085 / 6488, ge=0, le=1)

    # Per-user total annotations: 1 + Poisson(mean - 1) scaled by a
    # mean-one log-normal activity factor.
    anonymous_mean_annotations: float = Field(default=10.53, gt=1)
    logged_in_multiplier: float = Field(default=20.99 / 10.53, gt=0)
    activity_sigma: float = Field(default=1.35, gt=0)

    # Sessions
    mean_session_length: float = Field(default=6.0, gt=1)
    session_length_sigma: float = Field(default=0.4, gt=0)
    inter_session_gap_hours: float = Field(default=36.0, gt=0)
    force_single_session: bool = False

    # Within-session gaps (seconds), log-normal around a per-user median
    gap_log_mean: float = Field(default=3.7, gt=0)
    gap_log_sigma: float = Field(default=0.9, gt=0)
    user_gap_sigma: float = Field(default=0.5, gt=0)

    # Planted sequential signal
    signal_strength: float = Field(default=0.5, ge=0, le=1)
    signal_gain: float = Field(default=2.0, gt=0)

    start: str = "2019-10-01T00:00:00Z"
    span_days: float = Field(default=751.0, gt=0)
    seed: int = 42


class WindowMode(str, enum.Enum):
    """How the training window moves across forward-chaining folds."""
    EXPANDING = "expanding"
    SLIDING = "sliding"


class EvalConfig(BaseModel):
    """The experiment grid and its fixed protocol settings."""

    model_config = ConfigDict(frozen=True)

    gammas: list[int] = Field(default_factory=lambda: [2, 5, 8, 10, 15, 20, 25, 50, 75])
    Ms: list[int] = Field(default_factory=lambda: [5, 10])
    variants: list[ModelVariant] = Field(default_factory=lambda: list(VARIANT_ORDER))
    part_count: int = Field(default=5, ge=2)
    window: WindowMode = WindowMode.EXPANDING
    emit_policy: EmitPolicy = EmitPolicy.REQUIRE_FULL_WINDOW
    sessionizer: SessionizerConfig = Field(default_factory=SessionizerConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    seed: int = 42

    @field_validator("gammas", "Ms")
    @classmethod
    def _non_empty_positive(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("grid must not be empty")
        if any(v < 1 for v in value):
            raise ValueError("grid values must be >= 1")
        return value

    @field_validator("variants")
    @classmethod
    def _non_empty_variants(cls, value: list[ModelVariant]) -> list[ModelVariant]:
        if not value:
            raise ValueError("at least one model variant is required")
        return value
