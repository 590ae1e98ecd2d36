"""
Pydantic schemas package.
"""

from app.schemas.config import (
    AdamConfig,
    EmitPolicy,
    EvalConfig,
    FeaturizerConfig,
    ForestConfig,
    LogRegConfig,
    ModelConfig,
    ModelVariant,
    SessionizerConfig,
    SynthConfig,
    WindowMode,
)
from app.schemas.stats import LogSummary, SessionSummary
from app.schemas.evaluation import EvalCell, FoldResult, RocPoint, ThresholdRow
from app.schemas.manifest import RunManifest

__all__ = [
    # Configs
    "AdamConfig",
    "EmitPolicy",
    "EvalConfig",
    "FeaturizerConfig",
    "ForestConfig",
    "LogRegConfig",
    "ModelConfig",
    "ModelVariant",
    "SessionizerConfig",
    "SynthConfig",
    "WindowMode",
    # Statistics
    "LogSummary",
    "SessionSummary",
    # Evaluation
    "EvalCell",
    "FoldResult",
    "RocPoint",
    "ThresholdRow",
    # Runs
    "RunManifest",
]
