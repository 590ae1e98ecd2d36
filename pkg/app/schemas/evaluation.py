"""
Pydantic schemas for evaluation results.
"""

from pydantic import BaseModel, Field

from app.schemas.config import ModelVariant, WindowMode


class RocPoint(BaseModel):
    """One point of an ROC curve; ``threshold`` is ``None`` for the (0, 0) start."""
    false_positive_rate: float = Field(..., ge=0, le=1)
    true_positive_rate: float = Field(..., ge=0, le=1)
    threshold: float | None


class ThresholdRow(BaseModel):
    """Confusion-derived metrics when predicting positive iff score >= threshold."""
    threshold: float | None
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    specificity: float = Field(..., ge=0, le=1)


class FoldResult(BaseModel):
    """Outcome of one forward-chaining fold for one model."""
    fold: int = Field(..., ge=1)
    train_size: int
    test_size: int
    test_positive_rate: float
    auc: float | None = Field(None, ge=0, le=1)
    degenerate: bool = False
    seed: int
    roc: list[RocPoint] = Field(default_factory=list)


class EvalCell(BaseModel):
    """
    Mean and population standard deviation of AUC over the folds of one
    (variant, gamma, M) cell. ``mean_auc``/``std_auc`` are ``None`` when any
    fold is degenerate.
    """
    variant: ModelVariant
    gamma: int
    M: int
    window: WindowMode = WindowMode.EXPANDING
    item_count: int
    fold_aucs: list[float | None]
    mean_auc: float | None
    std_auc: float | None
    degenerate: bool = False
    degenerate_folds: list[int] = Field(default_factory=list)
    folds: list[FoldResult] = Field(default_factory=list)

    def formatted(self) -> str:
        """Render as ``0.679±0.036``, or ``degenerate``."""
        if self.mean_auc is None or self.std_auc is None:
            return "degenerate"
        return f"{self.mean_auc:.3f}±{self.std_auc:.3f}"
