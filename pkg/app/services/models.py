"""
The four engagement classifiers behind one interface.

Every variant trains on a dataset slice, stores the normalizer it was trained
with, scores raw feature vectors to [0, 1] and serializes to a versioned JSON
envelope.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Callable

import numpy as np
from pydantic import ValidationError

from app.core.errors import (
    InputError,
    ModelFormatError,
    ShapeError,
    UnsupportedSchemaError,
)
from app.core.seeding import derive_int_seed, derive_rng
from app.schemas.config import FeaturizerConfig, ModelConfig, ModelVariant
from app.services.featurizer import Dataset, DatasetItem, Normalizer, fit_normalizer
from app.services.forest import RandomForest, fit_forest
from app.services.nn_engine import (
    Batch,
    FeedForwardNet,
    LstmNet,
    Network,
    ParamStore,
    finite_diff_check,
    train_network,
)


logger = logging.getLogger(__name__)


SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    A fitted classifier.

    Networks (including logistic regression) keep their weights in ``params``;
    the random forest keeps its trees in ``forest``.
    """
    config: ModelConfig
    normalizer: Normalizer
    dataset_config: FeaturizerConfig | None = None
    params: ParamStore | None = None
    forest: RandomForest | None = None

    @property
    def variant(self) -> ModelVariant:
        return self.config.variant

    @property
    def M(self) -> int:
        return self.config.M

    @property
    def width(self) -> int:
        return self.config.input_width

    def score_matrix(self, raw: np.ndarray) -> np.ndarray:
        """
        Scores for raw (un-normalized) feature rows.

        Raises:
            ShapeError: If the row width is not M + 7.
        """
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        if raw.shape[1] != self.width:
            raise ShapeError(f"model expects {self.width} features, got {raw.shape[1]}")
        x = self.normalizer.transform(raw)
        if self.forest is not None:
            scores = self.forest.predict(x)
        else:
            scores = build_network(self.config).predict(self.params, x)
        return np.clip(scores, 0.0, 1.0)


def build_network(config: ModelConfig) -> Network:
    """
    Architecture for a network variant.

    Raises:
        InputError: For the random forest, which is not a network.
    """
    if config.variant == ModelVariant.LSTM_NET:
        return LstmNet(
            M=config.M,
            hidden=config.lstm_hidden,
            feature_dense=config.feature_dense,
            head=config.lstm_head,
        )
    if config.variant == ModelVariant.DNN_NET:
        return FeedForwardNet(config.input_width, config.dnn_layers)
    if config.variant == ModelVariant.LOGISTIC_REGRESSION:
        return FeedForwardNet(config.input_width, [], l2=config.logreg.l2_lambda)
    raise InputError(f"{config.variant.value} is not a network")


# ============================================================================
# Training
# ============================================================================

def _prepare(
    train: Dataset,
    config: ModelConfig,
    normalizer: Normalizer | None,
) -> tuple[np.ndarray, np.ndarray, Normalizer]:
    if len(train) == 0:
        raise InputError("cannot train on an empty slice")
    if train.config.M != config.M:
        raise ShapeError(f"dataset has M={train.config.M} but the model expects M={config.M}")
    normalizer = normalizer or fit_normalizer(train)
    x = normalizer.transform(train.features)
    y = train.labels.astype(np.float64)
    return x, y, normalizer


def _train_net(
    train: Dataset,
    config: ModelConfig,
    normalizer: Normalizer | None,
    variant: ModelVariant,
) -> TrainedModel:
    config = config.model_copy(update={"variant": variant})
    x, y, normalizer = _prepare(train, config, normalizer)
    network = build_network(config)
    rng = derive_rng(config.seed, "model", variant.value)

    if variant == ModelVariant.LOGISTIC_REGRESSION:
        adam = config.adam.model_copy(update={"learning_rate": config.logreg.learning_rate})
        params = train_network(
            network, x, y,
            epochs=config.logreg.epochs,
            batch_size=len(x),
            adam=adam,
            rng=rng,
            shuffle=False,
        )
    else:
        params = train_network(
            network, x, y,
            epochs=config.epochs,
            batch_size=config.batch_size,
            adam=config.adam,
            rng=rng,
        )

    logger.info(f"Trained {variant.display_name} on {len(x)} items ({params.size} parameters)")
    return TrainedModel(config=config, normalizer=normalizer, dataset_config=train.config, params=params)


def train_lstm_net(train: Dataset, config: ModelConfig, normalizer: Normalizer | None = None) -> TrainedModel:
    """
    Train the two-input recurrent net.

    Args:
        train: Training slice.
        config: Model configuration; ``variant`` is forced to lstm_net.
        normalizer: Normalizer to use; fitted on ``train`` when omitted.

    Returns:
        TrainedModel: Fitted model with its normalizer.

    Raises:
        InputError: If the slice is empty or M disagrees.
        NonFiniteLossError: If training diverges.
    """
    return _train_net(train, config, normalizer, ModelVariant.LSTM_NET)


def train_dnn_net(train: Dataset, config: ModelConfig, normalizer: Normalizer | None = None) -> TrainedModel:
    """Train the three-hidden-layer feed-forward net on the full M + 7 vector."""
    return _train_net(train, config, normalizer, ModelVariant.DNN_NET)


def train_logreg(train: Dataset, config: ModelConfig, normalizer: Normalizer | None = None) -> TrainedModel:
    """Train L2-penalized logistic regression with full-batch Adam."""
    return _train_net(train, config, normalizer, ModelVariant.LOGISTIC_REGRESSION)


def train_random_forest(train: Dataset, config: ModelConfig, normalizer: Normalizer | None = None) -> TrainedModel:
    """Train the bagged CART forest."""
    config = config.model_copy(update={"variant": ModelVariant.RANDOM_FOREST})
    x, y, normalizer = _prepare(train, config, normalizer)
    forest = fit_forest(x, y, config.forest, seed=derive_int_seed(config.seed, "model", config.variant.value))
    logger.info(f"Trained RF on {len(x)} items ({len(forest.trees)} trees)")
    return TrainedModel(config=config, normalizer=normalizer, dataset_config=train.config, forest=forest)


TRAINERS: dict[ModelVariant, Callable[..., TrainedModel]] = {
    ModelVariant.LSTM_NET: train_lstm_net,
    ModelVariant.DNN_NET: train_dnn_net,
    ModelVariant.RANDOM_FOREST: train_random_forest,
    ModelVariant.LOGISTIC_REGRESSION: train_logreg,
}


def train_model(train: Dataset, config: ModelConfig, normalizer: Normalizer | None = None) -> TrainedModel:
    """Dispatch on ``config.variant``."""
    return TRAINERS[config.variant](train, config, normalizer)


# ============================================================================
# Scoring
# ============================================================================

def predict_proba(model: TrainedModel, item: DatasetItem) -> float:
    """
    Score one item after applying the model's normalizer.

    Raises:
        ShapeError: If the item width does not match the model.
    """
    if item.width != model.width:
        raise ShapeError(f"item has {item.width} features, model expects {model.width}")
    return float(model.score_matrix(item.vector[np.newaxis, :])[0])


def score_dataset(model: TrainedModel, items: Dataset) -> np.ndarray:
    """Scores for every item of a dataset slice, in order."""
    if len(items) == 0:
        return np.zeros(0)
    return model.score_matrix(items.features)


# ============================================================================
# Persistence
# ============================================================================

def model_filename(variant: ModelVariant, M: int, gamma: int, fold: int | str) -> str:
    return f"{variant.value}_M{M}_g{gamma}_fold{fold}.model.json"


def model_to_dict(model: TrainedModel) -> dict[str, Any]:
    envelope: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "variant": model.variant.value,
        "config": model.config.model_dump(mode="json"),
        "dataset_config": model.dataset_config.model_dump(mode="json") if model.dataset_config else None,
        "normalizer": model.normalizer.to_dict(),
    }
    if model.forest is not None:
        envelope["forest"] = model.forest.to_dict()
    else:
        envelope["parameters"] = model.params.to_dict()
    return envelope


def save_model(model: TrainedModel, sink: IO[str] | str | Path) -> None:
    """Write the model as a JSON envelope to a path or an open text stream."""
    text = json.dumps(model_to_dict(model), sort_keys=True) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def model_from_dict(data: dict[str, Any]) -> TrainedModel:
    """
    Rebuild a model from its JSON envelope.

    Raises:
        UnsupportedSchemaError: If schema_version or variant is unknown.
        ModelFormatError: If any block is missing or malformed.
    """
    if not isinstance(data, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise UnsupportedSchemaError(f"unsupported model schema_version {version!r} (expected {SCHEMA_VERSION})")
    try:
        variant = ModelVariant(data.get("variant"))
    except ValueError:
        raise UnsupportedSchemaError(f"unsupported model variant {data.get('variant')!r}") from None

    try:
        config = ModelConfig.model_validate(data["config"])
        dataset_config = (
            FeaturizerConfig.model_validate(data["dataset_config"]) if data.get("dataset_config") else None
        )
        normalizer = Normalizer.from_dict(data["normalizer"])
    except (KeyError, TypeError, ValidationError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    if config.variant != variant:
        raise ModelFormatError("variant does not match the stored config")
    if normalizer.width != config.input_width:
        raise ModelFormatError("normalizer width does not match the model")

    if variant == ModelVariant.RANDOM_FOREST:
        if "forest" not in data:
            raise ModelFormatError("random forest model lacks its trees")
        forest = RandomForest.from_dict(data["forest"])
        if forest.width != config.input_width:
            raise ModelFormatError("forest width does not match the model")
        return TrainedModel(config=config, normalizer=normalizer, dataset_config=dataset_config, forest=forest)

    if "parameters" not in data:
        raise ModelFormatError("network model lacks its parameters")
    params = ParamStore.from_dict(data["parameters"])
    expected = build_network(config).init_params(np.random.default_rng(0)).shapes
    if params.shapes != expected:
        raise ModelFormatError("parameter arrays do not match the configured architecture")
    return TrainedModel(config=config, normalizer=normalizer, dataset_config=dataset_config, params=params)


def load_model(source: IO[str] | str | Path) -> TrainedModel:
    """
    Read a model written by ``save_model``.

    Raises:
        ModelFormatError: If the file is truncated or not valid JSON.
        UnsupportedSchemaError: If the schema version or variant is unknown.
    """
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ModelFormatError(f"cannot read model file: {exc}") from None
    else:
        text = source.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(data)


# ============================================================================
# Gradient check
# ============================================================================

def run_gradient_check(variant: ModelVariant, seed: int, h: float = 1e-5, batch_size: int = 4) -> float:
    """
    Max relative gradient error of a network variant on a random batch.

    Weights come from the usual initializer; biases are drawn from N(0, 0.1)
    so that their gradients are exercised away from zero.
    """
    config = ModelConfig(variant=variant)
    network = build_network(config)
    rng = derive_rng(seed, "gradcheck", variant.value)
    params = network.init_params(rng)
    for name, array in params.items():
        if name.endswith("bias"):
            params[name] = array + rng.normal(0.0, 0.1, size=array.shape)
    batch = Batch(
        x=rng.normal(size=(batch_size, network.width)),
        y=rng.integers(0, 2, size=batch_size).astype(np.float64),
    )
    error = finite_diff_check(network, params, batch, h=h, rng=rng)
    logger.info(f"Gradient check {variant.display_name} seed={seed}: max relative error {error:.3e}")
    return error
