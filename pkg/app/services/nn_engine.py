"""
Numerical core for the neural classifiers.

Dense layers, ReLU/sigmoid, an LSTM cell, binary cross-entropy, hand-written
reverse-mode gradients for the two fixed architectures, Adam, and a central
finite-difference gradient checker. Everything runs in float64 on numpy.

Weight matrices are stored with shape (out, in); a dense layer maps a batch
``x`` of shape (B, in) to ``x @ W.T + b``.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from app.core.errors import (
    InputError,
    ModelFormatError,
    NonFiniteGradientError,
    NonFiniteLossError,
    ShapeError,
)
from app.schemas.config import AdamConfig


logger = logging.getLogger(__name__)


BCE_EPSILON = 1e-12

# denominator floor of the relative error in finite_diff_check
GRADIENT_FLOOR = 1e-8


# ============================================================================
# Parameters
# ============================================================================

class ParamStore:
    """
    Named float64 arrays (weights, biases, LSTM gate matrices).

    Insertion order is the canonical order used for serialization and for
    byte-level comparisons.
    """

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, array in (arrays or {}).items():
            self[name] = array

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, array: np.ndarray) -> None:
        self._arrays[name] = np.ascontiguousarray(array, dtype=np.float64)

    def __contains__(self, name: object) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def names(self) -> list[str]:
        return list(self._arrays)

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: array.shape for name, array in self._arrays.items()}

    @property
    def size(self) -> int:
        return sum(array.size for array in self._arrays.values())

    def zeros_like(self) -> "ParamStore":
        return ParamStore({name: np.zeros_like(array) for name, array in self._arrays.items()})

    def copy(self) -> "ParamStore":
        return ParamStore({name: array.copy() for name, array in self._arrays.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(array).all() for array in self._arrays.values())

    def tobytes(self) -> bytes:
        return b"".join(self._arrays[name].tobytes() for name in self._arrays)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        """Flat arrays with shapes, JSON-ready."""
        return {
            name: {"shape": list(array.shape), "data": array.reshape(-1).tolist()}
            for name, array in self._arrays.items()
        }

    @classmethod
    def from_dict(cls, data: dict[str, dict[str, Any]]) -> "ParamStore":
        store = cls()
        for name, entry in data.items():
            try:
                shape = tuple(int(n) for n in entry["shape"])
                flat = np.array(entry["data"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise ModelFormatError(f"malformed parameter array '{name}': {exc}") from None
            if flat.size != math.prod(shape):
                raise ModelFormatError(
                    f"parameter array '{name}' has {flat.size} values for shape {shape}"
                )
            if not np.isfinite(flat).all():
                raise ModelFormatError(f"parameter array '{name}' has non-finite values")
            store[name] = flat.reshape(shape)
        return store


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# ============================================================================
# Primitive operations
# ============================================================================

def dense_forward(inputs: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    Affine map ``W·x + b`` for a vector or a batch of row vectors.

    Raises:
        ShapeError: If the shapes do not agree.
    """
    x = np.asarray(inputs, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    b = np.asarray(bias, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"cannot apply weights {W.shape} and bias {b.shape} to input {x.shape}"
        )
    return x @ W.T + b


def relu(values: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(values, dtype=np.float64), 0.0)


def sigmoid(values: np.ndarray | float) -> np.ndarray:
    """Logistic function; negative inputs use e^x/(1+e^x) so nothing overflows."""
    x = np.asarray(values, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def bce_loss(prediction: np.ndarray | float, label: np.ndarray | float) -> np.ndarray | float:
    """Binary cross-entropy with the prediction clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(np.asarray(prediction, dtype=np.float64), BCE_EPSILON, 1.0 - BCE_EPSILON)
    y = np.asarray(label, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-item BCE of sigmoid(logits), evaluated without forming the sigmoid."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


# ============================================================================
# LSTM cell
# ============================================================================

@dataclass
class _LstmStep:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


def _lstm_run(
    sequence: np.ndarray,
    input_weight: np.ndarray,
    recurrent_weight: np.ndarray,
    bias: np.ndarray,
) -> tuple[np.ndarray, list[_LstmStep]]:
    """Run the recurrence over a (B, T, D) batch; gate order is i, f, o, g."""
    batch, steps, _ = sequence.shape
    H = recurrent_weight.shape[1]
    h = np.zeros((batch, H))
    c = np.zeros((batch, H))
    cache: list[_LstmStep] = []
    for t in range(steps):
        x_t = sequence[:, t, :]
        a = x_t @ input_weight.T + h @ recurrent_weight.T + bias
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H:2 * H])
        o = sigmoid(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        cache.append(_LstmStep(x=x_t, h_prev=h, c_prev=c, i=i, f=f, o=o, g=g, tanh_c=tanh_c))
        h = o * tanh_c
        c = c_new
    return h, cache


def _lstm_backward(
    dh: np.ndarray,
    cache: list[_LstmStep],
    recurrent_weight: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagate through time from the gradient on the final hidden state."""
    H = recurrent_weight.shape[1]
    d_input = np.zeros((4 * H, cache[0].x.shape[1]))
    d_recurrent = np.zeros((4 * H, H))
    d_bias = np.zeros(4 * H)
    dc = np.zeros_like(dh)
    for step in reversed(cache):
        do = dh * step.tanh_c
        dc = dc + dh * step.o * (1.0 - step.tanh_c ** 2)
        di = dc * step.g
        dg = dc * step.i
        df = dc * step.c_prev
        da = np.concatenate(
            [
                di * step.i * (1.0 - step.i),
                df * step.f * (1.0 - step.f),
                do * step.o * (1.0 - step.o),
                dg * (1.0 - step.g ** 2),
            ],
            axis=1,
        )
        d_input += da.T @ step.x
        d_recurrent += da.T @ step.h_prev
        d_bias += da.sum(axis=0)
        dh = da @ recurrent_weight
        dc = dc * step.f
    return d_input, d_recurrent, d_bias


def lstm_forward(sequence: np.ndarray | list, params: ParamStore, prefix: str = "lstm") -> np.ndarray:
    """
    Final hidden state of an LSTM over one sequence, from zero initial state.

    Args:
        sequence: T input vectors of equal width D (shape (T, D), or (T,) for D=1).
        params: Store holding ``<prefix>.input_weight`` (4H, D),
            ``<prefix>.recurrent_weight`` (4H, H) and ``<prefix>.bias`` (4H).

    Returns:
        np.ndarray: h_T of length H.

    Raises:
        InputError: If the sequence is empty.
        ShapeError: If step widths differ or do not match the weights.
    """
    try:
        steps = np.asarray(sequence, dtype=np.float64)
    except ValueError:
        raise ShapeError("sequence steps must all have the same width") from None
    if steps.size == 0 or steps.shape[0] == 0:
        raise InputError("cannot run an LSTM over an empty sequence")
    if steps.ndim == 1:
        steps = steps[:, np.newaxis]
    input_weight = params[f"{prefix}.input_weight"]
    if steps.ndim != 2 or steps.shape[1] != input_weight.shape[1]:
        raise ShapeError(
            f"sequence of shape {steps.shape} does not match input weight {input_weight.shape}"
        )
    h, _ = _lstm_run(
        steps[np.newaxis, :, :],
        input_weight,
        params[f"{prefix}.recurrent_weight"],
        params[f"{prefix}.bias"],
    )
    return h[0]


# ============================================================================
# Architectures
# ============================================================================

@dataclass(frozen=True)
class Batch:
    """Feature rows ``x`` of shape (B, width) with binary labels ``y``."""
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


class Network(ABC):
    """
    A fixed architecture ending in one sigmoid unit.

    The loss is mean binary cross-entropy plus ``l2 / 2`` times the squared
    norm of every ``*.weight`` array.
    """

    width: int
    l2: float = 0.0

    @abstractmethod
    def init_params(self, rng: np.random.Generator) -> ParamStore: ...

    @abstractmethod
    def forward(self, params: ParamStore, x: np.ndarray) -> tuple[np.ndarray, Any]:
        """Logits of shape (B,) and the cache needed by ``backward_logits``."""

    @abstractmethod
    def backward_logits(self, params: ParamStore, cache: Any, d_logits: np.ndarray) -> ParamStore:
        """Parameter gradients given the gradient on the logits."""

    def _check_width(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.width:
            raise ShapeError(f"expected {self.width} input features, got {x.shape[1]}")
        return x

    def predict(self, params: ParamStore, x: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(params, self._check_width(x))
        return sigmoid(logits)

    def _penalty(self, params: ParamStore) -> float:
        if not self.l2:
            return 0.0
        return 0.5 * self.l2 * sum(
            float(np.sum(array ** 2)) for name, array in params.items() if name.endswith(".weight")
        )

    def loss(self, params: ParamStore, batch: Batch) -> float:
        logits, _ = self.forward(params, self._check_width(batch.x))
        return float(bce_with_logits(logits, batch.y).mean()) + self._penalty(params)

    def loss_and_grad(self, params: ParamStore, batch: Batch) -> tuple[float, ParamStore]:
        x = self._check_width(batch.x)
        y = np.asarray(batch.y, dtype=np.float64)
        logits, cache = self.forward(params, x)
        loss = float(bce_with_logits(logits, y).mean()) + self._penalty(params)
        d_logits = (sigmoid(logits) - y) / x.shape[0]
        grads = self.backward_logits(params, cache, d_logits)
        if self.l2:
            for name, array in params.items():
                if name.endswith(".weight"):
                    grads[name] = grads[name] + self.l2 * array
        return loss, grads


def _dense_stack_init(
    rng: np.random.Generator,
    store: ParamStore,
    prefix: str,
    sizes: list[int],
) -> None:
    for index, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        store[f"{prefix}_{index}.weight"] = glorot_uniform(rng, fan_out, fan_in)
        store[f"{prefix}_{index}.bias"] = np.zeros(fan_out)


def _dense_stack_forward(params: ParamStore, prefix: str, layers: int, a: np.ndarray):
    cache = []
    for index in range(layers):
        z = a @ params[f"{prefix}_{index}.weight"].T + params[f"{prefix}_{index}.bias"]
        cache.append((a, z))
        a = relu(z)
    return a, cache


def _dense_stack_backward(params: ParamStore, prefix: str, cache, da: np.ndarray, grads: ParamStore) -> np.ndarray:
    for index in reversed(range(len(cache))):
        a_prev, z = cache[index]
        dz = da * (z > 0)
        grads[f"{prefix}_{index}.weight"] = dz.T @ a_prev
        grads[f"{prefix}_{index}.bias"] = dz.sum(axis=0)
        da = dz @ params[f"{prefix}_{index}.weight"]
    return da


def _output_init(rng: np.random.Generator, store: ParamStore, fan_in: int) -> None:
    store["output.weight"] = glorot_uniform(rng, 1, fan_in)
    store["output.bias"] = np.zeros(1)


class FeedForwardNet(Network):
    """
    ReLU hidden layers followed by a sigmoid unit.

    With no hidden layers this is logistic regression.
    """

    def __init__(self, width: int, hidden: list[int], l2: float = 0.0):
        self.width = width
        self.hidden = list(hidden)
        self.l2 = l2

    def init_params(self, rng: np.random.Generator) -> ParamStore:
        store = ParamStore()
        _dense_stack_init(rng, store, "dense", [self.width] + self.hidden)
        _output_init(rng, store, self.hidden[-1] if self.hidden else self.width)
        return store

    def forward(self, params: ParamStore, x: np.ndarray):
        a, cache = _dense_stack_forward(params, "dense", len(self.hidden), x)
        logits = (a @ params["output.weight"].T + params["output.bias"])[:, 0]
        return logits, (a, cache)

    def backward_logits(self, params: ParamStore, cache, d_logits: np.ndarray) -> ParamStore:
        a_last, stack = cache
        grads = ParamStore()
        d_out = d_logits[:, np.newaxis]
        hidden_grads = ParamStore()
        da = d_out @ params["output.weight"]
        _dense_stack_backward(params, "dense", stack, da, hidden_grads)
        # keep the parameter order of the store
        for name in params:
            if name == "output.weight":
                grads[name] = d_out.T @ a_last
            elif name == "output.bias":
                grads[name] = d_out.sum(axis=0)
            else:
                grads[name] = hidden_grads[name]
        return grads


class LstmNet(Network):
    """
    Two-input recurrent classifier.

    The M deltas run through an LSTM as a sequence of scalars (oldest first);
    the seven engineered features go through one dense ReLU layer. Both
    outputs are concatenated and passed through the ReLU head and a sigmoid unit.
    """

    def __init__(self, M: int, hidden: int, feature_dense: int, head: list[int],
                 n_features: int = 7, l2: float = 0.0):
        self.M = M
        self.hidden = hidden
        self.feature_dense = feature_dense
        self.head = list(head)
        self.n_features = n_features
        self.width = M + n_features
        self.l2 = l2

    def init_params(self, rng: np.random.Generator) -> ParamStore:
        H = self.hidden
        store = ParamStore()
        store["lstm.input_weight"] = np.concatenate([glorot_uniform(rng, H, 1) for _ in range(4)])
        store["lstm.recurrent_weight"] = np.concatenate([glorot_uniform(rng, H, H) for _ in range(4)])
        bias = np.zeros(4 * H)
        bias[H:2 * H] = 1.0  # forget gate
        store["lstm.bias"] = bias
        store["features.weight"] = glorot_uniform(rng, self.feature_dense, self.n_features)
        store["features.bias"] = np.zeros(self.feature_dense)
        _dense_stack_init(rng, store, "head", [H + self.feature_dense] + self.head)
        _output_init(rng, store, self.head[-1] if self.head else H + self.feature_dense)
        return store

    def forward(self, params: ParamStore, x: np.ndarray):
        sequence = x[:, :self.M, np.newaxis]
        features = x[:, self.M:]
        h, lstm_cache = _lstm_run(
            sequence, params["lstm.input_weight"], params["lstm.recurrent_weight"], params["lstm.bias"]
        )
        zf = features @ params["features.weight"].T + params["features.bias"]
        joined = np.concatenate([h, relu(zf)], axis=1)
        a, head_cache = _dense_stack_forward(params, "head", len(self.head), joined)
        logits = (a @ params["output.weight"].T + params["output.bias"])[:, 0]
        return logits, (features, zf, lstm_cache, a, head_cache)

    def backward_logits(self, params: ParamStore, cache, d_logits: np.ndarray) -> ParamStore:
        features, zf, lstm_cache, a_last, head_cache = cache
        partial = ParamStore()
        d_out = d_logits[:, np.newaxis]
        partial["output.weight"] = d_out.T @ a_last
        partial["output.bias"] = d_out.sum(axis=0)

        d_joined = _dense_stack_backward(params, "head", head_cache, d_out @ params["output.weight"], partial)
        H = self.hidden
        dh = d_joined[:, :H]
        dzf = d_joined[:, H:] * (zf > 0)
        partial["features.weight"] = dzf.T @ features
        partial["features.bias"] = dzf.sum(axis=0)

        d_input, d_recurrent, d_bias = _lstm_backward(dh, lstm_cache, params["lstm.recurrent_weight"])
        partial["lstm.input_weight"] = d_input
        partial["lstm.recurrent_weight"] = d_recurrent
        partial["lstm.bias"] = d_bias

        return ParamStore({name: partial[name] for name in params})


def backward(network: Network, params: ParamStore, batch: Batch) -> ParamStore:
    """Exact gradients of the mean batch loss with respect to every parameter."""
    return network.loss_and_grad(params, batch)[1]


# ============================================================================
# Optimizer
# ============================================================================

@dataclass
class AdamState:
    """First and second moments, step counter and hyperparameters."""
    m: ParamStore
    v: ParamStore
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def create(cls, params: ParamStore, config: AdamConfig | None = None) -> "AdamState":
        config = config or AdamConfig()
        return cls(
            m=params.zeros_like(),
            v=params.zeros_like(),
            lr=config.learning_rate,
            beta1=config.beta1,
            beta2=config.beta2,
            epsilon=config.epsilon,
        )


def adam_step(params: ParamStore, grads: ParamStore, state: AdamState) -> tuple[ParamStore, AdamState]:
    """
    One bias-corrected Adam update, applied in place.

    Raises:
        ShapeError: If gradient and parameter shapes differ.
        NonFiniteGradientError: If a gradient array holds NaN or infinity.
    """
    for name, array in params.items():
        if name not in grads or grads[name].shape != array.shape:
            raise ShapeError(f"gradient for '{name}' is missing or has the wrong shape")
        if not np.isfinite(grads[name]).all():
            raise NonFiniteGradientError(name)

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, array in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        array -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return params, state


# ============================================================================
# Training
# ============================================================================

def train_network(
    network: Network,
    x: np.ndarray,
    y: np.ndarray,
    *,
    epochs: int,
    batch_size: int,
    adam: AdamConfig,
    rng: np.random.Generator,
    shuffle: bool = True,
) -> ParamStore:
    """
    Initialize and train a network with Adam on mean BCE.

    Samples are reshuffled each epoch with ``rng``; a batch size at least the
    training size gives full-batch descent.

    Raises:
        InputError: If there is no training data.
        NonFiniteLossError: If the loss becomes NaN or infinite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise InputError("cannot train on an empty slice")

    params = network.init_params(rng)
    state = AdamState.create(params, adam)
    for epoch in range(epochs):
        order = rng.permutation(n) if shuffle else np.arange(n)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            loss, grads = network.loss_and_grad(params, Batch(x[idx], y[idx]))
            if not math.isfinite(loss):
                raise NonFiniteLossError(epoch + 1, batch_index + 1)
            adam_step(params, grads, state)
            epoch_loss += loss * len(idx)
        logger.debug(f"epoch {epoch + 1}/{epochs}: loss={epoch_loss / n:.6f}")
    return params


# ============================================================================
# Gradient checking
# ============================================================================

def finite_diff_check(
    network: Network,
    params: ParamStore,
    batch: Batch,
    h: float = 1e-5,
    coords_per_array: int = 16,
    rng: np.random.Generator | None = None,
) -> float:
    """
    Compare analytic gradients with central differences on sampled coordinates.

    Returns:
        float: Max relative error |a - n| / max(|a|, |n|, 1e-8).

    Raises:
        InputError: If ``h`` is not positive.
    """
    if h <= 0:
        raise InputError("perturbation h must be positive")
    rng = rng or np.random.default_rng(0)
    _, analytic = network.loss_and_grad(params, batch)

    def relative_error(array: np.ndarray, flat_index: int, exact: float) -> float:
        original = array.flat[flat_index]
        array.flat[flat_index] = original + h
        loss_plus = network.loss(params, batch)
        array.flat[flat_index] = original - h
        loss_minus = network.loss(params, batch)
        array.flat[flat_index] = original
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        return abs(exact - numeric) / max(abs(exact), abs(numeric), GRADIENT_FLOOR)

    worst = 0.0
    for name, array in params.items():
        count = min(coords_per_array, array.size)
        for flat_index in rng.choice(array.size, size=count, replace=False):
            exact = float(analytic[name].flat[flat_index])
            worst = max(worst, relative_error(array, flat_index, exact))
    return worst
