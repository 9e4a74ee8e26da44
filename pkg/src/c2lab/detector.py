"""Record-size MLP classifier.

A fully connected net over the 20 leading record sizes of a flow:
20 -> 2048 -> 1024 -> 512 -> 2 with ReLU hiddens, softmax output, inverted
dropout on every hidden layer while training, Adam updates, cross-entropy
loss. Inputs are scaled by 1/16408 so sizes land in (0, 1] and pad entries
become -1/16408.

Class order is fixed: column 0 is C2, column 1 is benign. Ties go to C2;
flagging traffic for a second look is the cheap mistake.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import Dataset, FeatureVector, Label, MAX_RECORD_SIZE

NORM_SCALE = float(MAX_RECORD_SIZE)
CLASS_ORDER = (Label.C2, Label.NON_C2)
LABEL_INDEX = {Label.C2: 0, Label.NON_C2: 1}

_MAGIC = b"SZMLP1\n"


@dataclass
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (2048, 1024, 512)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout_rate: float = 0.20
    batch_size: int = 128
    max_epochs: int = 20
    val_fraction: float = 0.15
    patience: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not 0 < self.val_fraction < 0.5:
            raise ValueError("val_fraction must be in (0, 0.5)")


@dataclass
class DetectorParams:
    """Weights and biases, first hidden layer to output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm_scale: float = NORM_SCALE

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "DetectorParams":
        return DetectorParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.norm_scale,
        )

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        input_len: int = 20,
        hidden_sizes: Sequence[int] = (2048, 1024, 512),
        n_classes: int = 2,
        dtype: str = "float32",
    ) -> "DetectorParams":
        sizes = [input_len, *hidden_sizes, n_classes]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)  # He, matches the ReLU hiddens
            weights.append((rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = json.dumps(
            {
                "layer_sizes": self.layer_sizes,
                "dtypes": [str(w.dtype) for w in self.weights],
                "norm_scale": self.norm_scale,
            },
            sort_keys=True,
        ).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for w, b in zip(self.weights, self.biases):
                fh.write(np.ascontiguousarray(w, dtype=w.dtype.newbyteorder("<")).tobytes())
                fh.write(np.ascontiguousarray(b, dtype=b.dtype.newbyteorder("<")).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "DetectorParams":
        with open(path, "rb") as fh:
            magic = fh.read(len(_MAGIC))
            if magic != _MAGIC:
                raise ValueError(f"{path}: not a detector parameter file")
            (header_len,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(header_len))
            sizes = header["layer_sizes"]
            dtypes = header["dtypes"]
            weights, biases = [], []
            for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
                dt = np.dtype(dtypes[i]).newbyteorder("<")
                w_bytes = fh.read(fan_in * fan_out * dt.itemsize)
                b_bytes = fh.read(fan_out * dt.itemsize)
                if len(w_bytes) + len(b_bytes) != (fan_in + 1) * fan_out * dt.itemsize:
                    raise ValueError(f"{path}: parameter data shorter than header promises")
                weights.append(np.frombuffer(w_bytes, dtype=dt).reshape(fan_in, fan_out).astype(dtypes[i]))
                biases.append(np.frombuffer(b_bytes, dtype=dt).astype(dtypes[i]))
            if fh.read(1):
                raise ValueError(f"{path}: trailing bytes after parameters")
        return cls(weights, biases, float(header["norm_scale"]))


def normalize(x_raw: np.ndarray, norm_scale: float = NORM_SCALE) -> np.ndarray:
    return np.asarray(x_raw, dtype=np.float64) / norm_scale


def denormalize(x_norm: np.ndarray, norm_scale: float = NORM_SCALE) -> np.ndarray:
    return np.asarray(x_norm, dtype=np.float64) * norm_scale


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(
    params: DetectorParams,
    x_norm: np.ndarray,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Class probabilities for normalized inputs, shape (..., 2).

    Dropout only fires when training is set; evaluation is deterministic.
    """
    h = np.atleast_2d(np.asarray(x_norm))
    n_layers = len(params.weights)
    for i in range(n_layers - 1):
        h = np.maximum(h @ params.weights[i] + params.biases[i], 0)
        if training and dropout_rate > 0:
            if rng is None:
                raise ValueError("dropout requires an rng")
            keep = 1.0 - dropout_rate
            mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
            h = h * mask
    logits = h @ params.weights[-1] + params.biases[-1]
    probs = _softmax(logits)
    return probs if np.ndim(x_norm) > 1 else probs[0]


def predict_proba(params: DetectorParams, features: np.ndarray | Sequence[FeatureVector]) -> np.ndarray:
    """Probabilities from raw (unnormalized) feature rows."""
    x = _as_raw_matrix(features)
    return forward(params, normalize(x, params.norm_scale))


def predict(params: DetectorParams, features: np.ndarray | Sequence[FeatureVector]) -> list[Label]:
    probs = np.atleast_2d(predict_proba(params, features))
    return [Label.C2 if p[0] >= p[1] else Label.NON_C2 for p in probs]


def _as_raw_matrix(features: np.ndarray | Sequence[FeatureVector] | Dataset) -> np.ndarray:
    if isinstance(features, Dataset):
        features = [s.features for s in features.samples]
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features)
    return np.array([fv.values for fv in features], dtype=np.float64)


def dataset_matrices(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Raw feature matrix and integer class vector for a dataset."""
    x = np.array([s.features.values for s in dataset.samples], dtype=np.float64)
    y = np.array([LABEL_INDEX[s.label] for s in dataset.samples], dtype=np.int64)
    return x, y


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    # logsumexp form keeps the loss exact for the gradient checks
    z = np.atleast_2d(logits)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(z)), y]))


def _forward_cached(params: DetectorParams, x: np.ndarray, dropout_rate: float, rng) -> tuple:
    acts = [x]
    masks = []
    h = x
    for i in range(len(params.weights) - 1):
        h = np.maximum(h @ params.weights[i] + params.biases[i], 0)
        if dropout_rate > 0:
            keep = 1.0 - dropout_rate
            mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        acts.append(h)
    logits = h @ params.weights[-1] + params.biases[-1]
    return acts, masks, logits


def _backward(params: DetectorParams, acts, masks, logits, y) -> tuple[list, list, np.ndarray]:
    """Gradients of mean cross-entropy wrt every weight, bias, and the input."""
    n = len(logits)
    probs = _softmax(logits)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ params.weights[i].T
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * (acts[i] > 0)
        else:
            delta = delta @ params.weights[0].T
    return grads_w, grads_b, delta


def input_gradient(params: DetectorParams, x_norm: np.ndarray, y: np.ndarray | int) -> np.ndarray:
    """d(cross-entropy)/d(input) for normalized inputs, dropout off.

    Accepts a single row or a batch; per-sample losses are not batch-averaged
    so each returned row is the gradient of that sample's own loss.
    """
    x = np.atleast_2d(np.asarray(x_norm, dtype=np.float64))
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(y_arr) != len(x):
        raise ValueError("labels do not match input rows")
    w64 = [w.astype(np.float64) for w in params.weights]
    b64 = [b.astype(np.float64) for b in params.biases]
    p64 = DetectorParams(w64, b64, params.norm_scale)
    acts, masks, logits = _forward_cached(p64, x, 0.0, None)
    _, _, dx = _backward(p64, acts, masks, logits, y_arr)
    dx = dx * len(x)  # undo the batch mean: per-sample gradients
    return dx if np.ndim(x_norm) > 1 else dx[0]


def loss_on(params: DetectorParams, x_norm: np.ndarray, y: np.ndarray | int) -> float:
    """Mean cross-entropy on normalized inputs, dropout off."""
    x = np.atleast_2d(np.asarray(x_norm, dtype=np.float64))
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
    w64 = [w.astype(np.float64) for w in params.weights]
    b64 = [b.astype(np.float64) for b in params.biases]
    _, _, logits = _forward_cached(DetectorParams(w64, b64), x, 0.0, None)
    return cross_entropy(logits, y_arr)


@dataclass
class _AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0


def train(dataset: Dataset, config: TrainConfig | None = None) -> tuple[DetectorParams, list[dict]]:
    """Fit the detector; returns parameters and a per-epoch history.

    The dataset must contain both classes. A held-back validation slice
    drives early stopping; the best-validation-loss parameters win.
    """
    config = config or TrainConfig()
    x_raw, y = dataset_matrices(dataset)
    return train_arrays(x_raw, y, config)


def train_arrays(x_raw: np.ndarray, y: np.ndarray, config: TrainConfig) -> tuple[DetectorParams, list[dict]]:
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")
    seq = np.random.SeedSequence(config.seed)
    init_rng, shuffle_rng, drop_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    x = normalize(x_raw).astype(np.float32)
    y = np.asarray(y, dtype=np.int64)
    n = len(x)
    order = shuffle_rng.permutation(n)
    n_val = max(1, int(n * config.val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    params = DetectorParams.initialize(
        init_rng, input_len=x.shape[1], hidden_sizes=tuple(config.hidden_sizes)
    )
    state = _AdamState(
        m_w=[np.zeros_like(w) for w in params.weights],
        v_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
    )

    history: list[dict] = []
    best_val = np.inf
    best_params = params.copy()
    strikes = 0
    for epoch in range(config.max_epochs):
        epoch_order = shuffle_rng.permutation(len(x_tr))
        batch_losses = []
        for start in range(0, len(x_tr), config.batch_size):
            idx = epoch_order[start : start + config.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            acts, masks, logits = _forward_cached(params, xb, config.dropout_rate, drop_rng)
            batch_losses.append(cross_entropy(logits, yb))
            grads_w, grads_b, _ = _backward(params, acts, masks, logits, yb)
            _adam_step(params, state, grads_w, grads_b, config)
        val_probs = forward(params, x_val)
        val_pred = val_probs.argmax(axis=1)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": loss_on(params, x_val, y_val),
            "val_accuracy": float(np.mean(val_pred == y_val)),
        }
        history.append(entry)
        if entry["val_loss"] < best_val - 1e-5:
            best_val = entry["val_loss"]
            best_params = params.copy()
            strikes = 0
        else:
            strikes += 1
            if strikes >= config.patience:
                break
    return best_params, history


def _adam_step(params, state, grads_w, grads_b, config: TrainConfig) -> None:
    state.t += 1
    lr_t = config.learning_rate * (
        np.sqrt(1 - config.beta2**state.t) / (1 - config.beta1**state.t)
    )
    for i in range(len(params.weights)):
        for target, grad, m, v in (
            (params.weights[i], grads_w[i], state.m_w[i], state.v_w[i]),
            (params.biases[i], grads_b[i], state.m_b[i], state.v_b[i]),
        ):
            grad = grad.astype(target.dtype)
            m *= config.beta1
            m += (1 - config.beta1) * grad
            v *= config.beta2
            v += (1 - config.beta2) * grad * grad
            target -= lr_t * m / (np.sqrt(v) + config.adam_eps)


def accuracy(params: DetectorParams, dataset: Dataset) -> float:
    x, y = dataset_matrices(dataset)
    probs = forward(params, normalize(x, params.norm_scale))
    pred = np.where(probs[:, 0] >= probs[:, 1], 0, 1)
    return float(np.mean(pred == y))
