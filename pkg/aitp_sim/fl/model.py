"""Two-layer tanh regressor used as the shared local/global model.

The model maps ``(snr_db, interference_dbm, load, speed_mps)`` rows to
``(normalized MCS index, power fraction)``. Parameters live in one flat
vector laid out as ``W1 (4x16) | b1 (16) | W2 (16x2) | b2 (2)``.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
import struct
from typing import TYPE_CHECKING, Final, NamedTuple

import numpy as np
import numpy.typing as npt

from ..errors import DivergenceError, DomainError, OutputError, ParseError
from ..rng import stream

if TYPE_CHECKING:
    from ..scenario import LocalDataset

logger = logging.getLogger(__name__)

ModelParams = npt.NDArray[np.float64]

FEATURE_NAMES: Final[tuple[str, ...]] = ("snr_db", "interference_dbm", "load", "speed_mps")
LABEL_NAMES: Final[tuple[str, ...]] = ("mcs_index_norm", "power_fraction")

FEATURE_DIM: Final = len(FEATURE_NAMES)
HIDDEN_DIM: Final = 16
LABEL_DIM: Final = len(LABEL_NAMES)
MODEL_DIM: Final = (FEATURE_DIM + 1) * HIDDEN_DIM + (HIDDEN_DIM + 1) * LABEL_DIM

# Maps the feature ranges onto [-1, 1].
FEATURE_OFFSET: Final = np.array([12.5, -95.0, 0.5, 7.5])
FEATURE_SCALE: Final = np.array([22.5, 15.0, 0.5, 7.5])

MCS_LEVELS: Final = 8

CHECKPOINT_MAGIC: Final = b"AITPMODL"
_HEADER = struct.Struct("<8sQ")


class Layers(NamedTuple):
    w1: npt.NDArray[np.float64]
    b1: npt.NDArray[np.float64]
    w2: npt.NDArray[np.float64]
    b2: npt.NDArray[np.float64]


def unpack(w: ModelParams) -> Layers:
    """Views of the four parameter blocks of ``w``."""
    if w.shape != (MODEL_DIM,):
        raise DomainError(f"model vector must have shape ({MODEL_DIM},), got {w.shape}")
    i = FEATURE_DIM * HIDDEN_DIM
    j = i + HIDDEN_DIM
    k = j + HIDDEN_DIM * LABEL_DIM
    return Layers(
        w1=w[:i].reshape(FEATURE_DIM, HIDDEN_DIM),
        b1=w[i:j],
        w2=w[j:k].reshape(HIDDEN_DIM, LABEL_DIM),
        b2=w[k:],
    )


def pack(layers: Layers) -> ModelParams:
    return np.concatenate([layers.w1.ravel(), layers.b1, layers.w2.ravel(), layers.b2]).astype(np.float64)


def init_model(seed: int) -> ModelParams:
    """Initial global model W_0 drawn from the ``init`` stream.

    The output bias starts at the center of the label range.
    """
    rng = stream(seed, "init")
    w1 = rng.normal(0.0, 0.5, size=(FEATURE_DIM, HIDDEN_DIM))
    w2 = rng.normal(0.0, 0.25, size=(HIDDEN_DIM, LABEL_DIM)) * 0.1
    return pack(Layers(w1, np.zeros(HIDDEN_DIM), w2, np.full(LABEL_DIM, 0.5)))


def _forward(
    w: ModelParams, features: npt.NDArray[np.float64]
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    layers = unpack(w)
    x = (np.atleast_2d(features) - FEATURE_OFFSET) / FEATURE_SCALE
    h = np.tanh(x @ layers.w1 + layers.b1)
    return x, h, h @ layers.w2 + layers.b2


def predict(w: ModelParams, features: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Raw (unclamped) outputs, one row per feature row."""
    return _forward(w, features)[2]


def local_loss(w: ModelParams, dataset: LocalDataset) -> float:
    """Mean squared error over rows and label components."""
    out = predict(w, dataset.features)
    return float(np.mean((out - dataset.labels) ** 2))


def _loss_and_grad(
    w: ModelParams, features: npt.NDArray[np.float64], labels: npt.NDArray[np.float64]
) -> tuple[float, ModelParams]:
    layers = unpack(w)
    x, h, out = _forward(w, features)
    err = out - labels
    loss = float(np.mean(err**2))
    d_out = 2.0 * err / err.size
    d_hidden = (d_out @ layers.w2.T) * (1.0 - h**2)
    grad = Layers(w1=x.T @ d_hidden, b1=d_hidden.sum(axis=0), w2=h.T @ d_out, b2=d_out.sum(axis=0))
    return loss, pack(grad)


def local_grad(w: ModelParams, batch: LocalDataset) -> ModelParams:
    """Analytic gradient of :func:`local_loss` on ``batch``."""
    return _loss_and_grad(w, batch.features, batch.labels)[1]


def local_train(
    w_global: ModelParams,
    dataset: LocalDataset,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    rng: np.random.Generator,
) -> ModelParams:
    """Run mini-batch SGD from ``w_global`` and return the update ``w_final - w_global``.

    Args:
        w_global: Global model of the current round.
        dataset: The device's local rows.
        epochs: Number of passes over the dataset, each in a fresh shuffle order.
        learning_rate: Step size; 0 yields a zero update.
        batch_size: Rows per SGD step; the last batch of an epoch may be smaller.
        rng: The device's ``local_training`` stream for this round.

    Raises:
        DomainError: If ``epochs`` < 1, ``batch_size`` < 1 or ``learning_rate`` < 0.
        DivergenceError: If the loss becomes non-finite.
    """
    if epochs < 1 or batch_size < 1:
        raise DomainError(f"epochs and batch_size must be >= 1, got {epochs} and {batch_size}")
    if learning_rate < 0:
        raise DomainError(f"learning rate must be >= 0, got {learning_rate}")

    w = w_global.copy()
    n = dataset.size
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grad = _loss_and_grad(w, dataset.features[idx], dataset.labels[idx])
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite loss in epoch {epoch} (learning rate {learning_rate} too large?)")
            w -= learning_rate * grad
    if not np.all(np.isfinite(w)):
        raise DivergenceError("local training produced non-finite parameters")
    return w - w_global


def mcs_index_from_output(value: npt.ArrayLike) -> npt.NDArray[np.int64]:
    """Denormalize the MCS head: round to the nearest index and clamp to the table."""
    return np.clip(np.rint(np.asarray(value) * (MCS_LEVELS - 1)), 0, MCS_LEVELS - 1).astype(np.int64)


def model_accuracy(w: ModelParams, validation: LocalDataset) -> float:
    """Fraction of validation rows whose predicted MCS index equals the oracle index."""
    predicted = mcs_index_from_output(predict(w, validation.features)[:, 0])
    expected = mcs_index_from_output(validation.labels[:, 0])
    return float(np.mean(predicted == expected))


def save_checkpoint(path: str | Path, w: ModelParams) -> None:
    """Write ``w`` as a 16-byte header followed by little-endian float64 values.

    Raises:
        OutputError: If the file cannot be written.
    """
    payload = _HEADER.pack(CHECKPOINT_MAGIC, w.size) + np.asarray(w, dtype="<f8").tobytes()
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise OutputError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info(f"Saved {w.size}-parameter checkpoint to {path}")


def load_checkpoint(path: str | Path, expected_dim: int | None = MODEL_DIM) -> ModelParams:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        ParseError: On an unreadable file, bad magic, truncated payload or dimension mismatch.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, dim = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if expected_dim is not None and dim != expected_dim:
        raise ParseError(f"{path}: dimension {dim} does not match expected {expected_dim}")
    if len(data) != _HEADER.size + 8 * dim:
        raise ParseError(f"{path}: payload holds {len(data) - _HEADER.size} bytes, expected {8 * dim}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
