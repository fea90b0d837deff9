"""Hand-written small classifiers: softmax regression and a tanh MLP.

Parameters live in a single flat float64 vector so checkpointing,
aggregation, and finite-difference gradient checks stay simple.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, ParseError
from .rng import keyed_rng

SOFTMAX_REGRESSION = "softmax_regression"
MLP1 = "mlp1"

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelShape:
    """Layer dimensions of a model.

    softmax_regression: dims = (d, C).  mlp1: dims = (d, h, C) with one
    tanh hidden layer.
    """

    kind: str
    dims: tuple[int, ...]

    def __post_init__(self):
        if self.kind == SOFTMAX_REGRESSION:
            if len(self.dims) != 2:
                raise InvalidSpecError("softmax_regression needs dims (d, C)")
        elif self.kind == MLP1:
            if len(self.dims) != 3:
                raise InvalidSpecError("mlp1 needs dims (d, h, C)")
        else:
            raise InvalidSpecError(f"unknown model kind {self.kind!r}")
        if any(d < 1 for d in self.dims):
            raise InvalidSpecError("all layer dims must be positive")

    @property
    def num_params(self) -> int:
        if self.kind == SOFTMAX_REGRESSION:
            d, c = self.dims
            return d * c + c
        d, h, c = self.dims
        return d * h + h + h * c + c

    @property
    def num_classes(self) -> int:
        return self.dims[-1]


@dataclass
class ModelParams:
    """A flat parameter vector plus its shape descriptor."""

    shape: ModelShape
    vector: np.ndarray

    def __post_init__(self):
        if self.vector.shape != (self.shape.num_params,):
            raise InvalidSpecError(
                f"parameter vector length {self.vector.shape} != {self.shape.num_params}"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(self.shape, self.vector.copy())


def init_params(shape: ModelShape, seed: int = 0, scale: float = 0.0) -> ModelParams:
    """Zero-initialized by default; scale > 0 gives small Gaussian weights."""
    vec = np.zeros(shape.num_params)
    if scale > 0:
        vec = keyed_rng(seed).normal(0.0, scale, size=shape.num_params)
    return ModelParams(shape, vec)


def _unpack(params: ModelParams) -> list[np.ndarray]:
    v, dims = params.vector, params.shape.dims
    if params.shape.kind == SOFTMAX_REGRESSION:
        d, c = dims
        return [v[: d * c].reshape(d, c), v[d * c :]]
    d, h, c = dims
    o1, o2, o3 = d * h, d * h + h, d * h + h + h * c
    return [v[:o1].reshape(d, h), v[o1:o2], v[o2:o3].reshape(h, c), v[o3:]]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (n, C)."""
    if params.shape.kind == SOFTMAX_REGRESSION:
        W, b = _unpack(params)
        return softmax(X @ W + b)
    W1, b1, W2, b2 = _unpack(params)
    return softmax(np.tanh(X @ W1 + b1) @ W2 + b2)


def loss_and_grad(
    params: ModelParams, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient (flat vector)."""
    n = len(X)
    if params.shape.kind == SOFTMAX_REGRESSION:
        W, b = _unpack(params)
        probs = softmax(X @ W + b)
        loss = -np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean()
        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        grad = np.concatenate([(X.T @ dlogits).ravel(), dlogits.sum(axis=0)])
        return float(loss), grad
    W1, b1, W2, b2 = _unpack(params)
    z1 = X @ W1 + b1
    a1 = np.tanh(z1)
    probs = softmax(a1 @ W2 + b2)
    loss = -np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean()
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    da1 = dlogits @ W2.T
    dz1 = da1 * (1.0 - a1 * a1)
    grad = np.concatenate(
        [(X.T @ dz1).ravel(), dz1.sum(axis=0), (a1.T @ dlogits).ravel(), dlogits.sum(axis=0)]
    )
    return float(loss), grad


def batch_loss(params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    probs = forward(params, X)
    return float(-np.log(np.maximum(probs[np.arange(len(X)), y], 1e-300)).mean())


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Little-endian flat float64 array behind a one-line JSON header."""
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": params.shape.kind,
        "dims": list(params.shape.dims),
        "dtype": "<f8",
        "count": params.shape.num_params,
    }
    with Path(path).open("wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(params.vector.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing header newline at byte {len(raw)}")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad JSON header at byte {exc.pos}") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {header.get('version')}")
    shape = ModelShape(header["kind"], tuple(header["dims"]))
    vec = np.frombuffer(raw, dtype="<f8", count=header["count"], offset=nl + 1)
    return ModelParams(shape, vec.astype(np.float64))
