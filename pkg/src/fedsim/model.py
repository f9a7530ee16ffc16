"""Hashed n-gram features and a multinomial logistic-regression classifier.

Parameters live in one flat float64 vector: a ``(dim, classes)`` weight
matrix in row-major order followed by ``classes`` biases. That vector is
what clients send to the server, so everything here takes and returns
:class:`ParameterVector` rather than a model object.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_DIM = 2**16

# blake2b, 8-byte digest, fixed personalization string; value read little-endian.
HASH_PERSON = b"fedsim.feat.v1"

PARAM_MAGIC = b"FLPV"
_HEADER = struct.Struct("<4sQI")  # magic, dim, classes -> 16 bytes
HEADER_SIZE = _HEADER.size


def stable_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=HASH_PERSON).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-D and of equal length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.dim):
            raise ValueError("indices must be strictly increasing and inside [0, dim)")
        if np.any(val <= 0):
            raise ValueError("feature values must be positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}


def featurize(text: str, dim: int = DEFAULT_DIM) -> FeatureVector:
    """Count hashed unigrams and adjacent-token bigrams into ``dim`` buckets.

    A bigram is hashed as ``"left right"`` (tokens never contain spaces, so it
    cannot collide by construction with a unigram string). Colliding entries add.
    """
    if dim < 2 or dim & (dim - 1):
        raise ValueError(f"dim must be a power of two >= 2, got {dim}")
    tokens = text.split()
    grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    counts: dict[int, float] = {}
    for gram in grams:
        bucket = stable_hash(gram) % dim
        counts[bucket] = counts.get(bucket, 0.0) + 1.0
    keys = sorted(counts)
    return FeatureVector(np.array(keys, dtype=np.int64), np.array([counts[k] for k in keys]), dim)


def stack(features: Sequence[FeatureVector], dim: int) -> sp.csr_matrix:
    """Rows of ``features`` as a CSR matrix of shape ``(len(features), dim)``."""
    indptr = np.zeros(len(features) + 1, dtype=np.int64)
    for i, fv in enumerate(features):
        if fv.dim != dim:
            raise ValueError(f"feature dim {fv.dim} does not match parameter dim {dim}")
        indptr[i + 1] = indptr[i] + fv.indices.size
    if features:
        indices = np.concatenate([fv.indices for fv in features])
        values = np.concatenate([fv.values for fv in features])
    else:
        indices = np.zeros(0, dtype=np.int64)
        values = np.zeros(0)
    return sp.csr_matrix((values, indices, indptr), shape=(len(features), dim))


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Immutable flat weights; length ``dim * classes + classes``."""

    weights: np.ndarray
    dim: int
    classes: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size != self.dim * self.classes + self.classes:
            raise ValueError(
                f"expected {self.dim * self.classes + self.classes} weights for dim={self.dim}, "
                f"classes={self.classes}, got shape {w.shape}"
            )
        if w.flags.writeable:
            w = w.copy()
            w.flags.writeable = False
            if not np.isfinite(w).all():
                raise FloatingPointError("parameter vector contains NaN or Inf")
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int = DEFAULT_DIM, classes: int = 20) -> "ParameterVector":
        return cls(np.zeros(dim * classes + classes), dim, classes)

    @property
    def matrix(self) -> np.ndarray:
        return self.weights[: self.dim * self.classes].reshape(self.dim, self.classes)

    @property
    def bias(self) -> np.ndarray:
        return self.weights[self.dim * self.classes :]

    @property
    def layout(self) -> tuple[int, int]:
        return self.dim, self.classes

    @property
    def serialized_size(self) -> int:
        return HEADER_SIZE + 8 * self.weights.size

    def to_bytes(self) -> bytes:
        body = np.ascontiguousarray(self.weights, dtype="<f8").tobytes()
        return _HEADER.pack(PARAM_MAGIC, self.dim, self.classes) + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParameterVector":
        if len(blob) < HEADER_SIZE:
            raise ValueError("truncated parameter blob")
        magic, dim, classes = _HEADER.unpack_from(blob)
        if magic != PARAM_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        weights = np.frombuffer(blob, dtype="<f8", offset=HEADER_SIZE)
        return cls(weights.astype(np.float64), dim, classes)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 1
    batch_size: int = 16
    l2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        # lr == 0 is accepted as an explicit no-op run
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def predict(params: ParameterVector, x: FeatureVector) -> np.ndarray:
    if x.dim != params.dim:
        raise ValueError(f"feature dim {x.dim} does not match parameter dim {params.dim}")
    logits = x.values @ params.matrix[x.indices] + params.bias
    return np.exp(_log_softmax(logits))


def logits(params: ParameterVector, X: sp.csr_matrix) -> np.ndarray:
    if X.shape[1] != params.dim:
        raise ValueError(f"feature dim {X.shape[1]} does not match parameter dim {params.dim}")
    return np.asarray(X @ params.matrix) + params.bias


def _data_grad(W: np.ndarray, b: np.ndarray, X: sp.csr_matrix, y: np.ndarray):
    """Mean cross-entropy of a batch and its gradient on the touched rows only.

    Returns ``(loss, rows, grad_rows, grad_bias)`` where ``grad_rows[i]`` is the
    gradient for weight row ``rows[i]``.
    """
    rows = np.unique(X.indices)
    Xr = X[:, rows]
    z = np.asarray(Xr @ W[rows]) + b
    logp = _log_softmax(z)
    n = X.shape[0]
    loss = -logp[np.arange(n), y].mean()
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, rows, np.asarray(Xr.T @ delta), delta.sum(axis=0)


def _unpack(params: ParameterVector, batch) -> tuple[sp.csr_matrix, np.ndarray]:
    if len(batch) == 0:
        raise ValueError("empty batch")
    feats = [fv for fv, _ in batch]
    y = np.array([label for _, label in batch], dtype=np.int64)
    if y.min() < 0 or y.max() >= params.classes:
        raise ValueError(f"labels must lie in [0, {params.classes})")
    return stack(feats, params.dim), y


def loss_and_gradient(
    params: ParameterVector, batch: Sequence[tuple[FeatureVector, int]], l2: float = 0.0
) -> tuple[float, ParameterVector]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` (biases unpenalized), and its gradient."""
    X, y = _unpack(params, batch)
    W, b = params.matrix, params.bias
    loss, rows, grad_rows, grad_b = _data_grad(W, b, X, y)
    gW = l2 * W if l2 else np.zeros_like(W)
    gW[rows] += grad_rows
    if l2:
        loss += 0.5 * l2 * float(np.dot(params.weights[: W.size], params.weights[: W.size]))
    grad = np.concatenate([gW.ravel(), grad_b])
    return float(loss), ParameterVector(grad, params.dim, params.classes)


def sgd(
    start: ParameterVector, X: sp.csr_matrix, y: np.ndarray, cfg: TrainConfig
) -> tuple[ParameterVector, float]:
    """Mini-batch SGD over pre-stacked features.

    Returns the new parameters and the mean pre-step batch cross-entropy over
    the whole run (``nan`` when no step was taken).
    """
    n = X.shape[0]
    if n == 0:
        raise ValueError("no training data")
    if X.shape[1] != start.dim:
        raise ValueError(f"feature dim {X.shape[1]} does not match parameter dim {start.dim}")
    weights = np.array(start.weights)
    W = weights[: start.dim * start.classes].reshape(start.dim, start.classes)
    b = weights[start.dim * start.classes :]
    lr, l2 = cfg.learning_rate, cfg.l2
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, rows, grad_rows, grad_b = _data_grad(W, b, X[idx], y[idx])
            losses.append(loss)
            if l2:
                W -= (lr * l2) * W
            W[rows] -= lr * grad_rows
            b -= lr * grad_b
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return ParameterVector(weights, start.dim, start.classes), mean_loss


def local_train(
    start: ParameterVector, data: Sequence[tuple[FeatureVector, int]], cfg: TrainConfig
) -> ParameterVector:
    """Run ``cfg.epochs`` epochs of shuffled mini-batch SGD from ``start``."""
    X, y = _unpack(start, data)
    params, _ = sgd(start, X, y, cfg)
    return params


def dataset_loss(params: ParameterVector, X: sp.csr_matrix, y: np.ndarray, l2: float = 0.0) -> float:
    logp = _log_softmax(logits(params, X))
    loss = -logp[np.arange(X.shape[0]), y].mean()
    if l2:
        w = params.weights[: params.dim * params.classes]
        loss += 0.5 * l2 * float(np.dot(w, w))
    return float(loss)


def with_seed(cfg: TrainConfig, seed: int, epochs: int | None = None) -> TrainConfig:
    return replace(cfg, seed=seed, epochs=cfg.epochs if epochs is None else epochs)
