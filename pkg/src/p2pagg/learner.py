"""Desk-scale local training: models with exact gradients, datasets, loaders.

Every model works on a flat float64 parameter vector so the aggregation
layer never needs to know the architecture.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.datasets import make_blobs as _sk_make_blobs

BATCH_SIZE = 32

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (N, dim) and y must have N entries")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.classes)

    def split(self, test_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(perm[n_test:]), self.subset(perm[:n_test])


# -- models ------------------------------------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxModel:
    """Multinomial logistic regression; parameters are ``W`` (dim x L) then ``b``."""

    def __init__(self, dim: int, classes: int):
        self.dim = dim
        self.classes = classes

    @property
    def n_params(self) -> int:
        return self.dim * self.classes + self.classes

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.n_params)

    def unflatten(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        k = self.dim * self.classes
        return params[:k].reshape(self.dim, self.classes), params[k:]

    def flatten(self, W: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(W), np.ravel(b)]).astype(np.float64)

    def predict_proba(self, params, X) -> np.ndarray:
        W, b = self.unflatten(params)
        return _softmax(np.asarray(X) @ W + b)

    def loss(self, params, X, y) -> float:
        p = self.predict_proba(params, X)
        return float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-300)))

    def grad(self, params, X, y) -> np.ndarray:
        """Gradient of the mean cross-entropy over the batch."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        p = self.predict_proba(params, X)
        p[np.arange(len(y)), y] -= 1.0
        p /= X.shape[0]
        return self.flatten(X.T @ p, p.sum(axis=0))

    def predict(self, params, X) -> np.ndarray:
        return np.argmax(self.predict_proba(params, X), axis=1)

    def accuracy(self, params, data: Dataset) -> float:
        if len(data) == 0:
            return float("nan")
        return float(np.mean(self.predict(params, data.X) == data.y))


class MLPModel(SoftmaxModel):
    """One tanh hidden layer followed by softmax; manual backprop."""

    def __init__(self, dim: int, classes: int, hidden: int = 32):
        super().__init__(dim, classes)
        self.hidden = hidden

    @property
    def n_params(self) -> int:
        h = self.hidden
        return self.dim * h + h + h * self.classes + self.classes

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        W1 = rng.normal(scale=1.0 / np.sqrt(self.dim), size=(self.dim, self.hidden))
        W2 = rng.normal(scale=1.0 / np.sqrt(self.hidden), size=(self.hidden, self.classes))
        return np.concatenate([W1.ravel(), np.zeros(self.hidden), W2.ravel(), np.zeros(self.classes)])

    def unflatten(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        d, h, L = self.dim, self.hidden, self.classes
        i = 0
        W1 = params[i:i + d * h].reshape(d, h)
        i += d * h
        b1 = params[i:i + h]
        i += h
        W2 = params[i:i + h * L].reshape(h, L)
        i += h * L
        return W1, b1, W2, params[i:]

    def _forward(self, params, X):
        W1, b1, W2, b2 = self.unflatten(params)
        H = np.tanh(np.asarray(X) @ W1 + b1)
        return H, _softmax(H @ W2 + b2)

    def predict_proba(self, params, X):
        return self._forward(params, X)[1]

    def grad(self, params, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        _, _, W2, _ = self.unflatten(params)
        H, p = self._forward(params, X)
        p[np.arange(len(y)), y] -= 1.0
        p /= X.shape[0]
        dH = (p @ W2.T) * (1.0 - H * H)
        return np.concatenate([(X.T @ dH).ravel(), dH.sum(0), (H.T @ p).ravel(), p.sum(0)])


class MeanModel:
    """Quadratic objective ``mean_i ||x - X_i||^2 / 2``; its minimiser is the data mean."""

    def __init__(self, dim: int):
        self.dim = dim

    @property
    def n_params(self) -> int:
        return self.dim

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, params, X, y=None) -> float:
        return float(0.5 * np.mean(np.sum((np.asarray(X) - params) ** 2, axis=1)))

    def grad(self, params, X, y=None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        return np.asarray(params, dtype=np.float64) - X.mean(axis=0)

    def accuracy(self, params, data: Dataset) -> float:
        # negated distance to the optimum stands in for accuracy
        return -float(np.linalg.norm(np.asarray(params) - data.X.mean(axis=0)))


def build_model(kind: str, dim: int, classes: int, hidden: int = 32):
    if kind == "softmax":
        return SoftmaxModel(dim, classes)
    if kind == "mlp":
        return MLPModel(dim, classes, hidden)
    if kind == "mean":
        return MeanModel(dim)
    raise ValueError(f"unknown model kind {kind!r}")


# -- local training --------------------------------------------------------------------


def sample_batch(rng: np.random.Generator, n: int, batch_size: int = BATCH_SIZE) -> np.ndarray:
    return rng.choice(n, size=min(batch_size, n), replace=False)


def local_epoch(model, params, data: Dataset, lr: float, rng: np.random.Generator,
                batch_size: int = BATCH_SIZE) -> np.ndarray:
    """One shuffled pass of minibatch SGD; returns the new parameters."""
    params = np.array(params, dtype=np.float64)
    perm = rng.permutation(len(data))
    for start in range(0, len(data), batch_size):
        idx = perm[start:start + batch_size]
        params -= lr * model.grad(params, data.X[idx], data.y[idx])
    return params


def finite_difference_grad(loss_fn, params: np.ndarray, h: float = 1e-6) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    out = np.empty_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = h
        out[i] = (loss_fn(params + e) - loss_fn(params - e)) / (2 * h)
    return out


# -- datasets --------------------------------------------------------------------------


def make_blobs(seed: int, classes: int = 4, dim: int = 10, n: int = 4000,
               separation: float = 1.0) -> Dataset:
    """Gaussian clusters with unit spread; centres drawn in ``[-3s, 3s]^dim``."""
    if separation <= 0:
        raise ValueError("separation must be positive")
    X, y = _sk_make_blobs(
        n_samples=n, n_features=dim, centers=classes, cluster_std=1.0,
        center_box=(-3.0 * separation, 3.0 * separation), random_state=seed,
    )
    return Dataset(X, y, classes)


def _read_exact(buf: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(buf):
        raise DatasetFormatError(
            f"truncated IDX file: {what} needs bytes [{offset}, {offset + size}), file has {len(buf)}"
        )
    return buf[offset:offset + size]


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file (images or labels)."""
    buf = Path(path).read_bytes()
    (magic,) = struct.unpack(">I", _read_exact(buf, 0, 4, "magic"))
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC):
        raise DatasetFormatError(f"bad IDX magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", _read_exact(buf, 4, 4 * ndim, "dimensions"))
    start = 4 + 4 * ndim
    expected = int(np.prod(dims))
    if len(buf) - start != expected:
        raise DatasetFormatError(
            f"IDX payload length mismatch at offset {start}: expected {expected} bytes, got {len(buf) - start}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=start).reshape(dims)


def load_idx(images_path, labels_path, classes: int | None = None) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise DatasetFormatError("expected a 3-d image file and a 1-d label file")
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return Dataset(X, y, classes if classes is not None else int(y.max()) + 1)


def load_csv(path, classes: int | None = None) -> Dataset:
    """CSV with header ``label,f1,...,fdim``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise DatasetFormatError(f"{path}: first header column must be 'label'")
        rows = [r for r in reader if r]
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    width = len(header)
    for lineno, r in enumerate(rows, start=2):
        if len(r) != width:
            raise DatasetFormatError(f"{path}:{lineno}: expected {width} columns, got {len(r)}")
    arr = np.array(rows, dtype=np.float64)
    y = arr[:, 0].astype(np.int64)
    return Dataset(arr[:, 1:], y, classes if classes is not None else int(y.max()) + 1)


def partition(data: Dataset, shards: int, seed: int, scheme: str = "iid",
              min_size: int = BATCH_SIZE) -> list[Dataset]:
    """Split into disjoint shards. ``"noniid"`` sorts by label before cutting."""
    rng = np.random.default_rng(seed)
    if scheme == "iid":
        order = rng.permutation(len(data))
    elif scheme == "noniid":
        order = np.lexsort((rng.random(len(data)), data.y))
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    parts = np.array_split(order, shards)
    if min(len(p) for p in parts) < min_size:
        raise ValueError(f"shards smaller than {min_size}: {len(data)} samples over {shards} peers")
    return [data.subset(np.sort(p)) for p in parts]
