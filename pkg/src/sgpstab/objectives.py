"""Losses, gradients and smoothness constants.

Two models are supported:

* ``LogisticL2``: f(w; a, b) = log(1 + exp(-b a.w)) + mu/2 ||w||^2
* ``PLQuadratic``: f(w; a) = 1/2 w.A w - (b + a).w, a quadratic whose
  per-sample linear shift makes stochastic gradients data dependent while
  keeping the Hessian (and hence alpha, L, kappa) fixed at A. A sample with
  an empty feature vector recovers 1/2 w.A w - b.w.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Sample:
    """Sparse feature vector (0-based sorted indices) plus a label in {-1, +1}."""

    indices: np.ndarray
    values: np.ndarray
    label: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size and idx.min() < 0:
            raise ValueError("feature indices must be nonnegative")
        if self.label not in (-1.0, 1.0):
            raise ValueError(f"label must be -1 or +1, got {self.label!r}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "label", float(self.label))

    @classmethod
    def from_dense(cls, x, label: float) -> "Sample":
        x = np.asarray(x, dtype=float)
        nz = np.flatnonzero(x)
        return cls(nz, x[nz], label)

    def dense(self, d: int) -> np.ndarray:
        if self.indices.size and self.indices.max() >= d:
            raise ValueError(f"feature index {self.indices.max()} exceeds dimension {d}")
        x = np.zeros(d)
        x[self.indices] = self.values
        return x

    def dot(self, w: np.ndarray) -> float:
        return float(np.dot(self.values, w[self.indices]))

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.label == other.label
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.label, self.indices.tobytes(), self.values.tobytes()))


def stack(samples: list[Sample], d: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """CSR design matrix and label vector for a list of samples."""
    indptr = np.zeros(len(samples) + 1, dtype=np.int64)
    for k, s in enumerate(samples):
        indptr[k + 1] = indptr[k] + s.indices.size
    indices = np.concatenate([s.indices for s in samples]) if samples else np.zeros(0, np.int64)
    values = np.concatenate([s.values for s in samples]) if samples else np.zeros(0)
    if indices.size and indices.max() >= d:
        raise ValueError(f"feature index {indices.max()} exceeds dimension {d}")
    X = sp.csr_matrix((values, indices, indptr), shape=(len(samples), d))
    y = np.array([s.label for s in samples], dtype=float)
    return X, y


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class LogisticL2:
    d: int
    mu: float = 1e-4

    def __post_init__(self):
        if self.d < 1 or self.mu < 0:
            raise ValueError("LogisticL2 needs d >= 1 and mu >= 0")

    # batched forms: W is (k, d) or (d,), X rows are features, y labels
    def losses(self, w, X, y) -> np.ndarray:
        margins = y * _matvec(X, w)
        return softplus(-margins) + 0.5 * self.mu * float(np.dot(w, w))

    def row_grads(self, Z: np.ndarray, A: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-row gradients at Z[k] for dense feature rows A[k]."""
        margins = (A * Z).sum(axis=1) * y
        coef = -y * sigmoid(-margins)
        return coef[:, None] * A + self.mu * Z

    def full_gradient(self, w, X, y) -> np.ndarray:
        margins = y * _matvec(X, w)
        coef = -y * sigmoid(-margins) / len(y)
        return _rmatvec(X, coef) + self.mu * w


@dataclass(frozen=True)
class PLQuadratic:
    A: np.ndarray
    b: np.ndarray = field(default=None)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        b = np.zeros(A.shape[0]) if self.b is None else np.asarray(self.b, dtype=float)
        if b.shape != (A.shape[0],):
            raise ValueError("b must have length d")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def value(self, w) -> float:
        """Sample-free objective 1/2 w.A w - b.w."""
        return float(0.5 * w @ self.A @ w - self.b @ w)

    def grad(self, w) -> np.ndarray:
        return self.A @ w - self.b

    def minimizer(self, shift=None) -> np.ndarray:
        rhs = self.b if shift is None else self.b + shift
        return np.linalg.solve(self.A, rhs)

    def losses(self, w, X, y) -> np.ndarray:
        return self.value(w) - _matvec(X, w)

    def row_grads(self, Z, A, y) -> np.ndarray:
        return Z @ self.A - self.b - A

    def full_gradient(self, w, X, y) -> np.ndarray:
        mean_a = np.asarray(X.mean(axis=0)).ravel()
        return self.grad(w) - mean_a


LossModel = "LogisticL2 | PLQuadratic"


def _matvec(X, w) -> np.ndarray:
    return np.asarray(X @ w, dtype=float).ravel()


def _rmatvec(X, v) -> np.ndarray:
    return np.asarray(X.T @ v, dtype=float).ravel()


def _check_dim(model, w):
    w = np.asarray(w, dtype=float)
    if w.shape != (model.d,):
        raise ValueError(f"parameter has shape {w.shape}, model expects ({model.d},)")
    return w


def loss(model, w, s: Sample) -> float:
    w = _check_dim(model, w)
    a = s.dense(model.d)
    if isinstance(model, LogisticL2):
        return float(softplus(-s.label * float(a @ w)) + 0.5 * model.mu * float(w @ w))
    return model.value(w) - float(a @ w)


def gradient(model, w, s: Sample) -> np.ndarray:
    w = _check_dim(model, w)
    a = s.dense(model.d)
    if isinstance(model, LogisticL2):
        return -s.label * float(sigmoid(-s.label * float(a @ w))) * a + model.mu * w
    return model.grad(w) - a


def empirical_risk(model, w, X, y) -> float:
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return float(np.mean(model.losses(np.asarray(w, dtype=float), X, y)))


def empirical_minimizer(model: PLQuadratic, X) -> np.ndarray:
    """argmin of the empirical PLQuadratic risk over the rows of X."""
    return model.minimizer(np.asarray(X.mean(axis=0)).ravel())


@dataclass(frozen=True)
class SmoothnessInfo:
    G: float
    L: float
    alpha: float
    r: float

    @property
    def kappa(self) -> float | None:
        return self.L / self.alpha if self.alpha > 0 else None


def _row_norms(X) -> np.ndarray:
    if sp.issparse(X):
        return np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    return np.linalg.norm(np.asarray(X), axis=1)


def smoothness_info(model, X, r: float) -> SmoothnessInfo:
    """Analytic L (and alpha) plus a G bound valid on the ball of radius r."""
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    amax = float(_row_norms(X).max())
    if isinstance(model, LogisticL2):
        return SmoothnessInfo(G=amax + model.mu * r, L=0.25 * amax ** 2 + model.mu, alpha=0.0, r=r)
    eig = np.linalg.eigvalsh(model.A)
    L, alpha = float(eig[-1]), float(eig[0])
    G = L * r + float(np.linalg.norm(model.b)) + amax
    return SmoothnessInfo(G=G, L=L, alpha=alpha, r=r)


def pl_residual(model: PLQuadratic, w) -> tuple[float, float]:
    """(2 alpha (f(w) - f*), ||grad f(w)||^2) for the sample-free objective."""
    if not isinstance(model, PLQuadratic):
        raise TypeError("pl_residual needs a PLQuadratic model")
    w = _check_dim(model, w)
    alpha = float(np.linalg.eigvalsh(model.A)[0])
    wstar = model.minimizer()
    e = w - wstar
    g = model.grad(w)
    return alpha * float(e @ model.A @ e), float(g @ g)
