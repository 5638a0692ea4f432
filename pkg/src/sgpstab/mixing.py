"""Column-stochastic mixing matrices and their spectral quantities."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .topology import DirectedGraph, is_strongly_connected

log = logging.getLogger(__name__)

COLUMN_TOL = 1e-12
ROW_TOL = 1e-10
# powers H^t with lambda^t below this are dominated by rounding noise
POWER_FLOOR = 1e-11


@dataclass(frozen=True)
class MixingMatrix:
    """Dense m x m matrix; entry (i, j) is the weight i applies to messages from j."""

    P: np.ndarray

    @property
    def m(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class SpectralProfile:
    pi: np.ndarray
    delta: float
    lam: float
    c_h: float
    doubly_stochastic: bool

    def csv_row(self, kind: str, m: int) -> list:
        return [kind, m, repr(float(self.delta)), repr(float(self.lam)),
                repr(float(self.c_h)), str(bool(self.doubly_stochastic)).lower()]


PROFILE_HEADER = ["kind", "m", "delta", "lambda", "c_h", "doubly_stochastic"]


def _as_array(P) -> np.ndarray:
    return P.P if isinstance(P, MixingMatrix) else np.asarray(P, dtype=float)


def build_mixing(g: DirectedGraph) -> MixingMatrix:
    """P[i, j] = 1/|N_j^out| for j in N_i^in, with self-inclusive neighbor sets."""
    if not is_strongly_connected(g):
        raise ValueError("mixing matrix requires a strongly connected graph")
    m = g.m
    out_deg = np.ones(m)
    for j, _ in g.edges:
        out_deg[j] += 1
    P = np.zeros((m, m))
    P[np.arange(m), np.arange(m)] = 1.0 / out_deg
    for j, i in g.edges:
        P[i, j] = 1.0 / out_deg[j]
    return MixingMatrix(P)


def stationary_distribution(P, tol: float = 1e-12, max_iter: int = 10**6) -> np.ndarray:
    """Right Perron vector by power iteration.

    The iteration matrix is squared every 64 sweeps, which keeps slow-mixing
    graphs (lambda near 1) cheap without changing the fixed point.
    """
    A = _as_array(P)
    m = A.shape[0]
    pi = np.full(m, 1.0 / m)
    Q = A.copy()
    for it in range(1, max_iter + 1):
        nxt = Q @ pi
        nxt /= nxt.sum()
        step = np.max(np.abs(nxt - pi))
        pi = nxt
        if step < tol and np.max(np.abs(A @ pi - pi)) < tol:
            return pi
        if it % 64 == 0:
            Q = Q @ Q
            Q /= Q.sum(axis=0, keepdims=True)
    raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")


def stationary_distribution_eig(P) -> np.ndarray:
    """Reference pi from a dense eigendecomposition."""
    A = _as_array(P)
    vals, vecs = np.linalg.eig(A)
    k = int(np.argmin(np.abs(vals - 1.0)))
    v = np.real(vecs[:, k])
    return v / v.sum()


def imbalance(pi) -> float:
    return float(np.min(pi))


def slem(P) -> float:
    """Second largest eigenvalue modulus (0 for m = 1 or rank-one P)."""
    A = _as_array(P)
    m = A.shape[0]
    if m == 1 or np.all(A == A[:, :1]):
        return 0.0
    vals = np.linalg.eigvals(A)
    k = int(np.argmin(np.abs(vals - 1.0)))
    rest = np.delete(vals, k)
    return float(np.max(np.abs(rest)))


def residual_constant(P, pi, lam: float, horizon: int = 200) -> float:
    """Smallest C with ||H^t||_inf <= C lam^t for 1 <= t <= horizon, H = P - pi 1^T.

    Powers where lam^t < 1e-11 are skipped: there ||H^t|| is rounding noise
    and the ratio would measure floating point error rather than mixing.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    A = _as_array(P)
    m = A.shape[0]
    H = A - np.outer(pi, np.ones(m))
    if m == 1 or np.max(np.abs(H)) < 1e-15:
        return 0.0
    if lam == 0.0:
        return float("inf")
    best = 0.0
    Ht = np.eye(m)
    for t in range(1, horizon + 1):
        Ht = Ht @ H
        scale = lam ** t
        if scale < POWER_FLOOR:
            break
        best = max(best, float(np.max(np.abs(Ht).sum(axis=1))) / scale)
    return best


def is_doubly_stochastic(P) -> bool:
    A = _as_array(P)
    return bool(np.all(np.abs(A.sum(axis=1) - 1.0) <= ROW_TOL))


def spectral_profile(g_or_P, horizon: int = 200) -> SpectralProfile:
    M = build_mixing(g_or_P) if isinstance(g_or_P, DirectedGraph) else g_or_P
    A = _as_array(M)
    pi = stationary_distribution(A)
    if A.shape[0] <= 256:
        ref = stationary_distribution_eig(A)
        gap = float(np.max(np.abs(pi - ref)))
        if gap > 1e-9:
            log.warning("power iteration and eigensolve disagree on pi by %.3g", gap)
    lam = slem(A)
    return SpectralProfile(
        pi=pi,
        delta=imbalance(pi),
        lam=lam,
        c_h=residual_constant(A, pi, lam, horizon),
        doubly_stochastic=is_doubly_stochastic(A),
    )
