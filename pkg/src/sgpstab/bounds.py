"""Closed-form and direct-summation bounds for SGP stability, optimization and excess risk.

Notation: G Lipschitz constant, L smoothness, C mixing constant, C_w0 initial
spread, r radius of the parameter ball, delta = min pi, lam = SLEM, m nodes,
n samples per node, alpha PL constant (kappa = L / alpha), D = ||wbar0 - w*||.
All step-size sums run over t = 0..T-1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.signal import lfilter

from .engine import Constant, Diminishing

INF = math.inf


@dataclass(frozen=True)
class BoundParams:
    G: float
    L: float
    C: float
    C_w0: float
    r: float
    delta: float
    lam: float
    m: int
    n: int
    schedule: object
    alpha: float | None = None
    init_dist: float | None = None

    def __post_init__(self):
        for name in ("G", "L", "C", "C_w0", "r"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not (0 < self.delta <= (1 + 1e-9) / self.m):
            raise ValueError(f"delta must lie in (0, 1/m], got {self.delta}")
        if not (0 <= self.lam < 1):
            raise ValueError(f"lambda must lie in [0, 1), got {self.lam}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive when set")
        if not isinstance(self.schedule, (Constant, Diminishing)):
            raise TypeError("schedule must be Constant or Diminishing")

    @property
    def kappa(self) -> float:
        if self.alpha is None:
            raise ValueError("alpha unset")
        return self.L / self.alpha

    @property
    def D(self) -> float:
        """||wbar0 - w*||; defaults to the ball diameter 2r."""
        return 2 * self.r if self.init_dist is None else self.init_dist

    @property
    def mn(self) -> int:
        return self.m * self.n

    @property
    def gap(self) -> float:
        return self.delta * (1 - self.lam)

    def as_row(self) -> dict:
        row = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "schedule":
                if isinstance(v, Constant):
                    row.update(schedule="constant", step=v.gamma)
                else:
                    row.update(schedule="diminishing", step=v.v)
            else:
                row[f.name] = v
        return row


def _require_alpha(p: BoundParams) -> float:
    if p.alpha is None:
        raise ValueError("PL bounds need alpha")
    return p.alpha


def _gammas(p: BoundParams, T: int) -> np.ndarray:
    return p.schedule.gammas(T)


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=float).tolist())


def _lam_pow(lam: float, T: int) -> np.ndarray:
    if lam == 0.0:
        out = np.zeros(T)
        if T:
            out[0] = 1.0
        return out
    return np.power(lam, np.arange(T, dtype=float))


def step_sums(p: BoundParams, T: int) -> tuple[float, float, float]:
    """(sum gamma_t lam^t, sum gamma_t^2, sum gamma_t) by compensated summation."""
    g = _gammas(p, T)
    return _fsum(g * _lam_pow(p.lam, T)), _fsum(g * g), _fsum(g)


def step_sums_geometric(p: BoundParams, T: int) -> tuple[float, float, float]:
    """Same sums in closed form for a constant schedule."""
    if not isinstance(p.schedule, Constant):
        raise TypeError("geometric sums need a constant schedule")
    g, lam = p.schedule.gamma, p.lam
    return g * (1 - lam ** T) / (1 - lam), g * g * T, g * T


# convex stability ----------------------------------------------------------

def _stab_convex(p, s1, s2, s3):
    return (2 * p.C * p.G * p.L * p.C_w0 / p.delta * s1
            + 2 * p.C * p.G ** 2 * p.L / p.gap * s2
            + 2 * p.G ** 2 / p.mn * s3)


def stability_bound_convex(p: BoundParams, T: int) -> float:
    if T < 0:
        raise ValueError("T must be >= 0")
    return _stab_convex(p, *step_sums(p, T))


def stability_bound_convex_geometric(p: BoundParams, T: int) -> float:
    return _stab_convex(p, *step_sums_geometric(p, T))


def stability_bound_convex_closed(p: BoundParams, T: int) -> float:
    G, L, C, gap, mn = p.G, p.L, p.C, p.gap, p.mn
    if isinstance(p.schedule, Constant):
        g = p.schedule.gamma
        return 2 * C * G * L * g * p.C_w0 / gap + (2 * C * G ** 2 * L * g * g / gap + 2 * G ** 2 * g / mn) * T
    if T < 1:
        raise ValueError("diminishing closed form needs T >= 1")
    v = p.schedule.v
    return (2 * G ** 2 * v / mn * math.log(T)
            + (2 * v * C * G * L * p.C_w0 + 4 * C * G ** 2 * L * v * v) / gap
            + 2 * G ** 2 * v / mn)


# convex optimization -------------------------------------------------------

def _opt_convex(p, s1, s2, s3):
    if s3 <= 0:
        raise ValueError("sum of step sizes is zero")
    return (p.D ** 2 / (2 * s3)
            + 2 * p.r * p.C * p.L * p.C_w0 / (p.delta * s3) * s1
            + (2 * p.r * p.C * p.L * p.G / p.gap + p.G ** 2 / 2) * s2 / s3)


def opt_bound_convex(p: BoundParams, T: int) -> float:
    return _opt_convex(p, *step_sums(p, T))


def opt_bound_convex_geometric(p: BoundParams, T: int) -> float:
    return _opt_convex(p, *step_sums_geometric(p, T))


def opt_bound_convex_closed(p: BoundParams, T: int) -> float:
    G, L, C, r, gap, D = p.G, p.L, p.C, p.r, p.gap, p.D
    if T < 1:
        raise ValueError("T must be >= 1")
    if isinstance(p.schedule, Constant):
        g = p.schedule.gamma
        if g <= 0:
            raise ValueError("sum of step sizes is zero")
        return (D * D / (2 * g) + 2 * r * C * L * p.C_w0 / gap) / T + 2 * C * G * r * L * g / gap + G * G * g / 2
    v = p.schedule.v
    lnT = math.log(T)
    num = D * D / v + 4 * r * C * L * p.C_w0 / gap + 8 * v * r * C * G * L / gap + 2 * v * G * G
    return num / lnT if lnT > 0 else INF


# convex excess risk --------------------------------------------------------

def excess_convex_terms(p: BoundParams) -> tuple[float, float, float]:
    """(A, B, C) with excess <= A T + B/T + C (constant) or A ln T + B/ln T + C (diminishing)."""
    G, L, C, r, gap, mn, D, Cw = p.G, p.L, p.C, p.r, p.gap, p.mn, p.D, p.C_w0
    if isinstance(p.schedule, Constant):
        g = p.schedule.gamma
        A = C * G * G * L * g * g / gap + G * G * g / mn
        B = D * D / (2 * g) + 2 * r * C * L * Cw / gap
        Cc = C * G * L * g * Cw / gap + 2 * r * C * L * G * g / gap + G * G * g / 2
        return A, B, Cc
    v = p.schedule.v
    K = 4 * G * C * L * v * Cw / gap + 8 * C * G * G * L * v * v / gap + 4 * G * G * v / mn
    A = 2 * G * G * v / mn
    B = K + D * D / v + 4 * r * C * L * Cw / gap + 8 * v * r * C * L * G / gap + 2 * v * G * G
    return A, B, K


def excess_convex(p: BoundParams, T) -> float:
    A, B, C = excess_convex_terms(p)
    if isinstance(p.schedule, Constant):
        return A * T + B / T + C
    x = math.log(T)
    return A * x + B / x + C if x > 0 else INF


def excess_convex_vec(p: BoundParams, T: np.ndarray) -> np.ndarray:
    A, B, C = excess_convex_terms(p)
    T = np.asarray(T, dtype=float)
    if isinstance(p.schedule, Constant):
        return A * T + B / T + C
    with np.errstate(divide="ignore"):
        x = np.log(T)
        return np.where(x > 0, A * x + B / np.where(x > 0, x, 1.0) + C, INF)


def optimal_stop_convex_continuous(p: BoundParams) -> tuple[float, float]:
    """Unrounded minimizer and the AM-GM value 2 sqrt(AB) + C."""
    A, B, C = excess_convex_terms(p)
    if A == 0:
        return INF, C
    x = math.sqrt(B / A)
    T = x if isinstance(p.schedule, Constant) else (math.exp(x) if x < 709 else INF)
    return T, 2 * math.sqrt(A * B) + C


def optimal_stop_convex(p: BoundParams) -> tuple[float, float]:
    """Integer T* (better of floor and ceiling of the continuous optimum) and its value."""
    T, val = optimal_stop_convex_continuous(p)
    if math.isinf(T):
        return INF, val
    if T > 2 ** 53:
        # integer rounding is meaningless at this scale
        return T, val
    lo = 1 if isinstance(p.schedule, Constant) else 2
    cands = {max(lo, math.floor(T)), max(lo, math.ceil(T))}
    best = min(cands, key=lambda k: (excess_convex(p, k), k))
    return float(best), excess_convex(p, best)


# non-convex stability ------------------------------------------------------

def _expansion(p: BoundParams, g: np.ndarray) -> np.ndarray:
    """R_t = prod_{k=t+1}^{T-1} (1 + L g_k - L g_k / mn)."""
    logs = np.log1p(p.L * g * (1 - 1 / p.mn))
    tail = np.concatenate([np.cumsum(logs[::-1])[::-1][1:], [0.0]]) if len(g) else logs
    with np.errstate(over="ignore"):
        return np.exp(tail)


def _min_over_t0(p: BoundParams, R: np.ndarray, term: np.ndarray) -> float:
    """min over t0 in {0..min(T, n)} of t0/(mn) + G sum_{t >= t0} R_t term_t.

    Returns INF once the expansion factor leaves the float range.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        weights = R * term
    if not np.all(np.isfinite(weights)):
        return INF
    T = len(weights)
    top = min(T, p.n)
    try:
        tail = _fsum(weights[top:])
    except OverflowError:
        return INF
    comp = 0.0
    best = top / p.mn + p.G * tail
    acc = tail
    for t0 in range(top - 1, -1, -1):
        # Neumaier accumulation, adding from the back
        x = float(weights[t0])
        s = acc + x
        comp += (acc - s) + x if abs(acc) >= abs(x) else (x - s) + acc
        acc = s
        val = t0 / p.mn + p.G * (acc + comp)
        if val < best:
            best = val
    return best


def stability_bound_nonconvex(p: BoundParams, T: int) -> float:
    """Direct evaluation following the proof's recursion (no 1/m on the C_w0 term)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    g = _gammas(p, T)
    inner = lfilter([0.0, p.lam], [1.0, -p.lam], g)  # sum_{s<t} lam^{t-s} g_s
    term = 2 * p.C * p.L * g / p.delta * (_lam_pow(p.lam, T) * p.C_w0 + p.G * inner) + 2 * p.G * g / p.mn
    return _min_over_t0(p, _expansion(p, g), term)


def stability_bound_nonconvex_display(p: BoundParams, T: int) -> float:
    """Variant with 1/(delta m) on the C_w0 term instead of the recursion's 1/delta."""
    if T < 1:
        raise ValueError("T must be >= 1")
    g = _gammas(p, T)
    term = (2 * p.C * p.L * g * _lam_pow(p.lam, T) * p.C_w0 / (p.delta * p.m)
            + 2 * p.G * p.C * p.L * g * g / p.gap + 2 * p.G * g / p.mn)
    return _min_over_t0(p, _expansion(p, g), term)


def nonconvex_exponents(v: float, L: float) -> tuple[float, float, float]:
    """(a, p, q) = (1/(2+vL), (1+vL)/(2+vL), vL/(2+vL))."""
    s = 2 + v * L
    return 1 / s, (1 + v * L) / s, v * L / s


def stability_bound_nonconvex_closed(p: BoundParams, T: int) -> float:
    G, L, C, gap, mn, Cw = p.G, p.L, p.C, p.gap, p.mn, p.C_w0
    if isinstance(p.schedule, Constant):
        g = p.schedule.gamma
        pref = 2 * G * C * L * g * Cw / gap + 4 * C * G * G * L * g * g / gap + 4 * G * G * g / mn
        rho_T = math.exp(T * math.log1p(L * g * (1 - 1 / mn)))
        return pref * rho_T
    v = p.schedule.v
    a, pe, q = nonconvex_exponents(v, L)
    va = v ** a
    return (4 * C * G * va * Cw / p.delta * T ** pe
            + (va + 4 * G * G) / mn * T ** pe
            + 2 * C * G * G * va / gap * T ** q)


# PL optimization -----------------------------------------------------------

def _opt_pl(p, s1, s2, s3):
    alpha = _require_alpha(p)
    if s3 <= 0:
        raise ValueError("sum of step sizes is zero")
    k = p.kappa
    return (p.G * p.r / (alpha * s3)
            + p.C * p.G * k * p.C_w0 / (2 * p.delta * s3) * s1
            + (p.C * p.G ** 2 * k / (2 * p.gap) + p.G ** 2 * k / 4) * s2 / s3)


def opt_bound_pl(p: BoundParams, T: int) -> float:
    return _opt_pl(p, *step_sums(p, T))


def opt_bound_pl_geometric(p: BoundParams, T: int) -> float:
    return _opt_pl(p, *step_sums_geometric(p, T))


def pl_floor(p: BoundParams) -> float:
    """Constant-step residual (C G^2 kappa / (2 delta (1-lam)) + G^2 kappa / 4) gamma."""
    k = p.kappa
    return (p.C * p.G ** 2 * k / (2 * p.gap) + p.G ** 2 * k / 4) * p.schedule.gamma


def _pl_K_opt(p: BoundParams) -> float:
    alpha, k, v = _require_alpha(p), p.kappa, p.schedule.v
    G, C, L = p.G, p.C, p.L
    return (C * G * k * p.C_w0 + 2 * v * C * G * G * L * k) / p.gap + (2 * p.r * G + v * v * G * G * L) / (v * alpha)


def opt_bound_pl_closed(p: BoundParams, T: int) -> float:
    alpha = _require_alpha(p)
    if T < 1:
        raise ValueError("T must be >= 1")
    if isinstance(p.schedule, Constant):
        g = p.schedule.gamma
        if g <= 0:
            raise ValueError("sum of step sizes is zero")
        c_opt = p.G * p.r / (alpha * g) + p.C * p.G * p.kappa * p.C_w0 / (2 * p.gap)
        return c_opt / T + pl_floor(p)
    lnT = math.log(T)
    return _pl_K_opt(p) / lnT if lnT > 0 else INF


# PL excess risk ------------------------------------------------------------

def pl_constants(p: BoundParams) -> dict:
    """C_stab, C_opt, rho, mu, floor for constant steps; K's and exponents for diminishing."""
    alpha = _require_alpha(p)
    G, L, C, gap, mn, Cw = p.G, p.L, p.C, p.gap, p.mn, p.C_w0
    if isinstance(p.schedule, Constant):
        g = p.schedule.gamma
        pref = 2 * G * C * L * g * Cw / gap + 4 * C * G * G * L * g * g / gap + 4 * G * G * g / mn
        c_stab = pref / (L * g * (1 - 1 / mn))
        c_opt = G * p.r / (alpha * g) + C * G * p.kappa * Cw / (2 * gap)
        mu = math.log1p(L * g * (1 - 1 / mn))
        return dict(C_stab=c_stab, C_opt=c_opt, rho=math.exp(mu), mu=mu, floor=pl_floor(p))
    v = p.schedule.v
    a, pe, q = nonconvex_exponents(v, L)
    va = v ** a
    k1 = 4 * G / pe * (4 * C * va * Cw / p.delta + va / (G * mn) + 4 * G / mn)
    k2 = 8 * G * G * C * va / (q * gap)
    return dict(K_stab1=k1, K_stab2=k2, K_stab=k1 + k2, K_opt=_pl_K_opt(p), a=a, p=pe, q=q)


def excess_pl(p: BoundParams, T) -> float:
    """The master objective whose minimization defines the PL stopping time."""
    c = pl_constants(p)
    if isinstance(p.schedule, Constant):
        growth = math.exp(min(T * c["mu"], 700.0))
        return c["C_opt"] / T + c["C_stab"] * growth / T + c["floor"]
    x = math.log(T)
    if x <= 0:
        return INF
    return (c["K_stab1"] * T ** c["p"] + c["K_stab2"] * T ** c["q"] + c["K_opt"]) / x


def excess_pl_vec(p: BoundParams, T: np.ndarray) -> np.ndarray:
    c = pl_constants(p)
    T = np.asarray(T, dtype=float)
    if isinstance(p.schedule, Constant):
        growth = np.exp(np.minimum(T * c["mu"], 700.0))
        with np.errstate(over="ignore"):
            return c["C_opt"] / T + c["C_stab"] * growth / T + c["floor"]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.log(T)
        val = (c["K_stab1"] * T ** c["p"] + c["K_stab2"] * T ** c["q"] + c["K_opt"]) / x
    return np.where(x > 0, val, INF)


def optimal_stop_pl(p: BoundParams) -> tuple[float, float]:
    """(T*, value) using the balance choices; value is the displayed upper bound.

    Constant steps: T* = ceil(ln(C_opt/C_stab)/mu), value (1+e) C_opt mu / ln(C_opt/C_stab) + floor,
    or T* = 1 and the master objective at 1 when C_opt <= C_stab.
    Diminishing steps: the balance T* when K_opt/(p K_stab) >= e, otherwise the
    master objective is minimized over a log-spaced grid (the display does not apply).
    """
    c = pl_constants(p)
    if isinstance(p.schedule, Constant):
        ratio = c["C_opt"] / c["C_stab"] if c["C_stab"] > 0 else INF
        if math.isinf(ratio):
            return INF, c["floor"]
        if ratio <= 1:
            return 1.0, excess_pl(p, 1)
        lr = math.log(ratio)
        T = max(1, math.ceil(lr / c["mu"]))
        return float(T), (1 + math.e) * c["C_opt"] * c["mu"] / lr + c["floor"]
    ratio = c["K_opt"] / (c["p"] * c["K_stab"])
    if ratio >= math.e:
        T = (ratio / math.log(ratio)) ** (1 / c["p"])
        return max(2.0, float(math.ceil(T))), c["p"] * c["K_opt"] / math.log(ratio)
    grid = np.unique(np.round(np.geomspace(2, 1e7, 2000)))
    vals = excess_pl_vec(p, grid)
    k = int(np.argmin(vals))
    return float(grid[k]), float(vals[k])


# push-sum consistency ------------------------------------------------------

def pushsum_consistency_bound(p: BoundParams, t: int) -> float:
    """(C/delta)(lam^t C_w0 + G sum_{s<t} lam^{t-s} gamma_s)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    g = _gammas(p, t)
    inner = _fsum(g * p.lam ** (t - np.arange(t, dtype=float))) if t else 0.0
    return p.C / p.delta * (p.lam ** t * p.C_w0 + p.G * inner)


def pushsum_consistency_curve(p: BoundParams, T: int) -> np.ndarray:
    """Envelope for t = 0..T-1 (vectorized recursion)."""
    g = _gammas(p, T)
    inner = lfilter([0.0, p.lam], [1.0, -p.lam], g) if T else g
    return p.C / p.delta * (_lam_pow(p.lam, T) * p.C_w0 + p.G * inner)


BOUND_FUNCTIONS = {
    "stab_convex": stability_bound_convex,
    "stab_convex_closed": stability_bound_convex_closed,
    "opt_convex": opt_bound_convex,
    "opt_convex_closed": opt_bound_convex_closed,
    "excess_convex": excess_convex,
    "stab_nonconvex": stability_bound_nonconvex,
    "stab_nonconvex_display": stability_bound_nonconvex_display,
    "stab_nonconvex_closed": stability_bound_nonconvex_closed,
    "opt_pl": opt_bound_pl,
    "opt_pl_closed": opt_bound_pl_closed,
    "excess_pl": excess_pl,
}


def with_schedule(p: BoundParams, schedule) -> BoundParams:
    return replace(p, schedule=schedule)
