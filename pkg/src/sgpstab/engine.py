"""Stochastic Gradient Push and a plain decentralized SGD baseline.

State per node i is the push-sum triple (w_i, u_i, z_i = w_i / u_i). One step:

    w_i <- sum_j P_ij (w_j - gamma_t g_j),  g_j = grad f(z_j; xi_j)
    u_i <- sum_j P_ij u_j
    z_i <- w_i / u_i

The D-SGD baseline freezes u at 1 and uses z = w.

Sampling is counter based: the index drawn by node i at step t is a hash of
(seed, t, i), so results never depend on evaluation order or worker count.
Mixing uses a CSR product whose per-row accumulation runs over j in
ascending order.
"""
from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data_io import Dataset, ShardedDataset
from .errors import ContractViolation
from .mixing import MixingMatrix, build_mixing
from .objectives import LogisticL2, empirical_risk
from .topology import DirectedGraph

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def hash_key(*parts: int) -> np.uint64:
    h = np.zeros(1, dtype=np.uint64)
    for p in parts:
        h = _splitmix(h ^ np.array([int(p) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    return h[0]


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 63-bit seed for a (tag, ...) sub-stream of a top-level seed."""
    return int(hash_key(seed, *tags) >> np.uint64(1))


class SamplingMode(str, enum.Enum):
    SHARED = "SharedIndex"
    PER_NODE = "PerNode"

    @classmethod
    def parse(cls, name) -> "SamplingMode":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        for mode in cls:
            if mode.value.lower() == key:
                return mode
        raise ValueError(f"unknown sampling mode {name!r}")


class Algorithm(str, enum.Enum):
    SGP = "SGP"
    DSGD = "DSGD"

    @classmethod
    def parse(cls, name) -> "Algorithm":
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("-", "")
        for alg in cls:
            if alg.value == key:
                return alg
        raise ValueError(f"unknown algorithm {name!r}")


@dataclass(frozen=True)
class Sampler:
    """Counter-based sample indices derived from (seed, t, node)."""

    seed: int
    mode: SamplingMode = SamplingMode.PER_NODE

    def indices(self, t: int, m: int, n: int) -> np.ndarray:
        base = hash_key(self.seed, t)
        if self.mode is SamplingMode.SHARED:
            return np.full(m, int(base % np.uint64(n)), dtype=np.int64)
        nodes = np.arange(1, m + 1, dtype=np.uint64)
        return (_splitmix(base ^ nodes) % np.uint64(n)).astype(np.int64)


@dataclass(frozen=True)
class Constant:
    gamma: float

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be nonnegative")

    def __call__(self, t: int) -> float:
        return self.gamma

    def gammas(self, T: int) -> np.ndarray:
        return np.full(T, float(self.gamma))


@dataclass(frozen=True)
class Diminishing:
    """gamma_t = v / (t + 1)."""

    v: float

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError("v must be positive")

    def __call__(self, t: int) -> float:
        return self.v / (t + 1)

    def gammas(self, T: int) -> np.ndarray:
        return self.v / np.arange(1, T + 1, dtype=float)


StepSchedule = "Constant | Diminishing"


def check_convex_schedule(schedule, L: float) -> bool:
    """Warn when the first (largest) step exceeds 2/L."""
    ok = schedule(0) <= 2.0 / L
    if not ok:
        warnings.warn(f"step size {schedule(0):g} exceeds 2/L = {2.0 / L:g}", stacklevel=2)
    return ok


@dataclass(frozen=True)
class TrainConfig:
    T: int
    schedule: object
    seed: int = 0
    algorithm: Algorithm = Algorithm.SGP
    sampling_mode: SamplingMode = SamplingMode.PER_NODE
    init_scale: float = 0.0
    projection_radius: float | None = None
    eval_every: int = 1

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm))
        object.__setattr__(self, "sampling_mode", SamplingMode.parse(self.sampling_mode))


@dataclass
class SwarmState:
    """Rows are nodes. ``grads`` holds the gradients used by the step that produced this state."""

    W: np.ndarray
    u: np.ndarray
    Z: np.ndarray
    grads: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.W.shape[0]

    def node(self, i: int) -> tuple[np.ndarray, float, np.ndarray]:
        return self.W[i], float(self.u[i]), self.Z[i]

    def mean(self) -> np.ndarray:
        return self.W.sum(axis=0) / self.m

    def copy(self) -> "SwarmState":
        g = None if self.grads is None else self.grads.copy()
        return SwarmState(self.W.copy(), self.u.copy(), self.Z.copy(), g)


def init_state(m: int, d: int, seed: int, scale: float = 0.0) -> SwarmState:
    W = np.zeros((m, d))
    if scale:
        for i in range(m):
            rng = np.random.default_rng(np.random.SeedSequence([derive_seed(seed, 0x1A17, i)]))
            W[i] = scale * rng.standard_normal(d)
    return SwarmState(W, np.ones(m), W.copy())


def initial_spread(state: SwarmState) -> float:
    """C_w0 = (1/m) sum_i ||w_i^(0)||."""
    return float(np.linalg.norm(state.W, axis=1).sum() / state.m)


class Mixer:
    """Applies a mixing matrix with a fixed, ascending-j accumulation order."""

    def __init__(self, P):
        A = P.P if isinstance(P, MixingMatrix) else np.asarray(P, dtype=float)
        self.P = A
        self.csr = sp.csr_matrix(A)
        self.csr.sort_indices()

    @property
    def m(self) -> int:
        return self.P.shape[0]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.csr @ X)


def _as_mixer(P) -> Mixer:
    return P if isinstance(P, Mixer) else Mixer(P)


def _project(X: np.ndarray, r: float) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X * np.minimum(1.0, r / np.maximum(norms, 1e-300))


def _gradients(state, model, shards: ShardedDataset, t, sampler: Sampler) -> np.ndarray:
    F, Y = shards.dense_tensor()
    m, n = Y.shape
    if m != state.m:
        raise ValueError(f"shards have {m} nodes, state has {state.m}")
    idx = sampler.indices(t, m, n)
    rows = np.arange(m)
    return model.row_grads(state.Z, F[rows, idx], Y[rows, idx])


def _commit(state, P: Mixer, grads, gamma, push_sum: bool, t: int, radius=None) -> SwarmState:
    W = P(state.W - gamma * grads)
    if push_sum:
        u = P(state.u)
        if not np.all(u > 0):
            k = int(np.argmin(u))
            raise ContractViolation(f"push-sum weight u[{k}] = {u[k]!r} <= 0 at step {t}")
        Z = W / u[:, None]
    else:
        u = state.u
        Z = W
    if radius is not None:
        Z = _project(Z, radius)
        W = Z * u[:, None]
    return SwarmState(W, u, Z, grads)


def sgp_step(state: SwarmState, P, model, shards: ShardedDataset, t: int, gamma: float,
             sampler: Sampler, radius: float | None = None) -> SwarmState:
    P = _as_mixer(P)
    grads = _gradients(state, model, shards, t, sampler)
    return _commit(state, P, grads, gamma, True, t, radius)


def dsgd_step(state: SwarmState, P, model, shards: ShardedDataset, t: int, gamma: float,
              sampler: Sampler, radius: float | None = None) -> SwarmState:
    P = _as_mixer(P)
    grads = _gradients(state, model, shards, t, sampler)
    return _commit(state, P, grads, gamma, False, t, radius)


def consensus_error(state: SwarmState) -> tuple[float, float]:
    wbar = state.mean()
    dev = np.linalg.norm(state.Z - wbar, axis=1)
    return float(dev.max()), float(dev.sum() / state.m)


def verify_average_dynamics(wbar_t, wbar_next, grads, gamma: float) -> float:
    """||wbar^(t+1) - (wbar^(t) - gamma/m sum_i g_i)||."""
    m = grads.shape[0]
    pred = wbar_t - gamma * (grads.sum(axis=0) / m)
    return float(np.linalg.norm(wbar_next - pred))


TRAJECTORY_HEADER = ["t", "gamma", "train_loss", "test_loss", "cons_max", "cons_mean", "u_sum"]


@dataclass
class TrajectoryRecord:
    """Row t (0 <= t < T) describes the state at iteration t and the step size applied there."""

    t: np.ndarray
    gamma: np.ndarray
    train_loss: np.ndarray
    test_loss: np.ndarray
    cons_max: np.ndarray
    cons_mean: np.ndarray
    u_sum: np.ndarray
    grad_norm_max: np.ndarray
    avg_residual: np.ndarray
    w_final: np.ndarray
    w_avg: np.ndarray | None
    wbar: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for k in range(len(self)):
            writer.writerow([int(self.t[k])] + [repr(float(col[k])) for col in (
                self.gamma, self.train_loss, self.test_loss, self.cons_max, self.cons_mean, self.u_sum)])
        return out.getvalue()


def run_training(config: TrainConfig, graph, model, data: ShardedDataset,
                 test: Dataset | None = None, keep_wbar: bool = False,
                 state: SwarmState | None = None) -> TrajectoryRecord:
    """Run T steps and record per-step diagnostics.

    ``graph`` may be a DirectedGraph, a MixingMatrix or a raw array.
    """
    P = Mixer(build_mixing(graph) if isinstance(graph, DirectedGraph) else graph)
    m, d, T = data.m, data.d, config.T
    if P.m != m:
        raise ValueError(f"mixing matrix is {P.m}x{P.m} but data has {m} shards")
    test = test if test is not None else data.test
    push_sum = config.algorithm is Algorithm.SGP
    sampler = Sampler(config.seed, config.sampling_mode)
    state = state.copy() if state is not None else init_state(m, d, config.seed, config.init_scale)
    train = data.train() if T else None
    gammas = config.schedule.gammas(T)

    cols = {k: np.full(T, np.nan) for k in ("train", "test", "cmax", "cmean", "usum", "gmax", "res")}
    wbar_hist = np.empty((T + 1, d)) if keep_wbar else None
    acc = np.zeros(d)
    for t in range(T):
        wbar = state.mean()
        if keep_wbar:
            wbar_hist[t] = wbar
        acc += gammas[t] * wbar
        cols["cmax"][t], cols["cmean"][t] = consensus_error(state)
        cols["usum"][t] = state.u.sum()
        if t % config.eval_every == 0:
            cols["train"][t] = empirical_risk(model, wbar, train.X, train.y)
            if test is not None and len(test):
                cols["test"][t] = empirical_risk(model, wbar, test.X, test.y)
        grads = _gradients(state, model, data, t, sampler)
        cols["gmax"][t] = float(np.sqrt((grads * grads).sum(axis=1).max()))
        state = _commit(state, P, grads, gammas[t], push_sum, t, config.projection_radius)
        if config.projection_radius is None:
            cols["res"][t] = verify_average_dynamics(wbar, state.mean(), grads, gammas[t])
    w_final = state.mean()
    if keep_wbar:
        wbar_hist[T] = w_final
    total = math.fsum(gammas.tolist())
    w_avg = acc / total if T and total > 0 else None
    return TrajectoryRecord(
        t=np.arange(T), gamma=gammas, train_loss=cols["train"], test_loss=cols["test"],
        cons_max=cols["cmax"], cons_mean=cols["cmean"], u_sum=cols["usum"],
        grad_norm_max=cols["gmax"], avg_residual=cols["res"], w_final=w_final, w_avg=w_avg,
        wbar=wbar_hist, extras={"final_state": state},
    )
