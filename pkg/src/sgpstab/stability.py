"""Neighboring datasets, coupled runs and stability / generalization estimates."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .data_io import Dataset, ShardedDataset
from .engine import (Algorithm, Mixer, Sampler, SamplingMode, TrainConfig, _commit, derive_seed,
                     init_state)
from .mixing import build_mixing
from .objectives import Sample, empirical_risk
from .topology import DirectedGraph


@dataclass(frozen=True)
class NeighborPair:
    base: ShardedDataset
    perturbed: ShardedDataset
    node: int
    local_index: int
    replacement: Sample


def choose_position(seed: int, m: int, n: int) -> tuple[int, int]:
    """Uniform (node, local index) derived from the seed."""
    k = derive_seed(seed, 0x9051) % (m * n)
    return k // n, k % n


def make_neighbor(data: ShardedDataset, node: int, local_index: int,
                  replacement_source: "Dataset | Sample", seed: int = 0) -> NeighborPair:
    """Replace one training sample with one drawn (by seed) from a held-out pool."""
    if not (0 <= node < data.m and 0 <= local_index < data.n):
        raise IndexError(f"position ({node}, {local_index}) outside {data.m} x {data.n} shards")
    if isinstance(replacement_source, Sample):
        repl, row = replacement_source, -1
    else:
        if len(replacement_source) == 0:
            raise ValueError("held-out pool is empty")
        k = derive_seed(seed, 0x7001) % len(replacement_source)
        repl, row = replacement_source.sample(k), int(replacement_source.rows[k])
    return NeighborPair(data, data.replace(node, local_index, repl, row), node, local_index, repl)


@dataclass
class CoupledTrace:
    """delta[t] = ||wbar^(t) - wbar'^(t)|| for t = 0..T; gaps are NaN where not evaluated."""

    delta: np.ndarray
    avg_divergence: float
    gen_gap: np.ndarray
    gen_gap_prime: np.ndarray
    w_out: np.ndarray
    w_out_prime: np.ndarray
    grad_norm_max: float
    seed: int = 0

    @property
    def delta_T(self) -> float:
        return float(self.delta[-1])


def generalization_gap(w, model, train_set: Dataset, test_set: Dataset) -> float:
    """Mean test loss minus mean train loss at w (a vector or a record's final iterate)."""
    if hasattr(w, "w_final"):
        w = w.w_final
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValueError("empty train or test set")
    return empirical_risk(model, w, test_set.X, test_set.y) - empirical_risk(model, w, train_set.X, train_set.y)


def coupled_run(config: TrainConfig, graph, model, pair: NeighborPair, output: str = "last",
                gap_every: int = 0, test: Dataset | None = None) -> CoupledTrace:
    """Run S and S' in lockstep with shared sample indices.

    gap_every > 0 evaluates both generalization gaps every that many steps
    (and always at T); 0 evaluates only at T.
    """
    if config.sampling_mode is not SamplingMode.SHARED:
        raise ValueError("coupled runs require SharedIndex sampling")
    if output not in ("last", "avg"):
        raise ValueError("output must be 'last' or 'avg'")
    P = Mixer(build_mixing(graph) if isinstance(graph, DirectedGraph) else graph)
    base, pert = pair.base, pair.perturbed
    m, n, d, T = base.m, base.n, base.d, config.T
    test = test if test is not None else base.test
    Fa, Ya = base.dense_tensor()
    Fb, Yb = pert.dense_tensor()
    train_a, train_b = (base.train(), pert.train()) if test is not None else (None, None)
    sampler = Sampler(config.seed, SamplingMode.SHARED)
    push_sum = config.algorithm is Algorithm.SGP
    gammas = config.schedule.gammas(T)
    sa = init_state(m, d, config.seed, config.init_scale)
    sb = sa.copy()
    rows = np.arange(m)
    delta = np.zeros(T + 1)
    gap = np.full(T + 1, np.nan)
    gap_p = np.full(T + 1, np.nan)
    acc_a, acc_b = np.zeros(d), np.zeros(d)
    gsum = 0.0
    gmax = 0.0

    def out(state, acc):
        if output == "last" or gsum == 0:
            return state.mean()
        return acc / gsum

    def record_gap(t):
        if test is None:
            return
        gap[t] = generalization_gap(out(sa, acc_a), model, train_a, test)
        gap_p[t] = generalization_gap(out(sb, acc_b), model, train_b, test)

    for t in range(T):
        if gap_every and t % gap_every == 0 and t:
            record_gap(t)
        acc_a += gammas[t] * sa.mean()
        acc_b += gammas[t] * sb.mean()
        gsum += gammas[t]
        idx = sampler.indices(t, m, n)
        ga = model.row_grads(sa.Z, Fa[rows, idx], Ya[rows, idx])
        gb = model.row_grads(sb.Z, Fb[rows, idx], Yb[rows, idx])
        gmax = max(gmax, float(np.sqrt(max((ga * ga).sum(axis=1).max(), (gb * gb).sum(axis=1).max()))))
        sa = _commit(sa, P, ga, gammas[t], push_sum, t, config.projection_radius)
        sb = _commit(sb, P, gb, gammas[t], push_sum, t, config.projection_radius)
        delta[t + 1] = np.linalg.norm(sa.mean() - sb.mean())
    record_gap(T)
    wa, wb = out(sa, acc_a), out(sb, acc_b)
    avg_div = float(np.linalg.norm(acc_a - acc_b) / gsum) if gsum > 0 else 0.0
    return CoupledTrace(delta, avg_div, gap, gap_p, wa, wb, gmax, config.seed)


def stability_estimate(traces: list[CoupledTrace], model, probe_set: Dataset) -> float:
    """max_z mean_traces |f(w; z) - f(w'; z)| over probe samples z."""
    if not traces:
        raise ValueError("need at least one trace")
    if len(probe_set) == 0:
        raise ValueError("empty probe set")
    diffs = np.zeros(len(probe_set))
    for tr in traces:
        diffs += np.abs(model.losses(tr.w_out, probe_set.X, probe_set.y)
                        - model.losses(tr.w_out_prime, probe_set.X, probe_set.y))
    return float(np.max(diffs / len(traces)))


def mean_stderr(values) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error along axis 0 (stderr is 0 for a single replicate)."""
    arr = np.asarray(values, dtype=float)
    k = arr.shape[0]
    mean = arr.mean(axis=0)
    if k < 2:
        return mean, np.zeros_like(mean)
    return mean, arr.std(axis=0, ddof=1) / math.sqrt(k)


REPLICATE_HEADER = ["seed", "t", "delta", "gen_gap_run", "gen_gap_run_prime"]
AGGREGATE_HEADER = ["t", "delta_mean", "delta_stderr", "gen_gap_mean", "gen_gap_stderr",
                    "gen_gap_prime_mean", "gen_gap_prime_stderr"]


def replicate_csv(traces: list[CoupledTrace], stride: int = 1) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPLICATE_HEADER)
    for tr in traces:
        T = len(tr.delta) - 1
        for t in _rows(T, stride):
            w.writerow([tr.seed, t, repr(float(tr.delta[t])), repr(float(tr.gen_gap[t])),
                        repr(float(tr.gen_gap_prime[t]))])
    return out.getvalue()


def aggregate_csv(traces: list[CoupledTrace], stride: int = 1) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    dm, ds = mean_stderr([tr.delta for tr in traces])
    gm, gs = mean_stderr([tr.gen_gap for tr in traces])
    pm, ps = mean_stderr([tr.gen_gap_prime for tr in traces])
    for t in _rows(len(dm) - 1, stride):
        w.writerow([t] + [repr(float(v[t])) for v in (dm, ds, gm, gs, pm, ps)])
    return out.getvalue()


def _rows(T: int, stride: int) -> list[int]:
    rows = list(range(0, T + 1, max(1, stride)))
    if rows[-1] != T:
        rows.append(T)
    return rows


def fit_r2(x, y) -> float:
    """R^2 of an ordinary least-squares line through (x, y)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
