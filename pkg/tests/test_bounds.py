import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgpstab import bounds as B
from sgpstab.engine import Constant, Diminishing

from oracles import geometric_inner


def params(**kw):
    base = dict(G=2.0, L=1.5, C=3.0, C_w0=0.7, r=4.0, delta=0.1, lam=0.6, m=8, n=50,
                schedule=Constant(0.01), alpha=0.5)
    base.update(kw)
    return B.BoundParams(**base)


def test_param_validation():
    with pytest.raises(ValueError):
        params(delta=0.2)
    with pytest.raises(ValueError):
        params(lam=1.0)
    with pytest.raises(ValueError):
        params(G=-1.0)
    with pytest.raises(ValueError):
        params(alpha=0.0)
    with pytest.raises(ValueError):
        B.opt_bound_pl(params(alpha=None), 10)


def test_stability_convex_examples():
    p = params()
    assert B.stability_bound_convex(p, 0) == 0
    q = params(lam=0.0, C_w0=0.0)
    g, T = 0.01, 37
    expect = (2 * q.C * q.G ** 2 * q.L * g * g / q.delta + 2 * q.G ** 2 * g / q.mn) * T
    assert B.stability_bound_convex(q, T) == pytest.approx(expect, rel=1e-14)


def test_convex_closed_constant_display():
    p = params()
    g, T = 0.01, 250
    expect = (2 * p.C * p.G * p.L * g * p.C_w0 / (p.delta * (1 - p.lam))
              + (2 * p.C * p.G ** 2 * p.L * g * g / (p.delta * (1 - p.lam)) + 2 * p.G ** 2 * g / p.mn) * T)
    assert B.stability_bound_convex_closed(p, T) == pytest.approx(expect, rel=1e-14)


def test_convex_closed_diminishing_at_one():
    p = params(schedule=Diminishing(0.3))
    v = 0.3
    const = ((2 * v * p.C * p.G * p.L * p.C_w0 + 4 * p.C * p.G ** 2 * p.L * v * v) / p.gap + 2 * p.G ** 2 * v / p.mn)
    assert B.stability_bound_convex_closed(p, 1) == pytest.approx(const, rel=1e-14)
    with pytest.raises(ValueError):
        B.stability_bound_convex_closed(p, 0)


def test_geometric_matches_direct():
    for lam in (0.0, 0.3, 0.999):
        p = params(lam=lam)
        for T in (1, 17, 5000):
            for direct, geo in ((B.stability_bound_convex, B.stability_bound_convex_geometric),
                                (B.opt_bound_convex, B.opt_bound_convex_geometric),
                                (B.opt_bound_pl, B.opt_bound_pl_geometric)):
                assert direct(p, T) == pytest.approx(geo(p, T), rel=1e-9)


def test_opt_convex_limits():
    p = params()
    residual = 2 * p.C * p.G * p.r * p.L * 0.01 / p.gap + p.G ** 2 * 0.01 / 2
    assert B.opt_bound_convex_closed(p, 10 ** 12) == pytest.approx(residual, rel=1e-6)
    lead = (p.D ** 2 / 0.02 + 2 * p.r * p.C * p.L * p.C_w0 / p.gap)
    assert B.opt_bound_convex_closed(p, 100) == pytest.approx(lead / 100 + residual, rel=1e-14)
    with pytest.raises(ValueError):
        B.opt_bound_convex(params(schedule=Constant(0.0)), 10)
    assert B.opt_bound_convex_closed(params(schedule=Diminishing(.1)), 1) == math.inf


def test_excess_convex_composition():
    p = params()
    A, Bc, C = B.excess_convex_terms(p)
    T, val = B.optimal_stop_convex(p)
    Tc, vc = B.optimal_stop_convex_continuous(p)
    assert Tc == pytest.approx(math.sqrt(Bc / A))
    assert vc == pytest.approx(2 * math.sqrt(A * Bc) + C, rel=1e-14)
    assert T in (math.floor(Tc), math.ceil(Tc))
    grid = np.arange(1, 10 ** 6 + 1)
    assert val == pytest.approx(B.excess_convex_vec(p, grid).min(), rel=1e-12)


def test_excess_convex_synthetic_unit(monkeypatch):
    monkeypatch.setattr(B, "excess_convex_terms", lambda p: (1.0, 1.0, 0.0))
    assert B.optimal_stop_convex(params()) == (1.0, 2.0)


def test_excess_convex_zero_A():
    p = params(G=0.0)
    T, val = B.optimal_stop_convex(p)
    assert T == math.inf and val == B.excess_convex_terms(p)[2]


def test_nonconvex_examples():
    assert B.stability_bound_nonconvex(params(schedule=Constant(0.0)), 50) == 0
    p = params(L=0.0)
    # L = 0: no amplification, and the lambda-terms vanish with L
    g = 0.01
    for T in (5, 60):
        expect = min(t0 / p.mn + p.G * (T - t0) * 2 * p.G * g / p.mn for t0 in range(0, min(T, p.n) + 1))
        assert B.stability_bound_nonconvex(p, T) == pytest.approx(expect, rel=1e-12)


def test_nonconvex_brute_force():
    p = params(n=7)
    T = 12
    g = p.schedule.gammas(T)
    rho = 1 + p.L * g - p.L * g / p.mn
    inner = [geometric_inner(0.01, p.lam, t) for t in range(T)]
    best = math.inf
    for t0 in range(0, min(T, p.n) + 1):
        tot = 0.0
        for t in range(t0, T):
            amp = math.prod(rho[t + 1:])
            tot += amp * (2 * p.C * p.L * g[t] / p.delta * (p.lam ** t * p.C_w0 + p.G * inner[t]) + 2 * p.G * g[t] / p.mn)
        best = min(best, t0 / p.mn + p.G * tot)
    assert B.stability_bound_nonconvex(p, T) == pytest.approx(best, rel=1e-12)
    best = math.inf
    for t0 in range(0, min(T, p.n) + 1):
        tot = sum(math.prod(rho[t + 1:]) * (2 * p.C * p.L * g[t] * p.lam ** t * p.C_w0 / (p.delta * p.m)
                                            + 2 * p.G * p.C * p.L * g[t] ** 2 / p.gap + 2 * p.G * g[t] / p.mn)
                  for t in range(t0, T))
        best = min(best, t0 / p.mn + p.G * tot)
    assert B.stability_bound_nonconvex_display(p, T) == pytest.approx(best, rel=1e-12)


def test_nonconvex_closed_examples():
    p = params()
    g = 0.01
    pref = 2 * p.G * p.C * p.L * g * p.C_w0 / p.gap + 4 * p.C * p.G ** 2 * p.L * g * g / p.gap + 4 * p.G ** 2 * g / p.mn
    assert B.stability_bound_nonconvex_closed(p, 0) == pytest.approx(pref, rel=1e-14)


@given(st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_exponent_identities(v, L):
    a, p, q = B.nonconvex_exponents(v, L)
    assert p - q == pytest.approx(a, rel=1e-12) and p < 1 and 0 < q < p


def test_pl_examples():
    p = params()
    floor = (p.C * p.G ** 2 * p.kappa / (2 * p.gap) + p.G ** 2 * p.kappa / 4) * 0.01
    assert B.pl_floor(p) == pytest.approx(floor, rel=1e-14)
    assert B.opt_bound_pl_closed(p, 10 ** 13) == pytest.approx(floor, rel=1e-6)
    # halving alpha doubles every kappa-proportional term; the G r / alpha term doubles too
    q = params(alpha=0.25)
    assert B.opt_bound_pl_closed(q, 100) == pytest.approx(2 * B.opt_bound_pl_closed(p, 100), rel=1e-14)
    assert B.pl_floor(q) == pytest.approx(2 * floor, rel=1e-14)


def test_pl_stop_balance_example(monkeypatch):
    # C_opt = e C_stab and rho = e give T* = 1
    monkeypatch.setattr(B, "pl_constants", lambda p: dict(C_stab=1.0, C_opt=math.e, rho=math.e, mu=1.0, floor=0.0))
    T, val = B.optimal_stop_pl(params())
    assert T == 1 and val == pytest.approx((1 + math.e) * math.e)


def test_pl_stop_fallback_when_ratio_small():
    p = params(r=1e-6, C_w0=0.0)
    c = B.pl_constants(p)
    assert c["C_opt"] <= c["C_stab"]
    assert B.optimal_stop_pl(p) == (1.0, B.excess_pl(p, 1))


def test_pl_diminishing_stop_is_finite():
    T, val = B.optimal_stop_pl(params(schedule=Diminishing(0.5)))
    assert 2 <= T < math.inf and 0 < val < math.inf


def test_pushsum_bound():
    p = params()
    assert B.pushsum_consistency_bound(p, 0) == pytest.approx(p.C / p.delta * p.C_w0)
    assert B.pushsum_consistency_bound(params(G=0.0, C_w0=0.0), 30) == 0
    for t in (1, 5, 40):
        closed = p.C / p.delta * (p.lam ** t * p.C_w0 + p.G * 0.01 * p.lam * (1 - p.lam ** t) / (1 - p.lam))
        assert B.pushsum_consistency_bound(p, t) == pytest.approx(closed, rel=1e-12)
        loop = p.C / p.delta * (p.lam ** t * p.C_w0 + p.G * geometric_inner(0.01, p.lam, t))
        assert B.pushsum_consistency_bound(p, t) == pytest.approx(loop, rel=1e-12)
    curve = B.pushsum_consistency_curve(p, 40)
    assert curve[5] == pytest.approx(B.pushsum_consistency_bound(p, 5), rel=1e-12)


draws = st.fixed_dictionaries(dict(
    G=st.floats(0.1, 10), L=st.floats(0.1, 10), C=st.floats(1, 50), C_w0=st.floats(0, 10), r=st.floats(0.1, 10),
    frac=st.floats(0.05, 1), lam=st.floats(0, 0.999999), m=st.integers(1, 64), n=st.integers(1, 2000),
    gamma=st.floats(1e-5, 0.1), alpha=st.floats(0.01, 1), T=st.integers(1, 3000)))


def from_draw(d, schedule):
    return B.BoundParams(G=d["G"], L=d["L"], C=d["C"], C_w0=d["C_w0"], r=d["r"], delta=d["frac"] / d["m"],
                         lam=d["lam"], m=d["m"], n=d["n"], schedule=schedule, alpha=d["alpha"] * d["L"])


@given(draws, st.booleans())
def test_bounds_finite_nonnegative_monotone(d, const):
    p = from_draw(d, Constant(d["gamma"]) if const else Diminishing(d["gamma"]))
    T = d["T"]
    # the nonconvex bound carries exp(L sum gamma), past float range it is reported as inf
    representable = p.L * math.fsum(p.schedule.gammas(T)) < 600
    for name in ("stab_convex", "opt_convex", "stab_nonconvex", "opt_pl", "stab_convex_closed"):
        fn = B.BOUND_FUNCTIONS[name]
        base = fn(p, T)
        assert base >= 0
        if name != "stab_nonconvex" or representable:
            assert base < math.inf
        bigger_G = fn(B.BoundParams(**{**p.__dict__, "G": p.G * 2}), T)
        smaller_delta = fn(B.BoundParams(**{**p.__dict__, "delta": p.delta / 2}), T)
        assert bigger_G >= base * (1 - 1e-12) and smaller_delta >= base * (1 - 1e-12)


@given(draws)
def test_convex_direct_below_closed(d):
    for sched in (Constant(d["gamma"]), Diminishing(d["gamma"])):
        p = from_draw(d, sched)
        T = d["T"]
        assert B.stability_bound_convex(p, T) <= B.stability_bound_convex_closed(p, T) * (1 + 1e-12)
        assert B.opt_bound_convex(p, T) <= B.opt_bound_convex_closed(p, T) * (1 + 1e-12)


def test_nonconvex_overflow_is_inf():
    p = B.BoundParams(G=1, L=10, C=1, C_w0=1, r=1, delta=0.05, lam=0.5, m=16, n=1000, schedule=Constant(0.1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert B.stability_bound_nonconvex(p, 3000) == math.inf
        assert B.stability_bound_nonconvex_display(p, 3000) == math.inf
