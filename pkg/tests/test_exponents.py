import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from rcubound.exponents import (ExponentBatch, ExponentContext, cubic_coefficients, e0, e0_batch, exponent_E,
                                lambda_objective, ln_count_fa, optimal_lambda, p_t, p_tt)
from rcubound.model import ListWindow, SystemConfig
from rcubound.numerics import ln_binomial

LN_M = 128 * math.log(2)
PP4 = 0.95 * SystemConfig.power_from_ebn0(4.0, 19200, 128)


def _ctx(K_a=50, lower=50, upper=50, Pprime=PP4, n=19200, ln_m=LN_M):
    return ExponentContext(K_a, ListWindow(lower, upper), Pprime, ln_m, n)


def _grid_max(rho, rho1, t, tp, Pprime, P2, points=100_000):
    """Dense-grid maximum of the lambda objective over its feasible interval."""
    P3 = (tp + rho * t) * Pprime
    k = rho * rho1 * P2 * P3
    lmax = (P3 + math.sqrt(P3 * P3 + 4 * k)) / (2 * k)
    lam = np.linspace(0, lmax, points + 2)[1:-1]
    vals = lambda_objective(lam, rho, rho1, t, tp, Pprime, P2)
    j = int(np.argmax(vals))
    return float(vals[j]), float(lam[j]), lmax


def _random_contexts(count, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        rho, rho1 = rng.uniform(0.05, 1.0, 2)
        t, tp = int(rng.integers(0, 40)), int(rng.integers(0, 40))
        if t + tp == 0:
            continue
        Pp = 10 ** rng.uniform(-3, 0)
        P2 = 1 + int(rng.integers(0, 6)) * Pp
        out.append((rho, rho1, t, tp, Pp, P2))
    return out


def test_e0_vanishes_without_errors_or_with_rho_zero():
    ctx = _ctx()
    assert e0(ctx, 0, 0, 0.7, 0.4) == 0.0
    assert e0(ctx, 3, 2, 0.0, 0.8) == 0.0
    assert exponent_E(ctx, 0, 0) == 0.0


@pytest.mark.parametrize("case", _random_contexts(25, 11))
def test_cubic_lambda_is_grid_optimal(case):
    rho, rho1, t, tp, Pp, P2 = case
    val, lam = e0_batch(rho, rho1, t, tp, Pp, P2)
    ref, _, _ = _grid_max(rho, rho1, t, tp, Pp, P2)
    assert float(val) >= ref - 1e-6
    assert float(val) <= ref + 1e-6 + 1e-9 * abs(ref)


@pytest.mark.parametrize("case", _random_contexts(25, 12))
def test_cubic_coefficients_vanish_at_the_maximiser(case):
    rho, rho1, t, tp, Pp, P2 = case
    _, _, lmax = _grid_max(rho, rho1, t, tp, Pp, P2, points=1000)
    res = optimize.minimize_scalar(lambda x: -float(lambda_objective(x, rho, rho1, t, tp, Pp, P2)),
                                   bounds=(1e-12 * lmax, lmax * (1 - 1e-12)), method="bounded",
                                   options={"xatol": 1e-14 * lmax})
    lam = res.x
    c = cubic_coefficients(rho, rho1, t, tp, Pp, P2)
    scale = max(abs(c[0]) * lam**3, abs(c[1]) * lam**2, abs(c[2]) * lam, abs(c[3]))
    resid = c[0] * lam**3 + c[1] * lam**2 + c[2] * lam + c[3]
    # the maximiser is interior unless the objective increases up to lam_max
    if lam < 0.999 * lmax:
        assert abs(resid) <= 1e-5 * scale


def test_published_middle_coefficient_is_not_stationary():
    rho, rho1, t, tp, Pp, P2 = 0.6, 0.5, 4, 3, 0.05, 1.1
    val, lam = e0_batch(rho, rho1, t, tp, Pp, P2)
    cp = cubic_coefficients(rho, rho1, t, tp, Pp, P2, printed=True)
    cc = cubic_coefficients(rho, rho1, t, tp, Pp, P2)
    lam = float(lam)
    res = lambda c: c[0] * lam**3 + c[1] * lam**2 + c[2] * lam + c[3]
    scale = max(abs(v) for v in cc) * max(1.0, lam**3)
    assert abs(res(cc)) < 1e-9 * scale
    assert abs(res(cp)) > 1e-4 * scale
    assert cp[0] == cc[0] and cp[2] == cc[2] and cp[3] == cc[3]


def test_optimal_lambda_positive_and_feasible():
    ctx = _ctx(K_a=52, lower=50, upper=50)
    lam = optimal_lambda(ctx, 2, 1, 0.7, 0.6)
    assert lam > 0
    assert np.isfinite(lambda_objective(lam, 0.7, 0.6, 2, 1, ctx.Pprime, ctx.P2))


@pytest.mark.parametrize("t,tp,D", [(1, 1, 0), (3, 2, 0), (2, 5, 2), (10, 10, 0), (0, 4, 3), (5, 0, 1)])
def test_exponent_matches_fine_grid(t, tp, D):
    ctx = _ctx(K_a=50 + D, lower=50, upper=50)
    L1, L2 = ctx.ln_count1(tp), ctx.ln_count2(t)
    g = np.linspace(0, 1, 201)
    R, R1 = np.meshgrid(g, g, indexing="ij")
    v, _ = e0_batch(R, R1, t, tp, ctx.Pprime, ctx.P2)
    ref = float(np.max(v - R * R1 * L1 / ctx.n - R1 * L2 / ctx.n))
    got = exponent_E(ctx, t, tp)
    coarse = exponent_E(ctx, t, tp, refine=False)
    assert coarse <= got + 1e-15
    assert got == pytest.approx(max(ref, 0.0), abs=2e-6)


@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 4))
def test_exponent_nonnegative(t, tp, D):
    ctx = _ctx(K_a=50 + D, lower=50, upper=50)
    assert exponent_E(ctx, t, tp, refine=False) >= 0.0


def test_p_tt_examples():
    ctx = _ctx()
    assert p_tt(ctx, 0, 0) == 1.0
    assert p_tt(ctx, 1, 1) <= 1e-2
    # p_tt = exp(-n E) is nonincreasing in n
    assert p_tt(_ctx(n=30000), 1, 1) <= p_tt(ctx, 1, 1)
    # collapsed window: T-bar_t = {t}
    assert p_t(ctx, 2) == pytest.approx(p_tt(ctx, 2, 2), rel=1e-12)
    assert p_t(ctx, 0) == 1.0


def test_r1_stable_form():
    ctx = _ctx(K_a=53, lower=50, upper=50)
    for tp in (1, 2, 7):
        stable = (math.log(2.0**128 - 53)) / ctx.n - math.lgamma(tp + 1) / (ctx.n * tp)
        assert ctx.R1(tp) == pytest.approx(stable, rel=1e-13)


def test_ln_count_fa_small_codebook_exact():
    for used, tp in [(3, 2), (10, 5), (60, 4)]:
        assert ln_count_fa(6 * math.log(2), used, tp) == pytest.approx(math.log(math.comb(64 - used, tp)))
    assert ln_count_fa(LN_M, 50, 0) == 0.0
    assert ln_count_fa(LN_M, 50, 3) >= ln_binomial(2**60, 3).value


def test_batch_coarse_equals_single_calls():
    eb = ExponentBatch(PP4, 19200)
    ctx = _ctx(K_a=51, lower=50, upper=50)
    keys = [(1, 0), (1, 1), (2, 3), (4, 4)]
    t = [k[0] for k in keys]
    tp = [k[1] for k in keys]
    E, _, _ = eb.coarse(t, tp, [1] * 4, [ctx.ln_count1(b) for b in tp], [ctx.ln_count2(a) for a in t])
    for (a, b), e in zip(keys, E):
        assert e == pytest.approx(exponent_E(ctx, a, b, refine=False), rel=1e-14, abs=1e-300)
