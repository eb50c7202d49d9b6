import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcubound.bounds import (EvalOptions, QPolicy, assemble_bound, compute_p0, optimize_pprime)
from rcubound.dtbound import SingleMissSampler, q_from_ecdf
from rcubound.exponents import ExponentContext, exponent_E
from rcubound.model import (ActivityKind, ActivityModel, DecoderPolicy, ListWindow, SystemConfig,
                            truncate_activity)
from rcubound.numerics import SeededStream, reg_gamma_upper

SMALL_Q = QPolicy(samples=2000)


def _small(ebn0=6.0, n=200, k=8, ratio=0.9):
    return SystemConfig.from_ebn0(ebn0, n, k, ratio)


def test_p0_fixed_single_user_has_no_collision():
    _, parts = compute_p0(_small(), truncate_activity(ActivityKind.fixed(1)))
    assert parts["collision"] == 0.0
    assert parts["truncation"] == 0.0


def test_p0_collision_negligible_for_huge_codebook():
    act = truncate_activity(ActivityKind.poisson(300), 1e-9)
    _, parts = compute_p0(SystemConfig.from_ebn0(2.0, 30000, 128), act)
    assert parts["collision"] < 1e-30
    _, parts_b = compute_p0(SystemConfig.from_ebn0(2.0, 30000, 128), act, collision_bound=True)
    assert parts["collision"] <= parts_b["collision"] < 1e-30


def test_p0_power_term_near_half_mean():
    act = truncate_activity(ActivityKind.fixed(3))
    n = 5000
    cfg = SystemConfig(n, 8, 1.0, 1.0 - 1e-12)
    _, parts = compute_p0(cfg, act)
    assert parts["power"] == pytest.approx(3 * reg_gamma_upper(n, n), rel=1e-6)
    assert parts["power"] == pytest.approx(1.5, rel=0.01)


def test_p0_collision_matches_birthday_formula():
    act = truncate_activity(ActivityKind.fixed(5))
    _, parts = compute_p0(_small(k=6), act)
    exact = 1 - math.prod((64 - i) / 64 for i in range(5))
    assert parts["collision"] == pytest.approx(exact, rel=1e-12)


def test_oracle_fixed_reduces_to_known_ka_formula():
    K_a, n, k = 4, 200, 8
    cfg = _small(8.0, n, k, 0.9)
    act = truncate_activity(ActivityKind.fixed(K_a))
    res = assemble_bound(cfg, act, DecoderPolicy("oracle", 0), SMALL_Q, EvalOptions(refine_rel=0.0, prune_tol=0.0))
    ctx = ExponentContext(K_a, ListWindow(K_a, K_a), cfg.Pprime, cfg.ln_m, n)
    samples = SingleMissSampler(n, SMALL_Q.samples, K_a, SeededStream(SMALL_Q.seed, 1)).sample(cfg.Pprime, 0, 0, K_a)
    ref = 0.0
    for t in range(1, K_a + 1):
        p = math.exp(-n * exponent_E(ctx, t, t))
        if t == 1:
            p = min(p, q_from_ecdf(samples, ctx.ln_count1(1) + ctx.ln_count2(1)))
        ref += t / K_a * min(p, 1.0)
    assert res.eps_md - res.p0 == pytest.approx(ref, rel=1e-9)
    # identical min-factors and weights t/K_a on both sides
    assert res.eps_md == res.eps_fa


def test_reference_tradeoff_point_4db(poisson50_wide):
    cfg = SystemConfig.from_ebn0(4.0, 19200, 128, 0.9)
    res, ratio, _ = optimize_pprime(cfg, poisson50_wide, DecoderPolicy("ml", 0, "true_ka"))
    assert res.eps_md == pytest.approx(1.204e-2, rel=0.10)
    assert res.eps_fa == pytest.approx(1.209e-2, rel=0.10)
    assert 0.7 <= ratio < 1.0


@pytest.mark.slow
def test_reference_radius_one_md_point(poisson50_wide):
    # plotted r = 1 MD curve at 3.5 dB
    cfg = SystemConfig.from_ebn0(3.5, 19200, 128, 0.9)
    res, _, _ = optimize_pprime(cfg, poisson50_wide, DecoderPolicy("ml", 1, "true_ka"), target="md")
    assert res.eps_md == pytest.approx(4.781e-3, rel=0.10)


def _poisson_small(mu=1.5, thr=1e-3):
    return truncate_activity(ActivityKind.poisson(mu), thr)


@pytest.mark.parametrize("estimator,radius", [("ml", 0), ("ml", 1), ("energy", 1), ("oracle", 0)])
def test_terms_consistent_with_totals(estimator, radius):
    cfg = _small(6.0, 120, 6)
    act = _poisson_small()
    res = assemble_bound(cfg, act, DecoderPolicy(estimator, radius, "true_ka"), SMALL_Q,
                         EvalOptions(keep_terms=True))
    T = res.terms
    pk = dict(zip(act.ks.tolist(), act.pmf.tolist()))
    md = sum(pk[key[0]] * w * min(T.p_t[key], T.q_t.get(key, math.inf), T.xi[key[:2]])
             for key, w in T.w_md.items())
    fa = sum(pk[key[0]] * w * min(T.p_tt[key], T.q_tt.get(key, math.inf), T.xi[key[:2]])
             for key, w in T.w_fa.items())
    assert res.eps_md == pytest.approx(min(md + res.p0, 1.0), rel=1e-10, abs=1e-15)
    assert res.eps_fa == pytest.approx(min(fa + res.p0, 1.0), rel=1e-10, abs=1e-15)
    for w in list(T.w_md.values()) + list(T.w_fa.values()):
        assert 0.0 <= w <= 1.0
    for v in list(T.xi.values()) + list(T.q_t.values()) + list(T.q_tt.values()) + list(T.p_tt.values()):
        assert 0.0 <= v <= 1.0
    assert 0.0 <= res.eps_md <= 1.0 and 0.0 <= res.eps_fa <= 1.0


def test_pruning_only_loosens_by_reported_mass(poisson50_wide):
    cfg = SystemConfig.from_ebn0(4.0, 19200, 128, 0.96)
    q = QPolicy(samples=5000)
    full = assemble_bound(cfg, poisson50_wide, DecoderPolicy("ml", 0, "true_ka"), q, EvalOptions(prune_tol=0.0))
    pruned = assemble_bound(cfg, poisson50_wide, DecoderPolicy("ml", 0, "true_ka"), q, EvalOptions(prune_tol=1e-10))
    d = pruned.diagnostics
    assert d["cells_pruned"] > 0
    assert pruned.eps_md >= full.eps_md - 1e-15
    assert pruned.eps_md - full.eps_md <= d["pruned_mass_md"] + 1e-15
    assert pruned.eps_fa - full.eps_fa <= d["pruned_mass_fa"] + 1e-15


@settings(max_examples=10)
@given(st.floats(0.0, 6.0), st.floats(0.5, 3.0))
def test_more_power_at_fixed_pprime_never_hurts(db, extra_db):
    act = _poisson_small(1.0, 1e-2)
    lo = SystemConfig.from_ebn0(db, 100, 6, 0.9)
    hi = SystemConfig(100, 6, lo.P * 10 ** (extra_db / 10), lo.Pprime)
    pol = DecoderPolicy("ml", 0)
    a = assemble_bound(lo, act, pol, SMALL_Q)
    b = assemble_bound(hi, act, pol, SMALL_Q)
    assert b.eps_md <= a.eps_md + 1e-15
    assert b.eps_fa <= a.eps_fa + 1e-15


def test_clamp_flag_and_determinism():
    cfg = SystemConfig.from_ebn0(-5.0, 60, 6, 0.9)
    act = _poisson_small(2.0, 1e-2)
    a = assemble_bound(cfg, act, DecoderPolicy("ml", 1), SMALL_Q)
    b = assemble_bound(cfg, act, DecoderPolicy("ml", 1), SMALL_Q)
    assert a.eps_md == b.eps_md and a.eps_fa == b.eps_fa
    assert a.eps_md <= 1.0
    assert a.diagnostics["clamped_md"] and a.eps_md == 1.0


def test_optimize_pprime_picks_best_of_trace():
    cfg = _small(4.0, 150, 6)
    res, ratio, trace = optimize_pprime(cfg, _poisson_small(), DecoderPolicy("ml", 0), SMALL_Q)
    score = max(res.eps_md, res.eps_fa)
    assert score == pytest.approx(min(s for _, s in trace))
    assert any(r == ratio for r, _ in trace)
    # stop_below returns the first ratio that certifies the target
    _, _, short = optimize_pprime(cfg, _poisson_small(), DecoderPolicy("ml", 0), SMALL_Q, stop_below=1.0)
    assert len(short) == 1


def test_explicit_activity_window():
    act = ActivityModel(ActivityKind.explicit({1: 0.3, 2: 0.4, 3: 0.3}), 1, 3, 0.0)
    res = assemble_bound(_small(10.0, 100, 6), act, DecoderPolicy("ml", 0), SMALL_Q)
    assert res.p0_parts["truncation"] == pytest.approx(0.0, abs=1e-15)
    assert res.eps_md < 1.0
