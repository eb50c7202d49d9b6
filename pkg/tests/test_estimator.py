import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcubound.estimator import estimate_ka, metric, pairwise, xi, xi_table, zeta_energy, zeta_ml

mp.mp.dps = 50
N = 19200
PP = 0.0159  # P' near 4 dB for k = 128, n = 19200


def _boundary_energy(K, K_h, Pprime, n, estimator):
    """Energy at which m(y, K_a') = m(y, K), by root finding on the metrics."""
    sk, sh = 1 + K * mp.mpf(Pprime), 1 + K_h * mp.mpf(Pprime)
    if estimator == "ml":
        f = lambda e: (e / sh + n * mp.log(sh)) - (e / sk + n * mp.log(sk))
        guess = n * (sh + sk) / 2
    else:
        f = lambda e: abs(e - n * sh) - abs(e - n * sk)
        guess = n * (sh + sk) / 2
    return mp.findroot(f, guess)


@pytest.mark.parametrize("K,K_a,K_h", [(49, 50, 50), (51, 50, 50), (45, 48, 52), (60, 55, 58), (3, 2, 7)])
@pytest.mark.parametrize("estimator", ["ml", "energy"])
def test_zeta_matches_metric_boundary(K, K_a, K_h, estimator):
    e = _boundary_energy(K, K_h, PP, N, estimator)
    ref = float(e / (1 + K_a * mp.mpf(PP)))
    zf = zeta_ml if estimator == "ml" else zeta_energy
    assert zf(K, K_a, K_h, PP, N) == pytest.approx(ref, rel=1e-12)


def test_zeta_ml_swap_and_domain():
    a = zeta_ml(49, 50, 51, PP, N)
    b = zeta_ml(51, 50, 49, PP, N)
    # symmetric in (K, K_a') by construction of the boundary
    assert a == pytest.approx(b, rel=1e-12)
    with pytest.raises(ValueError):
        zeta_ml(50, 50, 50, PP, N)


def test_zeta_energy_examples():
    assert zeta_energy(50, 50, 50, 0.0, N) == N
    assert zeta_energy(49, 50, 51, 1e12, N, asymptotic=False) == pytest.approx(N * 100 / 100, rel=1e-9)
    assert zeta_energy(40, 50, 44, 0.0, N, asymptotic=True) == pytest.approx(N * 84 / 100)


@pytest.mark.parametrize("K,K_a,K_h", [(49, 50, 51), (30, 50, 40), (70, 50, 52)])
def test_zeta_asymptotic_limit(K, K_a, K_h):
    big = 1e10
    assert zeta_ml(K, K_a, K_h, big, N) == pytest.approx(zeta_ml(K, K_a, K_h, 0, N, asymptotic=True), rel=1e-6)
    assert zeta_energy(K, K_a, K_h, big, N) == pytest.approx(zeta_energy(K, K_a, K_h, 0, N, asymptotic=True),
                                                             rel=1e-6)
    ref = N * math.log(K / K_h) / K_a / (1 / K_h - 1 / K)
    assert zeta_ml(K, K_a, K_h, 0, N, asymptotic=True) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("K,K_a,K_h", [(49, 50, 50), (51, 50, 50), (47, 50, 48), (55, 50, 53)])
def test_pairwise_against_mpmath_gamma(K, K_a, K_h):
    z = _boundary_energy(K, K_h, PP, N, "ml") / (1 + K_a * mp.mpf(PP))
    if K < K_h:
        ref = mp.gammainc(N, z, mp.inf, regularized=True)
    else:
        ref = mp.gammainc(N, 0, z, regularized=True)
    assert pairwise(K, K_a, K_h, "ml", PP, N) == pytest.approx(float(ref), rel=1e-9)


def test_xi_examples():
    assert xi(50, 50, 50, 50, "ml", PP, N) == 1.0
    # the true count itself is rarely beaten by a neighbour: xi(50, 50) stays large
    assert xi(50, 50, 14, 99, "ml", PP, N) > 0.5
    assert xi(50, 56, 14, 99, "ml", PP, N) < 1e-10
    assert xi(50, 44, 14, 99, "energy", PP, N) < 1e-10
    assert xi(3, 3, 0, 9, "oracle") == 1.0
    assert xi(3, 4, 0, 9, "oracle") == 0.0
    with pytest.raises(ValueError):
        xi(50, 200, 14, 99, "ml", PP, N)


@pytest.mark.parametrize("estimator", ["ml", "energy"])
@pytest.mark.parametrize("candidates", ["all", "true_ka"])
@pytest.mark.parametrize("asymptotic", [False, True])
def test_xi_table_matches_scalar(estimator, candidates, asymptotic):
    K_l, K_u = 0, 12
    tab = xi_table(K_l, K_u, estimator, 0.3, 200, candidates, asymptotic)
    for K_a in range(K_l, K_u + 1):
        for K_h in range(K_l, K_u + 1):
            ref = xi(K_a, K_h, K_l, K_u, estimator, 0.3, 200, candidates, asymptotic)
            assert tab(K_a, K_h) == pytest.approx(ref, rel=1e-12, abs=1e-300)


@given(st.integers(0, 20), st.integers(0, 20), st.floats(1e-3, 10), st.sampled_from(["ml", "energy"]),
       st.sampled_from(["all", "true_ka"]))
def test_xi_is_probability_and_all_is_tighter(K_a, K_h, Pprime, estimator, candidates):
    v = xi(K_a, K_h, 0, 20, estimator, Pprime, 64, candidates)
    assert 0.0 <= v <= 1.0
    if candidates == "true_ka":
        assert xi(K_a, K_h, 0, 20, estimator, Pprime, 64, "all") <= v + 1e-15


def test_estimate_ka_picks_metric_minimiser_and_breaks_ties_low():
    n, Pp = 100, 0.5
    for energy in (50.0, 120.0, 260.0, 900.0):
        k = estimate_ka(energy, 0, 10, "ml", Pp, n)
        vals = [metric(energy, K, "ml", Pp, n) for K in range(0, 11)]
        assert k == int(np.argmin(vals))
    # energy metric: y exactly between n(1 + 2P') and n(1 + 3P') ties; smaller K wins
    tie = n * (1 + 2.5 * Pp)
    assert estimate_ka(tie, 0, 10, "energy", Pp, n) == 2
