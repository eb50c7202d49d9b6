"""Penalty xi(K_a, K_a') for estimating the number of active users.

Under the auxiliary measure y0 ~ CN(0, (1 + K_a P') I_n), so ||y0||^2 is
Gamma(n, 1 + K_a P').  Both estimators reduce the event
m(y0, K_a') < m(y0, K) to a threshold on ||y0||^2 / (1 + K_a P') at zeta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .numerics import reg_gamma_lower, reg_gamma_upper


def zeta_ml(K, K_a, K_a_hat, Pprime, n, asymptotic=False):
    if K == K_a_hat:
        raise ValueError("zeta undefined for K == K_a'")
    if asymptotic:
        if K <= 0 or K_a_hat <= 0 or K_a <= 0:
            raise ValueError("asymptotic zeta needs positive counts")
        return n * math.log(K / K_a_hat) / K_a / (1.0 / K_a_hat - 1.0 / K)
    sk = 1.0 + K * Pprime
    sh = 1.0 + K_a_hat * Pprime
    # log1p form of ln(sk / sh) and of the variance difference
    num = math.log1p((K - K_a_hat) * Pprime / sh)
    den = (K - K_a_hat) * Pprime / (sh * sk)
    return n * num / (1.0 + K_a * Pprime) / den


def zeta_energy(K, K_a, K_a_hat, Pprime, n, asymptotic=False):
    if asymptotic:
        if K_a <= 0:
            raise ValueError("asymptotic zeta needs K_a > 0")
        return n * (K + K_a_hat) / (2.0 * K_a)
    return n / (1.0 + K_a * Pprime) * (1.0 + 0.5 * (K + K_a_hat) * Pprime)


def pairwise(K, K_a, K_a_hat, estimator, Pprime, n, asymptotic=False) -> float:
    """P[m(y0, K_a') < m(y0, K)] for one competitor K."""
    zf = zeta_ml if estimator == "ml" else zeta_energy
    z = zf(K, K_a, K_a_hat, Pprime, n, asymptotic)
    if z <= 0:
        # ML with K_a = 0 limit never reached here; guard anyway
        return 1.0 if K < K_a_hat else 0.0
    if K < K_a_hat:
        return reg_gamma_upper(n, z)
    return reg_gamma_lower(n, z)


def xi(K_a, K_a_hat, K_l, K_u, estimator="ml", Pprime=1.0, n=1, candidates="all",
       asymptotic=False) -> float:
    """Upper bound on P[estimator outputs K_a' | K_a users]."""
    if estimator == "oracle":
        return 1.0 if K_a == K_a_hat else 0.0
    if not (K_l <= K_a_hat <= K_u):
        raise ValueError("K_a' outside [K_l, K_u]")
    if K_l == K_u:
        return 1.0
    if candidates == "true_ka" and K_a != K_a_hat and K_l <= K_a <= K_u:
        ks = [K_a]
    else:
        ks = [k for k in range(K_l, K_u + 1) if k != K_a_hat]
    if asymptotic:
        # the limiting zeta needs positive counts; K = 0 or K_a' = 0 cannot
        # be confused with a positive count as P' grows
        if K_a_hat == 0:
            return 0.0 if K_a > 0 else 1.0
        ks = [k for k in ks if k > 0]
        if K_a == 0:
            return 0.0
        if not ks:
            return 1.0
    best = 1.0
    for k in ks:
        best = min(best, pairwise(k, K_a, K_a_hat, estimator, Pprime, n, asymptotic))
    return best


@dataclass
class XiTable:
    K_l: int
    K_u: int
    values: np.ndarray  # values[K_a - K_l, K_a' - K_l]

    def __call__(self, K_a, K_a_hat):
        return float(self.values[K_a - self.K_l, K_a_hat - self.K_l])


def _pairwise_matrix(K_a, K_l, K_u, estimator, Pprime, n, asymptotic):
    """P[m(y0, K_a') < m(y0, K)] for all (K, K_a') in the window; NaN on the diagonal."""
    ks = np.arange(K_l, K_u + 1, dtype=float)
    K = ks[:, None]
    H = ks[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        if estimator == "ml":
            if asymptotic:
                z = n * np.log(K / H) / K_a / (1.0 / H - 1.0 / K)
            else:
                sh = 1.0 + H * Pprime
                sk = 1.0 + K * Pprime
                z = n * np.log1p((K - H) * Pprime / sh) / (1.0 + K_a * Pprime) / ((K - H) * Pprime / (sh * sk))
        else:
            if asymptotic:
                z = n * (K + H) / (2.0 * K_a) + 0.0 * K
            else:
                z = n / (1.0 + K_a * Pprime) * (1.0 + 0.5 * (K + H) * Pprime)
    z = np.where(np.isfinite(z) & (z > 0), z, 0.0)
    out = np.where(K < H, special.gammaincc(n, z), special.gammainc(n, z))
    out[K == H] = np.nan
    return out


def xi_table(K_l, K_u, estimator, Pprime, n, candidates="all", asymptotic=False) -> XiTable:
    """xi for every (K_a, K_a') in the window; rows follow K_a."""
    size = K_u - K_l + 1
    if estimator == "oracle":
        return XiTable(K_l, K_u, np.eye(size))
    if size == 1:
        return XiTable(K_l, K_u, np.ones((1, 1)))
    vals = np.empty((size, size))
    ks = np.arange(K_l, K_u + 1)
    for i, ka in enumerate(ks):
        if asymptotic and (ka == 0 or K_l == 0):
            # fall back to the scalar routine for the zero-count edge cases
            vals[i] = [xi(int(ka), int(kh), K_l, K_u, estimator, Pprime, n, candidates, asymptotic) for kh in ks]
            continue
        pw = _pairwise_matrix(int(ka), K_l, K_u, estimator, Pprime, n, asymptotic)
        row = np.nanmin(pw, axis=0)
        if candidates == "true_ka":
            own = pw[i, :].copy()
            own[i] = row[i]
            row = own
        vals[i] = np.minimum(row, 1.0)
    return XiTable(K_l, K_u, vals)


def metric(y_energy, K, estimator, Pprime, n):
    """m(y, K) as a function of ||y||^2 (both estimators only see the energy)."""
    s = 1.0 + K * Pprime
    if estimator == "ml":
        return y_energy / s + n * math.log(s)
    return abs(y_energy - n * s)


def estimate_ka(y_energy, K_l, K_u, estimator, Pprime, n) -> int:
    """argmin_K m(y, K); ties go to the smaller K."""
    best_k, best_m = K_l, math.inf
    for k in range(K_l, K_u + 1):
        m = metric(y_energy, k, estimator, Pprime, n)
        if m < best_m:
            best_k, best_m = k, m
    return best_k
