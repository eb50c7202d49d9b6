"""Dependence-testing terms q_t and q_{t,t'} from Monte-Carlo samples of I_t.

With u = c(W01) + z ~ CN(0, (1 + D1 P') I_n), candidates c_1..c_m (m =
min{K_a, upper}) and f = c(W01') ~ CN(0, D2 P' I_n),

    I_t = n ln(1 + (t + D1) P') + min_{|S| = t} ||u + sum_S c_i||^2 / (1 + (t + D1) P')
          - ||u - f||^2.

Only norms and inner products enter, so the samplers draw the Gram matrix of
(u, f, c_1, ..., c_m) directly instead of n-dimensional vectors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import set_Tbar_t
from .numerics import SeededStream, logsumexp

DEFAULT_SAMPLES = 20000
DEFAULT_ENUM_CAP = 10_000


class QUnavailable(Exception):
    """Subset enumeration for I_t would exceed the cap."""


def info_density(n, t, d1, Pprime, y, c_w0, c_rest) -> float:
    """i_t(c(W0); y | c(W \\ W0)) for explicit complex vectors."""
    s = 1.0 + (t + d1) * Pprime
    r = y - c_rest
    return float(n * math.log(s) + np.vdot(r, r).real / s - np.vdot(r - c_w0, r - c_w0).real)


@dataclass(frozen=True)
class EcdfTable:
    values: np.ndarray  # sorted ascending
    stream: SeededStream | None = None

    @property
    def N(self) -> int:
        return int(self.values.size)

    def cdf(self, gamma: float) -> float:
        return float(np.searchsorted(self.values, gamma, side="right")) / self.N

    def ci_halfwidth(self, gamma: float, z: float = 1.96) -> float:
        p = self.cdf(gamma)
        return z * math.sqrt(max(p * (1 - p), 1.0 / self.N) / self.N)


def q_from_ecdf(values: np.ndarray, log_count: float) -> float:
    """inf_gamma ( F_N(gamma) + exp(log_count - gamma) ), clamped to 1.

    Between consecutive order statistics the empirical CDF is flat and the
    exponential term decreases, so the infimum over each flat piece is its
    left limit at the next sample.  The sample points themselves and the
    balance point gamma* = log_count + ln N are evaluated too.
    """
    s = values
    N = s.size
    j = np.arange(N)
    with np.errstate(over="ignore"):
        left = j / N + np.exp(np.minimum(log_count - s, 700.0))
        at = (j + 1) / N + np.exp(np.minimum(log_count - s, 700.0))
    g = log_count + math.log(N)
    star = np.searchsorted(s, g, side="right") / N + 1.0 / N
    return float(min(1.0, left.min(), at.min(), star))


# ---------------------------------------------------------------------------
# samplers


def _norm_shift(base, scale, re, im, h):
    """||base e + sqrt(scale) (alpha e + w)||^2 with alpha = re + i im, ||w||^2 = h."""
    rs = math.sqrt(scale)
    return (base + rs * re) ** 2 + scale * im * im + scale * h


class SingleMissSampler:
    """Exact reduced sampler of I_1 with common random numbers.

    Standardised draws are generated once per stream and reused for every
    (P', D1, D2, m), which keeps q-terms smooth in P' and cheap to
    re-evaluate.
    """

    def __init__(self, n: int, N: int, m_max: int, stream: SeededStream):
        self.n, self.N, self.m_max = int(n), int(N), int(m_max)
        self.stream = stream
        rng = stream.generator()
        self.g_u = rng.standard_gamma(self.n, self.N)
        self.re = rng.standard_normal((self.N, self.m_max)) * math.sqrt(0.5)
        self.im = rng.standard_normal((self.N, self.m_max)) * math.sqrt(0.5)
        self.h = rng.standard_gamma(self.n - 1, (self.N, self.m_max)) if self.n > 1 else np.zeros((self.N, self.m_max))
        self.re_f = rng.standard_normal(self.N) * math.sqrt(0.5)
        self.im_f = rng.standard_normal(self.N) * math.sqrt(0.5)
        self.h_f = rng.standard_gamma(self.n - 1, self.N) if self.n > 1 else np.zeros(self.N)
        self._cache: dict = {}

    def _running_min(self, Pprime, d1):
        key = (Pprime, d1)
        if key not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            norm_u = np.sqrt((1.0 + d1 * Pprime) * self.g_u)
            A = _norm_shift(norm_u[:, None], Pprime, self.re, self.im, self.h)
            self._cache[key] = (norm_u, np.minimum.accumulate(A, axis=1))
        return self._cache[key]

    def sample(self, Pprime: float, d1: int, d2: int, m: int) -> np.ndarray:
        """Sorted samples of I_1."""
        if not (1 <= m <= self.m_max):
            raise ValueError("candidate count outside sampler range")
        norm_u, amin = self._running_min(Pprime, d1)
        s = 1.0 + (1 + d1) * Pprime
        bkey = ("B", Pprime, d1, d2)
        B = self._cache.get(bkey)
        if B is None:
            B = self._cache[bkey] = _norm_shift(norm_u, d2 * Pprime, -self.re_f, self.im_f, self.h_f)
        vals = self.n * math.log(s) + amin[:, m - 1] / s - B
        vals.sort()
        return vals


def sample_gram_It(n, t, d1, d2, m, Pprime, N, rng, enum_cap=DEFAULT_ENUM_CAP) -> np.ndarray:
    """Samples of I_t for general t from a complex Bartlett factor.

    Columns are (u, f, c_1..c_m) scaled to unit variance; R is the upper
    triangular factor of the Gram matrix with |R_jj|^2 ~ Gamma(n - j) and
    CN(0, 1) entries above the diagonal.
    """
    if t < 1 or t > m:
        raise ValueError("need 1 <= t <= m")
    n_sub = math.comb(m, t)
    if n_sub > enum_cap:
        raise QUnavailable(f"C({m},{t}) = {n_sub} subsets exceeds cap {enum_cap}")
    cols = m + 2
    if cols > n:
        raise ValueError("Bartlett sampler needs n >= m + 2")
    R = np.zeros((N, cols, cols), dtype=complex)
    for j in range(cols):
        R[:, j, j] = np.sqrt(rng.standard_gamma(n - j, N))
        if j:
            R[:, :j, j] = (rng.standard_normal((N, j)) + 1j * rng.standard_normal((N, j))) * math.sqrt(0.5)
    su = math.sqrt(1.0 + d1 * Pprime)
    sf = math.sqrt(d2 * Pprime)
    sc = math.sqrt(Pprime)
    u = su * R[:, :, 0]
    B = np.sum(np.abs(u - sf * R[:, :, 1]) ** 2, axis=1)
    C = sc * R[:, :, 2:]
    best = np.full(N, np.inf)
    for S in itertools.combinations(range(m), t):
        v = u + C[:, :, list(S)].sum(axis=2)
        best = np.minimum(best, np.sum(np.abs(v) ** 2, axis=1))
    s = 1.0 + (t + d1) * Pprime
    return np.sort(n * math.log(s) + best / s - B)


def sample_It(ctx, t: int, stream: SeededStream, N: int = DEFAULT_SAMPLES,
              enum_cap: int = DEFAULT_ENUM_CAP) -> EcdfTable:
    """ECDF of I_t for the context (K_a, window, P', n)."""
    d1, d2 = ctx.offsets
    m = min(ctx.K_a, ctx.window.upper)
    if t < 1 or t > m:
        raise ValueError("t must lie in [1, min{K_a, upper}]")
    if math.comb(m, t) > enum_cap:
        raise QUnavailable(f"C({m},{t}) exceeds cap {enum_cap}")
    if t == 1:
        sampler = SingleMissSampler(ctx.n, N, m, stream)
        vals = sampler.sample(ctx.Pprime, d1, d2, m)
    else:
        vals = sample_gram_It(ctx.n, t, d1, d2, m, ctx.Pprime, N, stream.generator(), enum_cap)
    return EcdfTable(vals, stream)


def q_tt(ctx, t: int, tp: int, ecdf: EcdfTable) -> float:
    return q_from_ecdf(ecdf.values, ctx.ln_count1(tp) + ctx.ln_count2(t))


def q_t(ctx, t: int, ecdf: EcdfTable) -> float:
    tps = set_Tbar_t(ctx.K_a, ctx.window, t, ctx.ln_m)
    if len(tps) == 0:
        return 0.0
    lc = logsumexp([ctx.ln_count1(tp) for tp in tps]) + ctx.ln_count2(t)
    return q_from_ecdf(ecdf.values, lc)
