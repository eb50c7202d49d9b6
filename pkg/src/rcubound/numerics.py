"""Special functions, log-domain combinatorics, cubic roots and seeded streams.

Everything that depends on the codebook size ``M`` goes through ``ln M``; for
``k = 128`` bits ``M = 2**128`` does not fit any machine integer type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

# Above this many items ln C(n, k) is evaluated through the stable upper bound.
EXACT_COUNT_LIMIT = 2**53


class LogWeight(NamedTuple):
    """Natural-log weight; ``-inf`` encodes probability zero."""

    value: float
    upper_bound: bool = False

    def __float__(self) -> float:
        return float(self.value)


def _check_gamma_args(shape, x):
    shape = np.asarray(shape, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(shape <= 0) or np.any(np.isnan(shape)):
        raise ValueError("reg_gamma: shape must be positive")
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("reg_gamma: x must be nonnegative")
    return shape, x


def _scalar_or_array(out):
    return float(out) if np.ndim(out) == 0 else out


def reg_gamma_upper(shape, x):
    """Q(shape, x) = Gamma(shape, x) / Gamma(shape)."""
    shape, x = _check_gamma_args(shape, x)
    return _scalar_or_array(special.gammaincc(shape, x))


def reg_gamma_lower(shape, x):
    """P(shape, x) = gamma(shape, x) / Gamma(shape)."""
    shape, x = _check_gamma_args(shape, x)
    return _scalar_or_array(special.gammainc(shape, x))


def ln_comb(n, k):
    """Vectorised ln C(n, k) for real n >= k >= 0 (``-inf`` when k > n)."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    with np.errstate(invalid="ignore"):
        out = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
    out = np.where((k < 0) | (k > n), -np.inf, out)
    out = np.where(k == 0, 0.0, out)
    return _scalar_or_array(out)


def ln_binomial(n_items: int | None, k_items: int, *, ln_n: float | None = None) -> LogWeight:
    """ln C(n, k).

    Pass ``n_items`` as an integer for an exact value, or ``ln_n`` alone when
    the count is astronomically large.  In the latter case the result is
    ``k ln n - ln k!``, which upper-bounds the true value, and the returned
    weight is flagged accordingly.
    """
    if k_items < 0:
        raise ValueError("k_items must be nonnegative")
    if k_items == 0:
        return LogWeight(0.0)
    if n_items is None:
        if ln_n is None:
            raise ValueError("give n_items or ln_n")
        return LogWeight(k_items * ln_n - math.lgamma(k_items + 1), True)
    if k_items > n_items:
        return LogWeight(-math.inf)
    if n_items <= 4096:
        return LogWeight(math.log(math.comb(n_items, k_items)))
    if n_items > EXACT_COUNT_LIMIT:
        return LogWeight(k_items * math.log(n_items) - math.lgamma(k_items + 1), True)
    # falling-factorial sum keeps full precision when k << n
    if k_items <= 64:
        s = math.fsum(math.log(n_items - i) for i in range(k_items))
        return LogWeight(s - math.lgamma(k_items + 1))
    return LogWeight(float(ln_comb(n_items, k_items)))


def ln_falling_over_power(ln_m: float, count: int, m_int: int | None = None) -> float:
    """ln( M! / (M^K (M-K)!) ) = sum_{i<K} ln(1 - i/M)."""
    if count <= 1:
        return 0.0
    if m_int is not None and count > m_int:
        return -math.inf
    inv_m = math.exp(-ln_m)
    i = np.arange(1, count, dtype=float)
    return float(np.sum(np.log1p(-i * inv_m)))


def ln_poisson_pmf(mean: float, k: int) -> float:
    if mean <= 0:
        raise ValueError("Poisson mean must be positive")
    if k < 0:
        return -math.inf
    return k * math.log(mean) - mean - math.lgamma(k + 1)


def logsumexp(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return -math.inf
    return float(special.logsumexp(values))


# ---------------------------------------------------------------------------
# cubic roots


@dataclass(frozen=True)
class Cubic:
    """c1 x^3 + c2 x^2 + c3 x + c4."""

    c1: float
    c2: float
    c3: float
    c4: float

    def __call__(self, x):
        return ((self.c1 * x + self.c2) * x + self.c3) * x + self.c4


def cubic_real_roots(c1, c2, c3, c4, polish: int = 2) -> np.ndarray:
    """Real roots of many cubics at once.

    Returns an array of shape ``(N, 3)``; non-real or absent roots are NaN.
    Leading coefficients that vanish relative to the others drop the degree
    to a quadratic or linear solve.  Cardano/trigonometric closed form, then
    ``polish`` Newton steps on the original polynomial.
    """
    c = np.stack(np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (c1, c2, c3, c4))), axis=-1)
    c = c.reshape(-1, 4)
    scale = np.max(np.abs(c), axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    a3, a2, a1, a0 = (c / scale[:, None]).T
    roots = np.full((c.shape[0], 3), np.nan)

    eps = 1e-13
    cub = np.abs(a3) > eps
    quad = ~cub & (np.abs(a2) > eps)
    lin = ~cub & ~quad & (np.abs(a1) > eps)

    if np.any(cub):
        A = a2[cub] / a3[cub]
        B = a1[cub] / a3[cub]
        C = a0[cub] / a3[cub]
        # depressed cubic y^3 + p y + q, x = y - A/3
        p = B - A * A / 3.0
        q = 2.0 * A**3 / 27.0 - A * B / 3.0 + C
        disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
        r = np.full((A.size, 3), np.nan)
        one = disc > 0
        if np.any(one):
            sq = np.sqrt(disc[one])
            u = np.cbrt(-q[one] / 2.0 + sq)
            v = np.cbrt(-q[one] / 2.0 - sq)
            r[one, 0] = u + v
        three = ~one
        if np.any(three):
            pp = np.minimum(p[three], 0.0)
            m = 2.0 * np.sqrt(-pp / 3.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                arg = np.where(m > 0, 3.0 * q[three] / (pp * m), 0.0)
            theta = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
            for j in range(3):
                r[three, j] = m * np.cos(theta - 2.0 * np.pi * j / 3.0)
        roots[cub] = r - (A / 3.0)[:, None]

    if np.any(quad):
        qa, qb, qc = a2[quad], a1[quad], a0[quad]
        d = qb * qb - 4 * qa * qc
        r = np.full((qa.size, 3), np.nan)
        ok = d >= 0
        sq = np.sqrt(np.where(ok, d, 0.0))
        # numerically stable pair
        qq = -0.5 * (qb + np.copysign(sq, qb))
        with np.errstate(divide="ignore", invalid="ignore"):
            r0 = np.where(qq != 0, qq / qa, 0.0)
            r1 = np.where(qq != 0, qc / qq, 0.0)
        r[ok, 0] = r0[ok]
        r[ok, 1] = r1[ok]
        roots[quad] = r

    if np.any(lin):
        roots[lin, 0] = -a0[lin] / a1[lin]

    def value(x):
        return ((a3[:, None] * x + a2[:, None]) * x + a1[:, None]) * x + a0[:, None]

    for _ in range(polish):
        f = value(roots)
        df = (3 * a3[:, None] * roots + 2 * a2[:, None]) * roots + a1[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            step = np.where(np.abs(df) > 0, f / df, 0.0)
        trial = roots - np.where(np.isfinite(step), step, 0.0)
        # near a double root f' ~ 0 and the step is noise: keep only improving steps
        with np.errstate(invalid="ignore"):
            better = np.abs(value(trial)) < np.abs(f)
        roots = np.where(better, trial, roots)
    return roots


def largest_real_root(c: Cubic) -> float:
    if c.c1 == 0 and c.c2 == 0 and c.c3 == 0:
        raise ValueError("degenerate polynomial")
    roots = cubic_real_roots(c.c1, c.c2, c.c3, c.c4)[0]
    roots = roots[np.isfinite(roots)]
    if roots.size == 0:
        raise ValueError("no real root")
    return float(np.max(roots))


# ---------------------------------------------------------------------------
# reproducible random streams


@dataclass(frozen=True)
class SeededStream:
    """Identity of an independent random stream.

    The generator depends only on ``(seed, stream_id)``, so results do not
    change with the number of worker threads.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF])
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "SeededStream":
        h = self.stream_id
        for key in keys:
            h = (h * 1_000_003 + int(key) + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        return SeededStream(self.seed, h)
