"""Configuration types and the index-set algebra shared by all bound terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import stats

from .numerics import ln_falling_over_power

LN2 = math.log(2.0)


class ConfigError(ValueError):
    """Invalid user configuration (CLI exit code 2)."""


def codebook_cap(ln_m: float) -> float:
    """M as an exact int when it is machine sized, else ``inf``."""
    if ln_m > 60 * LN2:
        return math.inf
    return int(round(math.exp(ln_m)))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemConfig:
    n: int
    k: float
    P: float
    Pprime: float

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.k <= 0:
            raise ConfigError("k must be positive")
        if not (0 < self.Pprime < self.P):
            raise ConfigError("need 0 < Pprime < P")

    @property
    def ln_m(self) -> float:
        return self.k * LN2

    @property
    def m_cap(self):
        return codebook_cap(self.ln_m) if float(self.k).is_integer() and self.k <= 60 else math.inf

    @property
    def ebn0_db(self) -> float:
        return 10 * math.log10(self.n * self.P / self.k)

    @staticmethod
    def power_from_ebn0(ebn0_db: float, n: int, k: float) -> float:
        return k * 10 ** (ebn0_db / 10) / n

    @classmethod
    def from_ebn0(cls, ebn0_db: float, n: int, k: float, ratio: float = 0.95) -> "SystemConfig":
        P = cls.power_from_ebn0(ebn0_db, n, k)
        return cls(n=n, k=k, P=P, Pprime=ratio * P)

    def with_ratio(self, ratio: float) -> "SystemConfig":
        return replace(self, Pprime=ratio * self.P)


# ---------------------------------------------------------------------------
# activity models


@dataclass(frozen=True)
class ActivityKind:
    """Untruncated law of K_a: ``poisson`` (mean), ``fixed`` (value) or ``explicit`` (table)."""

    name: str
    mean: float = 0.0
    value: int = 0
    table: tuple = ()

    @staticmethod
    def poisson(mean: float) -> "ActivityKind":
        if mean <= 0:
            raise ConfigError("Poisson mean must be positive")
        return ActivityKind("poisson", mean=float(mean))

    @staticmethod
    def fixed(value: int) -> "ActivityKind":
        if value < 0:
            raise ConfigError("fixed K_a must be >= 0")
        return ActivityKind("fixed", value=int(value))

    @staticmethod
    def explicit(weights: Mapping[int, float]) -> "ActivityKind":
        items = sorted((int(k), float(w)) for k, w in weights.items())
        if not items:
            raise ConfigError("empty pmf table")
        if any(k < 0 or w < 0 for k, w in items):
            raise ConfigError("pmf table needs nonnegative keys and weights")
        total = sum(w for _, w in items)
        if total <= 0:
            raise ConfigError("pmf table has zero mass")
        if total > 1.0 + 1e-12:
            items = [(k, w / total) for k, w in items]
        return ActivityKind("explicit", table=tuple(items))

    def support_max(self) -> int:
        if self.name == "fixed":
            return self.value
        if self.name == "explicit":
            return self.table[-1][0]
        mu = self.mean
        return int(mu + 40 * math.sqrt(mu) + 60)

    def pmf(self, ks) -> np.ndarray:
        ks = np.asarray(ks)
        if self.name == "poisson":
            return stats.poisson.pmf(ks, self.mean)
        if self.name == "fixed":
            return (ks == self.value).astype(float)
        lookup = dict(self.table)
        return np.array([lookup.get(int(k), 0.0) for k in ks.ravel()]).reshape(ks.shape)

    def cdf_below(self, k: int) -> float:
        """P[K_a < k]."""
        if k <= 0:
            return 0.0
        if self.name == "poisson":
            return float(stats.poisson.cdf(k - 1, self.mean))
        return float(np.sum(self.pmf(np.arange(0, k))))

    def sf_above(self, k: int) -> float:
        """P[K_a > k]."""
        if self.name == "poisson":
            return float(stats.poisson.sf(k, self.mean))
        hi = self.support_max()
        if k >= hi:
            return 0.0
        return float(np.sum(self.pmf(np.arange(k + 1, hi + 1))))

    def expected(self) -> float:
        if self.name == "poisson":
            return self.mean
        if self.name == "fixed":
            return float(self.value)
        return float(sum(k * w for k, w in self.table))


@dataclass(frozen=True)
class ActivityModel:
    kind: ActivityKind
    K_l: int
    K_u: int
    tail_threshold: float = 0.0

    def __post_init__(self):
        if self.K_l < 0 or self.K_l > self.K_u:
            raise ConfigError("need 0 <= K_l <= K_u")

    @property
    def ks(self) -> np.ndarray:
        return np.arange(self.K_l, self.K_u + 1)

    @property
    def pmf(self) -> np.ndarray:
        """Raw (not renormalized) probabilities on [K_l, K_u]."""
        return self.kind.pmf(self.ks)

    @property
    def outside_mass(self) -> float:
        return max(0.0, self.kind.cdf_below(self.K_l) + self.kind.sf_above(self.K_u))

    @property
    def mean(self) -> float:
        return self.kind.expected()

    def prob(self, k: int) -> float:
        return float(self.kind.pmf(np.array([k]))[0])

    def full_support(self):
        ks = np.arange(0, self.kind.support_max() + 1)
        return ks, self.kind.pmf(ks)

    def expected_collision(self, ln_m: float, m_cap=math.inf) -> float:
        """1 - E[M! / (M^K (M-K)!)] over the untruncated law (expm1 keeps tiny values)."""
        ks, w = self.full_support()
        keep = w > 0
        cap = None if m_cap == math.inf else int(m_cap)
        vals = [-math.expm1(ln_falling_over_power(ln_m, int(k), cap)) for k in ks[keep]]
        return float(np.dot(w[keep], vals))

    def expected_pair_count(self, ln_m: float) -> float:
        """E[C(K,2)] / M, the simpler collision bound."""
        ks, w = self.full_support()
        return float(np.dot(w, ks * (ks - 1) / 2.0)) * math.exp(-ln_m)


def truncate_activity(kind: ActivityKind, tail_threshold: float = 1e-9) -> ActivityModel:
    """Window [K_l, K_u] with P[K_a outside] < tail_threshold.

    K_l is chosen first as the largest value whose lower tail alone is below
    the threshold; K_u is then the smallest value keeping the total outside
    mass below it.
    """
    if not (0 < tail_threshold < 1):
        raise ConfigError("tail_threshold must lie in (0, 1)")
    if kind.name == "fixed":
        return ActivityModel(kind, kind.value, kind.value, tail_threshold)
    hi = kind.support_max()
    ks = np.arange(0, hi + 1)
    w = kind.pmf(ks)
    below = np.concatenate(([0.0], np.cumsum(w)))  # below[k] = P[K < k]
    K_l = 0
    for k in range(0, hi + 1):
        if below[k] < tail_threshold:
            K_l = k
        else:
            break
    low_mass = below[K_l]
    K_u = hi
    for k in range(K_l, hi + 1):
        if low_mass + kind.sf_above(k) < tail_threshold:
            K_u = k
            break
    return ActivityModel(kind, K_l, K_u, tail_threshold)


# ---------------------------------------------------------------------------
# decoder policy and list windows

ESTIMATORS = ("ml", "energy", "oracle")


@dataclass(frozen=True)
class DecoderPolicy:
    estimator: str = "ml"
    radius: int = 0
    # "all": min over every K != K_a' in the window.
    # "true_ka": the single comparison against the true K_a (K_a != K_a').
    xi_candidates: str = "all"
    # numerator of the FA weight: "tprime" (t' + offset) or "t" (t + offset)
    fa_weight: str = "tprime"
    collision_bound: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.radius < 0:
            raise ConfigError("radius must be >= 0")
        if self.xi_candidates not in ("all", "true_ka"):
            raise ConfigError("xi_candidates must be 'all' or 'true_ka'")
        if self.fa_weight not in ("tprime", "t"):
            raise ConfigError("fa_weight must be 'tprime' or 't'")


@dataclass(frozen=True)
class ListWindow:
    lower: int
    upper: int

    @classmethod
    def around(cls, ka_hat: int, radius: int, K_l: int, K_u: int) -> "ListWindow":
        return cls(max(K_l, ka_hat - radius), min(K_u, ka_hat + radius))

    def offsets(self, K_a: int) -> tuple[int, int]:
        """(initial MDs, initial FAs) = ((K_a - upper)^+, (lower - K_a)^+)."""
        return max(K_a - self.upper, 0), max(self.lower - K_a, 0)


def _pos(x):
    return x if x > 0 else 0


def set_T(K_a: int, window: ListWindow, ln_m: float) -> range:
    M = codebook_cap(ln_m)
    d1, _ = window.offsets(K_a)
    hi = min(window.upper, K_a, M - window.lower - d1)
    return range(0, int(hi) + 1) if hi >= 0 else range(0)


def u_t(K_a: int, window: ListWindow, t: int, ln_m: float):
    M = codebook_cap(ln_m)
    _, d2 = window.offsets(K_a)
    return min(_pos(window.upper - K_a) - d2 + t, window.upper - d2, M - max(window.lower, K_a))


def set_Tt(K_a: int, window: ListWindow, t: int, ln_m: float, unconstrained: bool = False) -> range:
    """T_t, or T-bar_t when ``unconstrained`` (list size may be zero)."""
    d1, d2 = window.offsets(K_a)
    if unconstrained:
        lo = _pos(d1 - _pos(K_a - window.lower) + t)
    else:
        lo = _pos(d1 - d2 + max(window.lower, 1) - K_a + t)
    hi = u_t(K_a, window, t, ln_m)
    return range(lo, int(hi) + 1) if hi >= lo else range(0)


def set_Tbar_t(K_a: int, window: ListWindow, t: int, ln_m: float) -> range:
    return set_Tt(K_a, window, t, ln_m, unconstrained=True)
