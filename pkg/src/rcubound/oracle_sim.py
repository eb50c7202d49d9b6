"""Brute-force simulation of the random-access code at desk scale.

Each trial draws K_a from the untruncated law, messages uniformly with
replacement, a fresh i.i.d. CN(0, P') codebook, applies the power rule
(codewords with ||c||^2 > nP are sent as all-zero), and decodes with the
two-stage decoder: K_a' = argmin_K m(y, K), then exhaustive minimum-distance
search over all message sets with size in [lower, upper].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .estimator import estimate_ka
from .model import ActivityModel, ConfigError, DecoderPolicy, ListWindow
from .numerics import SeededStream

DEFAULT_SUBSET_CAP = 2_000_000


class ResourceCapExceeded(Exception):
    """Exhaustive decoding would enumerate more subsets than allowed (CLI exit code 3)."""


@dataclass(frozen=True)
class SimConfig:
    n: int
    k: int
    P: float
    Pprime: float
    activity: ActivityModel
    policy: DecoderPolicy = DecoderPolicy()
    trials: int = 500
    subset_cap: int = DEFAULT_SUBSET_CAP
    seed: int = 2024
    fixed_codebook: bool = False
    keep_log: bool = False

    def __post_init__(self):
        if not (1 <= self.n <= 256):
            raise ConfigError("simulation needs 1 <= n <= 256")
        if not (1 <= self.k <= 8):
            raise ConfigError("simulation needs 1 <= k <= 8")
        if not (0 < self.Pprime < self.P):
            raise ConfigError("need 0 < Pprime < P")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")

    @property
    def M(self) -> int:
        return 2 ** self.k


@dataclass
class SimOutcome:
    p_md_hat: float
    p_fa_hat: float
    sigma_md: float
    sigma_fa: float
    trials: int
    md_events: int
    fa_events: int
    log: list = field(default_factory=list)

    def as_dict(self):
        return {"p_md_hat": self.p_md_hat, "p_fa_hat": self.p_fa_hat, "sigma_md": self.sigma_md,
                "sigma_fa": self.sigma_fa, "trials": self.trials, "md_events": self.md_events,
                "fa_events": self.fa_events}


def subsets_per_trial(M: int, K_l: int, K_u: int, radius: int) -> int:
    """Largest number of candidate lists over all estimator outputs."""
    worst = 0
    for kh in range(K_l, K_u + 1):
        w = ListWindow.around(kh, radius, K_l, K_u)
        worst = max(worst, sum(math.comb(M, s) for s in range(w.lower, w.upper + 1)))
    return worst


@lru_cache(maxsize=64)
def _combos(M: int, s: int) -> np.ndarray:
    if s == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.combinations(range(M), s)), dtype=np.int64).reshape(-1, s)


def decode_list(y, C, lower, upper):
    """argmin over message sets S with lower <= |S| <= upper of ||y - sum_S c||^2."""
    b = (C.conj() @ y).real          # Re <c_i, y>
    G = (C.conj() @ C.T).real        # Re <c_i, c_j>
    diag = np.diag(G)
    best_cost, best_set = math.inf, ()
    for s in range(lower, upper + 1):
        idx = _combos(C.shape[0], s)
        cost = -2.0 * b[idx].sum(axis=1) + diag[idx].sum(axis=1)
        for a, c in itertools.combinations(range(s), 2):
            cost = cost + 2.0 * G[idx[:, a], idx[:, c]]
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost, best_set = float(cost[j]), tuple(idx[j].tolist())
    return set(best_set)


def _draw_ka(kind, rng) -> int:
    if kind.name == "poisson":
        return int(rng.poisson(kind.mean))
    if kind.name == "fixed":
        return kind.value
    ks = np.array([k for k, _ in kind.table])
    w = np.array([p for _, p in kind.table])
    return int(rng.choice(ks, p=w / w.sum()))


def _codebook(M, n, Pprime, rng):
    return (rng.standard_normal((M, n)) + 1j * rng.standard_normal((M, n))) * math.sqrt(Pprime / 2)


def run_sim(cfg: SimConfig) -> SimOutcome:
    act, pol = cfg.activity, cfg.policy
    K_l, K_u = act.K_l, act.K_u
    M, n = cfg.M, cfg.n
    if subsets_per_trial(M, K_l, K_u, pol.radius) > cfg.subset_cap:
        raise ResourceCapExceeded(f"exhaustive decoding exceeds subset cap {cfg.subset_cap}")
    root = SeededStream(cfg.seed, 7)
    fixed = _codebook(M, n, cfg.Pprime, root.child(0).generator()) if cfg.fixed_codebook else None
    md_frac = np.zeros(cfg.trials)
    fa_frac = np.zeros(cfg.trials)
    md_events = fa_events = 0
    log = []
    for trial in range(cfg.trials):
        rng = root.child(1, trial).generator()
        K_a = _draw_ka(act.kind, rng)
        msgs = rng.integers(0, M, K_a)
        C = fixed if fixed is not None else _codebook(M, n, cfg.Pprime, rng)
        ok = np.sum(np.abs(C) ** 2, axis=1) <= n * cfg.P
        x = np.zeros(n, dtype=complex)
        for w in msgs:
            if ok[w]:
                x += C[w]
        y = x + (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * math.sqrt(0.5)
        if pol.estimator == "oracle":
            ka_hat = min(max(K_a, K_l), K_u)
        else:
            ka_hat = estimate_ka(float(np.vdot(y, y).real), K_l, K_u, pol.estimator, cfg.Pprime, n)
        window = ListWindow.around(ka_hat, pol.radius, K_l, K_u)
        decoded = decode_list(y, C, window.lower, window.upper)
        sent = set(int(w) for w in msgs)
        n_md = len(sent - decoded)
        n_fa = len(decoded - sent)
        md_frac[trial] = n_md / len(sent) if sent else 0.0
        fa_frac[trial] = n_fa / len(decoded) if decoded else 0.0
        md_events += n_md
        fa_events += n_fa
        if cfg.keep_log:
            log.append({"trial": trial, "K_a": K_a, "K_a_hat": ka_hat, "list_size": len(decoded),
                        "mds": n_md, "fas": n_fa})
    p_md, p_fa = float(md_frac.mean()), float(fa_frac.mean())
    N = cfg.trials
    # per-trial fractions lie in [0, 1], so the binomial variance bounds theirs
    return SimOutcome(p_md, p_fa, math.sqrt(p_md * (1 - p_md) / N), math.sqrt(p_fa * (1 - p_fa) / N),
                      N, md_events, fa_events, log)
