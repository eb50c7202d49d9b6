"""Slotted ALOHA with multi-packet reception, and the P -> infinity error floors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .bounds import BoundResult, EvalOptions, QPolicy, assemble_bound
from .estimator import xi_table
from .model import (ActivityKind, ActivityModel, ConfigError, DecoderPolicy, ListWindow, SystemConfig,
                    truncate_activity)
from .numerics import ln_comb

DEFAULT_THRESHOLD = 1e-9


# ---------------------------------------------------------------------------
# SA-MPR


@dataclass(frozen=True)
class SlotConfig:
    L: int = 1
    slot_index_coding: bool = False

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError("L must be >= 1")

    @property
    def index_bits(self) -> int:
        """floor(log2 L) bits carried by the slot choice."""
        return self.L.bit_length() - 1 if self.slot_index_coding else 0

    def slot_length(self, n: int) -> int:
        # the n mod L leftover channel uses are discarded
        return n // self.L

    def slot_system(self, config: SystemConfig) -> SystemConfig:
        n_s = self.slot_length(config.n)
        if n_s < 1:
            raise ConfigError(f"slot length n/L = {config.n}/{self.L} < 1")
        k_s = config.k - self.index_bits
        if k_s <= 0:
            raise ConfigError("slot-index bits exhaust the payload")
        return SystemConfig(n=n_s, k=k_s, P=config.P * self.L, Pprime=config.Pprime * self.L)


def thinned_pmf(ks, weights, L: int, support) -> np.ndarray:
    """P[K_SA = j] = sum_K P(K) C(K, j) L^-j (1 - 1/L)^(K - j) for j in ``support``."""
    ks = np.asarray(ks)
    weights = np.asarray(weights, dtype=float)
    j = np.asarray(support)
    if L == 1:
        lookup = dict(zip(ks.tolist(), weights.tolist()))
        return np.array([lookup.get(int(v), 0.0) for v in j])
    return stats.binom.pmf(j[:, None], ks[None, :], 1.0 / L) @ weights


def slot_activity(activity: ActivityModel, L: int) -> ActivityModel:
    """Per-slot activity when each user picks one of L slots uniformly."""
    if L < 1:
        raise ConfigError("L must be >= 1")
    if L == 1:
        return activity
    kind = activity.kind
    thr = activity.tail_threshold if activity.tail_threshold > 0 else DEFAULT_THRESHOLD
    if kind.name == "poisson":
        # thinning a Poisson law keeps it Poisson
        thinned = ActivityKind.poisson(kind.mean / L)
    else:
        ks, w = activity.full_support()
        support = np.arange(0, int(ks.max()) + 1)
        pmf = thinned_pmf(ks, w, L, support)
        thinned = ActivityKind.explicit({int(j): float(p) for j, p in zip(support, pmf) if p > 0})
    return truncate_activity(thinned, thr)


def sampr_bound(config: SystemConfig, activity: ActivityModel, policy: DecoderPolicy,
                slot: SlotConfig = SlotConfig(), q_policy: QPolicy = QPolicy(),
                options: EvalOptions = EvalOptions()) -> BoundResult:
    """Per-user MD/FA bound of SA-MPR: every slot runs the single-frame code with
    length n/L, power P L and the thinned activity.  With slot-index coding the
    floor(log2 L) index bits are taken to be decoded without error."""
    if slot.L == 1 and not slot.slot_index_coding:
        return assemble_bound(config, activity, policy, q_policy, options)
    sub = slot.slot_system(config)
    res = assemble_bound(sub, slot_activity(activity, slot.L), policy, q_policy, options)
    res.diagnostics["slot"] = {
        "L": slot.L, "n_slot": sub.n, "k_codebook": sub.k, "index_bits": slot.index_bits,
        "discarded_channel_uses": config.n - slot.L * sub.n,
        "assumes_perfect_index_decoding": slot.slot_index_coding,
    }
    return res


# ---------------------------------------------------------------------------
# error floors


@dataclass
class FloorResult:
    eps_md_floor: float
    eps_fa_floor: float
    pbar: float
    # log10 of the largest pbar_{t,t'} certificate over the mismatched cells
    log10_ptt_max: float = -math.inf
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"eps_md_floor": self.eps_md_floor, "eps_fa_floor": self.eps_fa_floor, "pbar": self.pbar,
                "log10_ptt_max": self.log10_ptt_max if math.isfinite(self.log10_ptt_max) else None}


def floor_ptt(ln_m: float, n: int, K_a: int, window: ListWindow, t: int, tp: int) -> float:
    """ln pbar_{t,t'} = ln C(M - max{K_a, lower}, t') + ln C(min{K_a, upper}, t)
    - n ln(1 + (t + t') / (4 offsets)); -inf when K_a lies inside the window."""
    d1, d2 = window.offsets(K_a)
    d = d1 + d2
    if d == 0:
        return -math.inf
    used = max(K_a, window.lower)
    M = math.exp(ln_m)
    if math.isfinite(M) and M < 1e15:
        l1 = float(ln_comb(int(round(M)) - used, tp))
    else:
        # log C(M - used, t') for astronomically large M
        l1 = tp * ln_m + float(np.sum(np.log1p(-(used + np.arange(tp)) * math.exp(-ln_m)))) - math.lgamma(tp + 1)
    l2 = float(ln_comb(min(K_a, window.upper), t))
    return l1 + l2 - n * math.log1p((t + tp) / (4.0 * d))


def error_floor(config: SystemConfig, activity: ActivityModel, policy: DecoderPolicy,
                t_max: int = 3) -> FloorResult:
    """Limits of eps_MD, eps_FA as P -> infinity when only the initial MDs/FAs remain."""
    if policy.estimator not in ("ml", "energy"):
        raise ConfigError("error floors need the ML or energy estimator")
    K_l, K_u = activity.K_l, activity.K_u
    n, ln_m = config.n, config.ln_m
    xis = xi_table(K_l, K_u, policy.estimator, 1.0, n, policy.xi_candidates, asymptotic=True)
    pmf = activity.pmf
    pbar = activity.outside_mass + activity.expected_collision(ln_m, config.m_cap)
    md = fa = 0.0
    worst = -math.inf
    for ia, K_a in enumerate(range(K_l, K_u + 1)):
        row_md = row_fa = 0.0
        for ih, K_h in enumerate(range(K_l, K_u + 1)):
            window = ListWindow.around(K_h, policy.radius, K_l, K_u)
            d1, d2 = window.offsets(K_a)
            if d1 == 0 and d2 == 0:
                continue
            x = xis.values[ia, ih]
            if K_a >= max(K_l, 1):
                row_md += d1 / K_a * x
            size = K_a - d1 + d2
            if size > 0:
                row_fa += d2 / size * x
            if x > 0 and pmf[ia] > 0:
                for t in range(0, t_max + 1):
                    for tp in range(0, t_max + 1 - t):
                        if t + tp == 0:
                            continue
                        worst = max(worst, floor_ptt(ln_m, n, K_a, window, t, tp))
        md += pmf[ia] * row_md
        fa += pmf[ia] * row_fa
    return FloorResult(float(min(md + pbar, 1.0)), float(min(fa + pbar, 1.0)), float(pbar),
                       worst / math.log(10) if math.isfinite(worst) else -math.inf,
                       {"window": [K_l, K_u], "t_max": t_max})
