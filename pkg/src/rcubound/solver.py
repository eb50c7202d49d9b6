"""Minimum Eb/N0 with max{eps_MD, eps_FA} <= target, by bisection on Eb/N0."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .bounds import RATIO_GRID, RATIO_MAX, EvalOptions, QPolicy, assemble_bound, optimize_pprime
from .extensions import SlotConfig, sampr_bound
from .model import ActivityModel, ConfigError, DecoderPolicy, SystemConfig

SCHEMES = ("theorem1", "known_ka", "sampr")


class BracketExhausted(Exception):
    """The target was not met anywhere in the (expanded) bracket."""

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SolveRequest:
    activity: ActivityModel
    n: int
    k: float
    target: float = 0.1
    scheme: str = "theorem1"
    estimator: str = "ml"
    radii: tuple = (0, 1, 2)
    L_values: tuple = (1,)
    slot_index_coding: bool = False
    xi_candidates: str = "true_ka"
    bracket: tuple = (-1.0, 4.0)
    tol_db: float = 0.01
    max_expand: int = 4
    q_policy: QPolicy = QPolicy()
    options: EvalOptions = EvalOptions()

    def __post_init__(self):
        if not (0 < self.target < 1):
            raise ConfigError("target must lie in (0, 1)")
        if not (self.bracket[0] < self.bracket[1]):
            raise ConfigError("bracket needs low < high")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not self.radii or min(self.radii) < 0:
            raise ConfigError("radius set must be nonempty and nonnegative")
        if not self.L_values or min(self.L_values) < 1:
            raise ConfigError("L set must be nonempty with L >= 1")

    def knobs(self):
        """(policy, slot) pairs in trial order; r = 0 first."""
        if self.scheme == "known_ka":
            return [(DecoderPolicy("oracle", 0, self.xi_candidates), SlotConfig(1, False))]
        Ls = self.L_values if self.scheme == "sampr" else (1,)
        sic = self.slot_index_coding if self.scheme == "sampr" else False
        return [(DecoderPolicy(self.estimator, r, self.xi_candidates), SlotConfig(L, sic))
                for r in sorted(self.radii) for L in Ls]


@dataclass
class SolveResult:
    ebn0_db: float
    ratio: float
    radius: int
    L: int
    eps_md: float
    eps_fa: float
    lower_db: float
    lower_score: float
    non_monotone: bool = False
    trace: list = field(default_factory=list)
    seconds: float = 0.0

    def as_dict(self):
        return {k: getattr(self, k) for k in ("ebn0_db", "ratio", "radius", "L", "eps_md", "eps_fa",
                                              "lower_db", "lower_score", "non_monotone", "seconds")}


def required_ebn0(req: SolveRequest) -> SolveResult:
    t0 = time.perf_counter()
    knobs = req.knobs()
    warm: dict = {}
    trace = []
    evaluated: dict = {}

    def evaluate(db):
        """Best (score, result, ratio, knob) at ``db``; stops at the first feasible knob."""
        if db in evaluated:
            return evaluated[db]
        P = SystemConfig.power_from_ebn0(db, req.n, req.k)
        config = SystemConfig(req.n, req.k, P, 0.9 * P)
        best = None
        for i, (policy, slot) in enumerate(knobs):
            if slot.L > 1 or slot.slot_index_coding:
                if config.n // slot.L < 1:
                    continue
                fn = _slot_fn(slot)
            else:
                fn = assemble_bound
            ratios = _warm_grid(warm.get(i))
            res, ratio, _ = optimize_pprime(config, req.activity, policy, req.q_policy, req.options,
                                            "max", ratios, bound_fn=fn, stop_below=req.target)
            warm[i] = ratio
            score = max(res.eps_md, res.eps_fa)
            if best is None or score < best[0]:
                best = (score, res, ratio, (policy.radius, slot.L))
            if score <= req.target:
                break
        if best is None:
            raise ConfigError("no admissible (radius, L) knob")
        evaluated[db] = best
        trace.append({"ebn0_db": db, "score": best[0], "ratio": best[2], "radius": best[3][0], "L": best[3][1],
                      "eps_md": best[1].eps_md, "eps_fa": best[1].eps_fa})
        return best

    lo, hi = req.bracket
    width = hi - lo
    f_hi = evaluate(hi)
    expand = 0
    while f_hi[0] > req.target:
        if expand >= req.max_expand:
            best_db = min(evaluated, key=lambda d: evaluated[d][0])
            raise BracketExhausted(f"target {req.target} not reached up to {hi:.3f} dB",
                                   {"ebn0_db": best_db, "score": evaluated[best_db][0], "trace": trace})
        lo, hi = hi, hi + width
        f_hi = evaluate(hi)
        expand += 1
    f_lo = evaluate(lo)
    expand = 0
    while f_lo[0] <= req.target:
        if expand >= req.max_expand:
            break
        hi, f_hi = lo, f_lo
        lo = lo - width
        f_lo = evaluate(lo)
        expand += 1
    while hi - lo > req.tol_db:
        mid = 0.5 * (lo + hi)
        f_mid = evaluate(mid)
        if f_mid[0] <= req.target:
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid

    # feasibility should be monotone in Eb/N0; flag a feasible point below an infeasible one
    feas = [evaluated[d][0] <= req.target for d in sorted(evaluated)]
    non_mono = any(a and not b for a, b in zip(feas, feas[1:]))
    score, res, ratio, (radius, L) = f_hi
    return SolveResult(hi, ratio, radius, L, res.eps_md, res.eps_fa, lo, f_lo[0], non_mono, trace,
                       time.perf_counter() - t0)


def _slot_fn(slot):
    def fn(config, activity, policy, q_policy, options):
        return sampr_bound(config, activity, policy, slot, q_policy, options)
    return fn


def _warm_grid(prev):
    """The standard ratio grid, led by the previous optimum when there is one."""
    if prev is None:
        return RATIO_GRID
    return (prev,) + tuple(r for r in RATIO_GRID if abs(r - prev) > 1e-12)
