"""Assembly of the MD/FA achievability bound.

eps_MD = sum_{K_a >= max(K_l,1)} P(K_a) sum_{K_a'} sum_{t in T} (t + D1)/K_a min{p_t, q_t, xi} + p0
eps_FA = sum_{K_a} P(K_a) sum_{K_a'} sum_{t in T} sum_{t' in T_t} w_FA min{p_tt', q_tt', xi} + p0

with D1 = (K_a - upper)^+, D2 = (lower - K_a)^+ and
w_FA = (t' + D2) / (K_a - t - D1 + t' + D2).

Cells whose total weight times xi is below ``prune_tol`` are charged with xi
itself (an upper bound on every min-term), so pruning never loosens the
guarantee by more than the reported amount and never tightens it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dtbound import DEFAULT_ENUM_CAP, DEFAULT_SAMPLES, SingleMissSampler, q_from_ecdf, sample_gram_It, QUnavailable
from .estimator import xi_table
from .exponents import ExponentBatch, ln_count_fa
from .model import (ActivityModel, DecoderPolicy, ListWindow, SystemConfig, set_T, set_Tbar_t, set_Tt)
from .numerics import SeededStream, ln_binomial, reg_gamma_upper


@dataclass(frozen=True)
class QPolicy:
    """Where and how the Monte-Carlo q-terms are evaluated."""

    enabled: bool = True
    t_values: tuple = (1,)
    ka_max: int = 50
    samples: int = DEFAULT_SAMPLES
    enum_cap: int = DEFAULT_ENUM_CAP
    seed: int = 2024


@dataclass(frozen=True)
class EvalOptions:
    prune_tol: float = 1e-13
    refine: bool = True
    # keys whose coarse contribution is below refine_rel * (coarse total) keep the grid value
    refine_rel: float = 1e-7
    keep_terms: bool = False


@dataclass
class BoundTerms:
    xi: dict = field(default_factory=dict)
    p_t: dict = field(default_factory=dict)
    q_t: dict = field(default_factory=dict)
    p_tt: dict = field(default_factory=dict)
    q_tt: dict = field(default_factory=dict)
    w_md: dict = field(default_factory=dict)
    w_fa: dict = field(default_factory=dict)


@dataclass
class BoundResult:
    eps_md: float
    eps_fa: float
    p0: float
    p0_parts: dict
    diagnostics: dict
    terms: BoundTerms | None = None

    def as_dict(self):
        return {"eps_md": self.eps_md, "eps_fa": self.eps_fa, "p0": self.p0,
                "p0_parts": self.p0_parts, "diagnostics": self.diagnostics}


# ---------------------------------------------------------------------------


def compute_p0(config: SystemConfig, activity: ActivityModel, collision_bound: bool = False) -> tuple[float, dict]:
    truncation = activity.outside_mass
    if collision_bound:
        collision = activity.expected_pair_count(config.ln_m)
    else:
        collision = activity.expected_collision(config.ln_m, config.m_cap)
    power = activity.mean * reg_gamma_upper(config.n, config.n * config.P / config.Pprime)
    parts = {"truncation": truncation, "collision": collision, "power": power}
    return truncation + collision + power, parts


class _SamplerPool:
    """One common-random-number sampler per (n, N, seed), reused across P'."""

    _pool: dict = {}

    @classmethod
    def get(cls, n, N, m_max, seed):
        key = (n, N, seed)
        s = cls._pool.get(key)
        if s is None or s.m_max < m_max:
            if len(cls._pool) > 4:
                cls._pool.clear()
            s = SingleMissSampler(n, N, max(m_max, 1), SeededStream(seed, 1))
            cls._pool[key] = s
        return s


class Lattice:
    """Index structure of the (K_a, K_a', t, t') sums; independent of P and P'."""

    def __init__(self, K_l, K_u, radius, ln_m, fa_weight="tprime"):
        self.K_l, self.K_u = K_l, K_u
        keys: dict = {}

        def key_of(k):
            i = keys.get(k)
            if i is None:
                i = keys[k] = len(keys)
            return i

        cells = []
        md_cell, md_t, md_w, md_ptr, md_keys = [], [], [], [0], []
        fa_cell, fa_t, fa_tp, fa_w, fa_key = [], [], [], [], []
        w_md_sum, w_fa_sum = [], []
        for K_a in range(K_l, K_u + 1):
            for K_h in range(K_l, K_u + 1):
                window = ListWindow.around(K_h, radius, K_l, K_u)
                d1, d2 = window.offsets(K_a)
                used1 = max(K_a, window.lower)
                m2 = min(K_a, window.upper)
                ci = len(cells)
                cells.append((K_a, K_h, K_a - K_l, K_h - K_l, d1, d2, window.lower, window.upper))
                wm = wf = 0.0
                for t in set_T(K_a, window, ln_m):
                    if K_a >= max(K_l, 1):
                        tps = set_Tbar_t(K_a, window, t, ln_m)
                        w = (t + d1) / K_a
                        md_cell.append(ci)
                        md_t.append(t)
                        md_w.append(w)
                        md_keys.extend(key_of((t, tp, d1 + d2, used1, m2)) for tp in tps)
                        md_ptr.append(len(md_keys))
                        wm += w
                    for tp in set_Tt(K_a, window, t, ln_m):
                        size = K_a - t - d1 + tp + d2
                        w = ((tp if fa_weight == "tprime" else t) + d2) / size
                        fa_cell.append(ci)
                        fa_t.append(t)
                        fa_tp.append(tp)
                        fa_w.append(w)
                        fa_key.append(key_of((t, tp, d1 + d2, used1, m2)))
                        wf += w
                w_md_sum.append(wm)
                w_fa_sum.append(wf)
        self.cells = np.array(cells, dtype=np.int64).reshape(-1, 8)
        self.w_md_sum = np.array(w_md_sum)
        self.w_fa_sum = np.array(w_fa_sum)
        self.md_cell = np.array(md_cell, dtype=np.int64)
        self.md_t = np.array(md_t, dtype=np.int64)
        self.md_w = np.array(md_w)
        self.md_ptr = np.array(md_ptr, dtype=np.int64)
        self.md_keys = np.array(md_keys, dtype=np.int64)
        self.md_len = np.diff(self.md_ptr)
        self.fa_cell = np.array(fa_cell, dtype=np.int64)
        self.fa_t = np.array(fa_t, dtype=np.int64)
        self.fa_tp = np.array(fa_tp, dtype=np.int64)
        self.fa_w = np.array(fa_w)
        self.fa_key = np.array(fa_key, dtype=np.int64)
        klist = sorted(keys, key=keys.get)
        self.keys = np.array(klist, dtype=np.int64).reshape(-1, 5)
        self.L1 = np.array([ln_count_fa(ln_m, int(k[3]), int(k[1])) for k in klist])
        self.L2 = np.array([ln_binomial(int(k[4]), int(k[0])).value for k in klist])
        # the key of each MD row's individual t' entries, expanded to rows
        self.md_row_of_key = np.repeat(np.arange(self.md_t.size), self.md_len)
        n_cells = self.cells.shape[0]
        self.md_rows_of_cell = _group_rows(self.md_cell, n_cells)
        self.fa_rows_of_cell = _group_rows(self.fa_cell, n_cells)

    _cache: dict = {}

    @classmethod
    def get(cls, K_l, K_u, radius, ln_m, fa_weight):
        key = (K_l, K_u, radius, round(ln_m, 12), fa_weight)
        lat = cls._cache.get(key)
        if lat is None:
            if len(cls._cache) > 16:
                cls._cache.clear()
            lat = cls._cache[key] = cls(K_l, K_u, radius, ln_m, fa_weight)
        return lat


def _segment_sum(values, ptr):
    """Sums over CSR segments (empty segments give 0)."""
    out = np.zeros(ptr.size - 1)
    if values.size == 0:
        return out
    cs = np.concatenate(([0.0], np.cumsum(values)))
    return cs[ptr[1:]] - cs[ptr[:-1]]


def assemble_bound(config: SystemConfig, activity: ActivityModel, policy: DecoderPolicy,
                   q_policy: QPolicy = QPolicy(), options: EvalOptions = EvalOptions()) -> BoundResult:
    t_start = time.perf_counter()
    n, Pp, ln_m = config.n, config.Pprime, config.ln_m
    p0, p0_parts = compute_p0(config, activity, policy.collision_bound)
    K_l, K_u = activity.K_l, activity.K_u
    lat = Lattice.get(K_l, K_u, policy.radius, ln_m, policy.fa_weight)
    xis = xi_table(K_l, K_u, policy.estimator, Pp, n, policy.xi_candidates)
    pmf = activity.pmf

    cells = lat.cells
    pk = pmf[cells[:, 2]]
    xv = xis.values[cells[:, 2], cells[:, 3]]
    weight = pk * xv
    active = weight > 0
    if options.prune_tol > 0 and not options.keep_terms:
        small = active & (weight * (lat.w_md_sum + lat.w_fa_sum) < options.prune_tol)
    else:
        small = np.zeros_like(active)
    pruned_md = float(np.sum((weight * lat.w_md_sum)[small]))
    pruned_fa = float(np.sum((weight * lat.w_fa_sum)[small]))
    live = active & ~small

    md_live = live[lat.md_cell]
    fa_live = live[lat.fa_cell]
    md_entry_live = np.repeat(md_live, lat.md_len)
    needed = np.zeros(lat.keys.shape[0], dtype=bool)
    needed[lat.md_keys[md_entry_live]] = True
    needed[lat.fa_key[fa_live]] = True
    kidx = np.nonzero(needed)[0]

    eb = ExponentBatch(Pp, n)
    E = np.zeros(lat.keys.shape[0])
    rho = np.zeros_like(E)
    rho1 = np.zeros_like(E)
    if kidx.size:
        k = lat.keys[kidx]
        E[kidx], rho[kidx], rho1[kidx] = eb.coarse(k[:, 0], k[:, 1], k[:, 2], lat.L1[kidx], lat.L2[kidx])

    # q-terms, one ECDF per live cell and t
    q_md = np.full(lat.md_t.size, np.inf)
    q_fa = np.full(lat.fa_t.size, np.inf)
    q_info = {"samples": q_policy.samples, "seed": q_policy.seed, "cells": 0, "unavailable": 0}
    if q_policy.enabled:
        q_cells = np.nonzero(live & (cells[:, 0] <= q_policy.ka_max))[0]
        if q_cells.size:
            m_all = np.minimum(cells[q_cells, 0], cells[q_cells, 7])
            sampler = _SamplerPool.get(n, q_policy.samples, int(m_all.max()), q_policy.seed) if m_all.max() > 0 else None
            for ci in q_cells:
                K_a, K_h, _, _, d1, d2, lower, upper = (int(v) for v in cells[ci])
                m = min(K_a, upper)
                used1 = max(K_a, lower)
                for t in q_policy.t_values:
                    if t < 1 or t > m:
                        continue
                    if t == 1:
                        samples = sampler.sample(Pp, d1, d2, m)
                    else:
                        try:
                            rng = SeededStream(q_policy.seed, 1000 + t).child(K_a, K_h).generator()
                            samples = sample_gram_It(n, t, d1, d2, m, Pp, q_policy.samples, rng, q_policy.enum_cap)
                        except (QUnavailable, ValueError):
                            q_info["unavailable"] += 1
                            continue
                    q_info["cells"] += 1
                    l2 = ln_binomial(m, t).value
                    for r in lat.md_rows_of_cell[ci]:
                        if lat.md_t[r] != t or lat.md_len[r] == 0:
                            continue
                        seg = lat.md_keys[lat.md_ptr[r]:lat.md_ptr[r + 1]]
                        l1s = lat.L1[seg]
                        mx = l1s.max()
                        q_md[r] = q_from_ecdf(samples, mx + math.log(np.exp(l1s - mx).sum()) + l2)
                    for r in lat.fa_rows_of_cell[ci]:
                        if lat.fa_t[r] != t:
                            continue
                        q_fa[r] = q_from_ecdf(samples, ln_count_fa(ln_m, used1, int(lat.fa_tp[r])) + l2)

    md_pk = pk[lat.md_cell]
    fa_pk = pk[lat.fa_cell]
    md_xi = xv[lat.md_cell]
    fa_xi = xv[lat.fa_cell]

    def accumulate(E_now):
        ptt_entries = np.exp(-n * E_now[lat.md_keys])
        p_t = _segment_sum(ptt_entries, lat.md_ptr)
        md_val = np.minimum(np.minimum(p_t, q_md), md_xi)
        p_fa = np.exp(-n * E_now[lat.fa_key])
        fa_val = np.minimum(np.minimum(p_fa, q_fa), fa_xi)
        md = float(np.sum((md_pk * lat.md_w * md_val)[md_live]))
        fa = float(np.sum((fa_pk * lat.fa_w * fa_val)[fa_live]))
        # contribution of each key where p is the active term
        contrib = np.zeros(E_now.size)
        md_p_active = md_live & (p_t <= np.minimum(q_md, md_xi))
        ent_active = np.repeat(md_p_active, lat.md_len)
        rows = lat.md_row_of_key[ent_active]
        np.add.at(contrib, lat.md_keys[ent_active], (md_pk * lat.md_w)[rows] * ptt_entries[ent_active])
        fa_p_active = fa_live & (p_fa <= np.minimum(q_fa, fa_xi))
        np.add.at(contrib, lat.fa_key[fa_p_active], (fa_pk * lat.fa_w * p_fa)[fa_p_active])
        return md, fa, contrib, p_t, p_fa

    md_sum, fa_sum, contrib, _, _ = accumulate(E)
    n_refined = 0
    if options.refine and kidx.size:
        total = md_sum + fa_sum + pruned_md + pruned_fa
        sel = np.nonzero(contrib > options.refine_rel * max(total, 1e-300))[0]
        if sel.size:
            k = lat.keys[sel]
            En, _, _ = eb.refine(k[:, 0], k[:, 1], k[:, 2], lat.L1[sel], lat.L2[sel], rho[sel], rho1[sel], E[sel])
            E[sel] = np.maximum(E[sel], En)
            n_refined = int(sel.size)
            md_sum, fa_sum, contrib, _, _ = accumulate(E)

    terms = None
    if options.keep_terms:
        terms = _collect_terms(lat, E, n, q_md, q_fa, xv, live)

    eps_md_raw = md_sum + pruned_md + p0
    eps_fa_raw = fa_sum + pruned_fa + p0
    diag = {
        "window": [K_l, K_u],
        "cells": int(live.sum()),
        "cells_pruned": int(small.sum()),
        "pruned_mass_md": pruned_md,
        "pruned_mass_fa": pruned_fa,
        "exponent_keys": int(kidx.size),
        "exponent_keys_refined": n_refined,
        "q": q_info,
        "clamped_md": bool(eps_md_raw > 1),
        "clamped_fa": bool(eps_fa_raw > 1),
        "Pprime": Pp,
        "seconds": time.perf_counter() - t_start,
    }
    return BoundResult(min(eps_md_raw, 1.0), min(eps_fa_raw, 1.0), p0, p0_parts, diag, terms)


def _group_rows(row_cell, n_cells):
    """Row indices of each cell (rows are stored cell by cell)."""
    bounds = np.searchsorted(row_cell, np.arange(n_cells + 1))
    return [range(int(bounds[c]), int(bounds[c + 1])) for c in range(n_cells)]


def _collect_terms(lat, E, n, q_md, q_fa, xv, live) -> BoundTerms:
    terms = BoundTerms()
    cells = lat.cells
    for ci in np.nonzero(live)[0]:
        terms.xi[(int(cells[ci, 0]), int(cells[ci, 1]))] = float(xv[ci])
    for r in range(lat.md_t.size):
        ci = lat.md_cell[r]
        if not live[ci]:
            continue
        key = (int(cells[ci, 0]), int(cells[ci, 1]), int(lat.md_t[r]))
        seg = lat.md_keys[lat.md_ptr[r]:lat.md_ptr[r + 1]]
        terms.p_t[key] = float(np.exp(-n * E[seg]).sum())
        terms.w_md[key] = float(lat.md_w[r])
        if np.isfinite(q_md[r]):
            terms.q_t[key] = float(q_md[r])
    for r in range(lat.fa_t.size):
        ci = lat.fa_cell[r]
        if not live[ci]:
            continue
        key = (int(cells[ci, 0]), int(cells[ci, 1]), int(lat.fa_t[r]), int(lat.fa_tp[r]))
        terms.p_tt[key] = float(np.exp(-n * E[lat.fa_key[r]]))
        terms.w_fa[key] = float(lat.fa_w[r])
        if np.isfinite(q_fa[r]):
            terms.q_tt[key] = float(q_fa[r])
    return terms


# ---------------------------------------------------------------------------
# P' selection

RATIO_GRID = (0.70, 0.75, 0.80, 0.85, 0.90, 0.95)
RATIO_MAX = 0.9999


def _score(res: BoundResult, target: str) -> float:
    if target == "md":
        return res.eps_md
    if target == "fa":
        return res.eps_fa
    return max(res.eps_md, res.eps_fa)


def optimize_pprime(config: SystemConfig, activity: ActivityModel, policy: DecoderPolicy,
                    q_policy: QPolicy = QPolicy(), options: EvalOptions = EvalOptions(),
                    target: str = "max", ratios=RATIO_GRID, ratio_tol: float = 2e-3,
                    bound_fn=None, stop_below: float | None = None):
    """Grid over P'/P followed by golden-section refinement around the best ratio.

    With ``stop_below`` the search returns as soon as some ratio scores at or
    below it (enough to certify feasibility).
    Returns (best BoundResult, best ratio, list of (ratio, score)).
    """
    bound_fn = bound_fn or assemble_bound
    trace = []
    cache = {}

    def evaluate(r):
        r = float(min(r, RATIO_MAX))
        if r not in cache:
            cache[r] = bound_fn(config.with_ratio(r), activity, policy, q_policy, options)
            trace.append((r, _score(cache[r], target)))
        return _score(cache[r], target)

    class _Reached(Exception):
        pass

    def evaluate_or_stop(r):
        v = evaluate(r)
        if stop_below is not None and v <= stop_below:
            raise _Reached
        return v

    try:
        _search(evaluate_or_stop, list(ratios), ratio_tol)
    except _Reached:
        pass
    best_r = min(cache, key=lambda r: _score(cache[r], target))
    return cache[best_r], best_r, trace


def _search(evaluate, grid, ratio_tol):
    # evaluated in the given order (a warm-start ratio may come first)
    first = [evaluate(r) for r in grid]
    order = np.argsort(grid, kind="stable")
    grid = [min(grid[j], RATIO_MAX) for j in order]
    scores = [first[j] for j in order]
    i = int(np.argmin(scores))
    lo = grid[i - 1] if i > 0 else grid[0]
    hi = grid[i + 1] if i + 1 < len(grid) else RATIO_MAX
    inv = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = evaluate(c), evaluate(d)
    while b - a > ratio_tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = evaluate(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = evaluate(d)
