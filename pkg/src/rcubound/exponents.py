"""Gallager-type exponents E0(rho, rho1), E(t, t') and the probabilities p_{t,t'}, p_t.

Writing P3 = (t' + rho t) P', the lambda objective simplifies to

    f(lam) = rho1 (rho - 1) ln(1 + P' t' lam) + (rho1 - 1) ln(1 + P3 lam)
             + ln(1 + P3 lam - rho rho1 P2 P3 lam^2),

which is defined for 0 < lam < lam_max (the positive root of the last
argument).  Its stationary points are the real roots of the cubic below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ListWindow, codebook_cap, set_Tbar_t
from .numerics import cubic_real_roots, ln_binomial, logsumexp

GRID = np.linspace(0.0, 1.0, 21)
GOLDEN_TOL = 1e-4
GOLDEN_ROUNDS = 2
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ExponentContext:
    K_a: int
    window: ListWindow
    Pprime: float
    ln_m: float
    n: int

    @property
    def offsets(self):
        return self.window.offsets(self.K_a)

    @property
    def P2(self) -> float:
        d1, d2 = self.offsets
        return 1.0 + (d1 + d2) * self.Pprime

    def ln_count1(self, tp: int) -> float:
        """ln C(M - max{K_a, lower}, t') = n t' R1."""
        return ln_count_fa(self.ln_m, max(self.K_a, self.window.lower), tp)

    def ln_count2(self, t: int) -> float:
        """ln C(min{K_a, upper}, t) = n R2."""
        return ln_binomial(min(self.K_a, self.window.upper), t).value

    def R1(self, tp: int) -> float:
        return self.ln_count1(tp) / (self.n * tp) if tp > 0 else 0.0

    def R2(self, t: int) -> float:
        return self.ln_count2(t) / self.n


def ln_count_fa(ln_m: float, used: int, tp: int) -> float:
    """ln C(M - used, t'), through the stable upper bound when M is huge."""
    if tp == 0:
        return 0.0
    M = codebook_cap(ln_m)
    if M != math.inf:
        return ln_binomial(int(M) - used, tp).value
    ln_rest = ln_m + math.log1p(-used * math.exp(-ln_m))
    return ln_binomial(None, tp, ln_n=ln_rest).value


# ---------------------------------------------------------------------------
# E0


def cubic_coefficients(rho, rho1, t, tp, Pprime, P2, printed: bool = False):
    """c1..c4 of the stationarity cubic of the lambda objective.

    With ``printed=True`` the middle coefficient uses the factor (3 - rho1)
    from the published form; that variant does not vanish at the maximiser
    and is kept only for comparison.  The default factor (2 - rho1 + rho rho1)
    is the exact numerator of f'(lam) up to sign.
    """
    P3 = (tp + rho * t) * Pprime
    mid = (3 - rho1) if printed else (2 - rho1 + rho * rho1)
    c1 = -rho * rho1 * (rho * rho1 + 1) * tp * Pprime * P2 * P3**2
    c2 = (rho * rho1 * tp * Pprime * P3**2
          - rho * rho1 * mid * tp * Pprime * P2 * P3
          - rho * rho1 * (rho1 + 1) * P2 * P3**2)
    c3 = (2 * rho - 1) * rho1 * tp * Pprime * P3 + rho1 * P3**2 - 2 * rho * rho1 * P2 * P3
    c4 = (rho - 1) * rho1 * tp * Pprime + rho1 * P3
    return c1, c2, c3, c4


def lambda_objective(lam, rho, rho1, t, tp, Pprime, P2):
    """rho1 a + ln(1 - rho1 P2 b); -inf outside the feasible region."""
    lam = np.asarray(lam, dtype=float)
    P3 = (tp + rho * t) * Pprime
    inner = P3 * lam - rho * rho1 * P2 * P3 * lam**2
    with np.errstate(invalid="ignore", divide="ignore"):
        val = (rho1 * (rho - 1) * np.log1p(Pprime * tp * lam)
               + (rho1 - 1) * np.log1p(P3 * lam)
               + np.log1p(inner))
    return np.where((inner > -1) & (lam >= 0), val, -np.inf)


def _lambda_max(P3, k):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(k > 0, (P3 + np.sqrt(P3 * P3 + 4 * k)) / (2 * k), np.inf)


def _dobjective(lam, rho, rho1, A, P3, k):
    return (rho1 * (rho - 1) * A / (1 + A * lam)
            + (rho1 - 1) * P3 / (1 + P3 * lam)
            + (P3 - 2 * k * lam) / (1 + P3 * lam - k * lam * lam))


def e0_batch(rho, rho1, t, tp, Pprime, P2, fallback_iters: int = 200):
    """Vectorised E0 and the maximising lambda.

    The maximiser is taken among the real cubic roots inside (0, lam_max);
    if none is usable a bisection on the sign of f' is run instead.
    """
    rho, rho1, t, tp, Pprime, P2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (rho, rho1, t, tp, Pprime, P2)))
    shape = rho.shape
    rho, rho1, t, tp, Pprime, P2 = (v.ravel() for v in (rho, rho1, t, tp, Pprime, P2))
    P3 = (tp + rho * t) * Pprime
    k = rho * rho1 * P2 * P3
    e0 = np.zeros(rho.size)
    lam = np.zeros(rho.size)
    live = k > 0
    if np.any(live):
        idx = np.nonzero(live)[0]
        r, r1, tt, ttp, pp, p2 = rho[idx], rho1[idx], t[idx], tp[idx], Pprime[idx], P2[idx]
        lmax = _lambda_max(P3[idx], k[idx])
        roots = cubic_real_roots(*cubic_coefficients(r, r1, tt, ttp, pp, p2))
        ok = np.isfinite(roots) & (roots > 0) & (roots < lmax[:, None])
        vals = np.full(roots.shape, -np.inf)
        for j in range(3):
            m = ok[:, j]
            if np.any(m):
                vals[m, j] = lambda_objective(roots[m, j], r[m], r1[m], tt[m], ttp[m], pp[m], p2[m])
        best = np.argmax(vals, axis=1)
        bval = vals[np.arange(idx.size), best]
        blam = roots[np.arange(idx.size), best]
        bad = ~np.isfinite(bval)
        if np.any(bad):
            A = pp[bad] * ttp[bad]
            lo = np.zeros(bad.sum())
            hi = lmax[bad] * (1 - 1e-12)
            for _ in range(fallback_iters):
                mid = 0.5 * (lo + hi)
                up = _dobjective(mid, r[bad], r1[bad], A, P3[idx][bad], k[idx][bad]) > 0
                lo = np.where(up, mid, lo)
                hi = np.where(up, hi, mid)
            blam[bad] = 0.5 * (lo + hi)
            bval[bad] = lambda_objective(blam[bad], r[bad], r1[bad], tt[bad], ttp[bad], pp[bad], p2[bad])
        e0[idx] = bval
        lam[idx] = blam
    return e0.reshape(shape), lam.reshape(shape)


def e0(ctx: ExponentContext, t: int, tp: int, rho: float, rho1: float) -> float:
    val, _ = e0_batch(rho, rho1, t, tp, ctx.Pprime, ctx.P2)
    return float(val)


def optimal_lambda(ctx: ExponentContext, t, tp, rho, rho1) -> float:
    _, lam = e0_batch(rho, rho1, t, tp, ctx.Pprime, ctx.P2)
    return float(lam)


# ---------------------------------------------------------------------------
# E(t, t') over (rho, rho1)


def _e0_grid(t, tp, Pprime, P2):
    """E0 on the 21 x 21 (rho, rho1) grid for arrays of (t, t', P2); shape (K, 21, 21)."""
    t = np.asarray(t, dtype=float)[:, None, None]
    tp = np.asarray(tp, dtype=float)[:, None, None]
    P2 = np.asarray(P2, dtype=float)[:, None, None]
    val, _ = e0_batch(GRID[None, :, None], GRID[None, None, :], t, tp, Pprime, P2)
    return val


def _golden_max(func, lo, hi, tol=GOLDEN_TOL):
    """Vectorised golden-section maximisation; returns (argmax, max).

    ``func(x, mask)`` evaluates the objective at ``x[mask]`` for the keys in
    ``mask``.
    """
    width = float(np.max(hi - lo)) if lo.size else 0.0
    iters = max(1, int(math.ceil(math.log(max(width, tol) / tol) / -math.log(_INV_PHI))))
    everything = np.ones(lo.size, dtype=bool)
    a, b = lo.copy(), hi.copy()
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = func(c, everything), func(d, everything)
    for _ in range(iters):
        left = fc >= fd
        # keep [a, d] when the left probe wins, [c, b] otherwise
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - _INV_PHI * (b - a), d)
        d_new = np.where(left, c, a + _INV_PHI * (b - a))
        fc_new = np.where(left, 0.0, fd)
        fd_new = np.where(left, fc, 0.0)
        c, d = c_new, d_new
        if np.any(left):
            fc_new[left] = func(c, left)
        if np.any(~left):
            fd_new[~left] = func(d, ~left)
        fc, fd = fc_new, fd_new
    x = np.where(fc >= fd, c, d)
    return x, np.maximum(fc, fd)


class ExponentBatch:
    """E(t, t') for many keys sharing one P'.

    Keys are (t, t', D, L1, L2) where D = total initial offset (P2 = 1 + D P'),
    L1 = ln C(M - max{K_a, lower}, t') and L2 = ln C(min{K_a, upper}, t).
    """

    def __init__(self, Pprime: float, n: int, chunk: int = 4096):
        self.Pprime = float(Pprime)
        self.n = int(n)
        self.chunk = chunk
        self._tables: dict = {}

    def _table(self, keys):
        missing = [k for k in keys if k not in self._tables]
        if missing:
            arr = np.array(missing, dtype=float)
            grids = _e0_grid(arr[:, 0], arr[:, 1], self.Pprime, 1.0 + arr[:, 2] * self.Pprime)
            for key, g in zip(missing, grids):
                self._tables[key] = g
        return [self._tables[k] for k in keys]

    def coarse(self, t, tp, D, L1, L2):
        """Grid maximum; returns (E, rho, rho1)."""
        t, tp, D = (np.asarray(v, dtype=int) for v in (t, tp, D))
        L1 = np.asarray(L1, dtype=float) / self.n
        L2 = np.asarray(L2, dtype=float) / self.n
        out_e = np.zeros(t.size)
        out_r = np.zeros(t.size)
        out_r1 = np.zeros(t.size)
        rr = GRID[:, None] * GRID[None, :]
        r1 = np.broadcast_to(GRID[None, :], rr.shape)
        for s in range(0, t.size, self.chunk):
            sl = slice(s, s + self.chunk)
            keys = list(zip(t[sl].tolist(), tp[sl].tolist(), D[sl].tolist()))
            uniq = sorted(set(keys))
            tabs = np.stack(self._table(uniq))
            pos = {k: i for i, k in enumerate(uniq)}
            sel = tabs[[pos[k] for k in keys]]
            obj = sel - rr[None] * L1[sl, None, None] - r1[None] * L2[sl, None, None]
            flat = obj.reshape(obj.shape[0], -1)
            j = np.argmax(flat, axis=1)
            out_e[sl] = flat[np.arange(flat.shape[0]), j]
            out_r[sl] = GRID[j // GRID.size]
            out_r1[sl] = GRID[j % GRID.size]
        return np.maximum(out_e, 0.0), out_r, out_r1

    def refine(self, t, tp, D, L1, L2, rho, rho1, e_start):
        """Two rounds of coordinate-wise golden section around the grid optimum."""
        t, tp, D = (np.asarray(v, dtype=float) for v in (t, tp, D))
        L1 = np.asarray(L1, dtype=float) / self.n
        L2 = np.asarray(L2, dtype=float) / self.n
        P2 = 1.0 + D * self.Pprime
        rho = np.asarray(rho, dtype=float).copy()
        rho1 = np.asarray(rho1, dtype=float).copy()
        best = np.asarray(e_start, dtype=float).copy()
        if t.size == 0:
            return best, rho, rho1
        step = GRID[1] - GRID[0]

        def objective(r, r1, mask):
            v, _ = e0_batch(r, r1, t[mask], tp[mask], self.Pprime, P2[mask])
            return v - r * r1 * L1[mask] - r1 * L2[mask]

        for _ in range(GOLDEN_ROUNDS):
            lo = np.clip(rho - step, 0, 1)
            hi = np.clip(rho + step, 0, 1)
            fixed = rho1.copy()
            x, fx = _golden_max(lambda r, m: objective(r[m], fixed[m], m), lo, hi)
            up = fx > best
            rho = np.where(up, x, rho)
            best = np.where(up, fx, best)

            lo = np.clip(rho1 - step, 0, 1)
            hi = np.clip(rho1 + step, 0, 1)
            fixed = rho.copy()
            x, fx = _golden_max(lambda r1, m: objective(fixed[m], r1[m], m), lo, hi)
            up = fx > best
            rho1 = np.where(up, x, rho1)
            best = np.where(up, fx, best)
        return best, rho, rho1

    def exponents(self, t, tp, D, L1, L2, refine=True):
        e, r, r1 = self.coarse(t, tp, D, L1, L2)
        if refine and np.size(t):
            e, r, r1 = self.refine(t, tp, D, L1, L2, r, r1, e)
        return e, r, r1


def exponent_E(ctx: ExponentContext, t: int, tp: int, refine: bool = True) -> float:
    if t == 0 and tp == 0:
        return 0.0
    d1, d2 = ctx.offsets
    eb = ExponentBatch(ctx.Pprime, ctx.n)
    e, _, _ = eb.exponents([t], [tp], [d1 + d2], [ctx.ln_count1(tp)], [ctx.ln_count2(t)], refine)
    return float(e[0])


def ln_p_tt(ctx: ExponentContext, t: int, tp: int) -> float:
    return -ctx.n * exponent_E(ctx, t, tp)


def p_tt(ctx: ExponentContext, t: int, tp: int) -> float:
    return math.exp(ln_p_tt(ctx, t, tp))


def p_t(ctx: ExponentContext, t: int) -> float:
    """Sum of p_{t,t'} over T-bar_t; unclamped (may exceed 1)."""
    tps = set_Tbar_t(ctx.K_a, ctx.window, t, ctx.ln_m)
    if len(tps) == 0:
        return 0.0
    return math.exp(logsumexp([ln_p_tt(ctx, t, tp) for tp in tps]))
