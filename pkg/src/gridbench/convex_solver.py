"""Dense convex QP solver for the dispatch windows.

Solves

    minimize    0.5 * x' diag(q) x + c' x + const
    subject to  A x = b,   G x <= h,   lo <= x <= hi

with a Mehrotra predictor-corrector interior-point method. Variable bounds
are handled as diagonal terms rather than constraint rows. Inequality rows
flagged ``lazy`` are screened: they join the working set only when the
relaxed solution comes close to them, which keeps the Newton systems small
when most line-flow limits are slack. A final polish solves the KKT system
of the identified active set so that binding constraints hold to
round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import DimensionMismatchError, NonConvexError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max-iterations"

_STEP_FRACTION = 0.995
_STALL_FACTOR = 0.99
_SCREEN_MARGIN = 0.05


@dataclass(frozen=True)
class ConvexProgram:
    q: np.ndarray
    c: np.ndarray
    const: float = 0.0
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    lazy: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim == 2:
            if q.shape[0] != q.shape[1]:
                raise DimensionMismatchError(f"quadratic matrix must be square, got {q.shape}")
            if np.any(q - np.diag(np.diag(q))):
                raise NonConvexError("only diagonal quadratic objectives are supported")
            q = np.diag(q).copy()
        n = q.shape[0]
        c = np.asarray(self.c, dtype=float)
        if c.shape != (n,):
            raise DimensionMismatchError(f"linear term has shape {c.shape}, expected ({n},)")
        if np.any(q < 0):
            raise NonConvexError(f"negative quadratic entry at index {int(np.argmin(q))}")
        a_eq, b_eq = _rows(self.a_eq, self.b_eq, n, "equality")
        g, h = _rows(self.g, self.h, n, "inequality")
        lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float)
        hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float)
        if lo.shape != (n,) or hi.shape != (n,):
            raise DimensionMismatchError("bounds must have one entry per variable")
        if np.any(lo > hi):
            raise DimensionMismatchError(f"lower bound above upper bound at index {int(np.argmax(lo > hi))}")
        lazy = np.zeros(g.shape[0], dtype=bool) if self.lazy is None else np.asarray(self.lazy, dtype=bool)
        if lazy.shape != (g.shape[0],):
            raise DimensionMismatchError("lazy mask must have one entry per inequality row")
        for name, value in [("q", q), ("c", c), ("a_eq", a_eq), ("b_eq", b_eq), ("g", g),
                            ("h", h), ("lo", lo), ("hi", hi), ("lazy", lazy)]:
            object.__setattr__(self, name, value)
        object.__setattr__(self, "const", float(self.const))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * np.dot(self.q * x, x) + np.dot(self.c, x) + self.const)

    def violations(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Raw non-negative constraint violations of ``x`` by constraint family."""
        return {
            "equality": np.abs(self.a_eq @ x - self.b_eq),
            "inequality": np.maximum(self.g @ x - self.h, 0.0),
            "lower": np.maximum(np.where(np.isfinite(self.lo), self.lo - x, 0.0), 0.0),
            "upper": np.maximum(np.where(np.isfinite(self.hi), x - self.hi, 0.0), 0.0),
        }

    def worst_violation(self, x: np.ndarray) -> tuple[float, str, int]:
        worst = (0.0, "", -1)
        for kind, v in self.violations(x).items():
            if v.size and v.max() > worst[0]:
                worst = (float(v.max()), kind, int(np.argmax(v)))
        return worst


def _rows(mat, rhs, n, label):
    if mat is None:
        if rhs is not None and np.size(rhs):
            raise DimensionMismatchError(f"{label} rhs given without matrix")
        return np.zeros((0, n)), np.zeros(0)
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    if mat.shape[1] != n or rhs.shape != (mat.shape[0],):
        raise DimensionMismatchError(
            f"{label} block has shape {mat.shape} with rhs {rhs.shape}, expected (m, {n}) and (m,)"
        )
    return mat, rhs


@dataclass
class Solution:
    status: str
    x: np.ndarray
    objective_value: float
    kkt_residuals: dict[str, float]
    iterations: int = 0
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polished: bool = False
    worst_constraint: tuple[str, int] = ("", -1)
    max_violation: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Stacked:
    """General rows plus finite bounds viewed as one block ``Gs x <= hs``."""

    def __init__(self, g, h, lo, hi):
        self.g = g
        self.m_g = g.shape[0]
        self.li = np.flatnonzero(np.isfinite(lo))
        self.ui = np.flatnonzero(np.isfinite(hi))
        self.h = np.concatenate([h, -lo[self.li], hi[self.ui]])
        self.n = g.shape[1]
        self._sl = slice(self.m_g, self.m_g + self.li.size)
        self._su = slice(self.m_g + self.li.size, None)

    @property
    def m(self):
        return self.h.size

    def mul(self, x):
        return np.concatenate([self.g @ x, -x[self.li], x[self.ui]])

    def tmul(self, v):
        out = self.g.T @ v[: self.m_g]
        np.subtract.at(out, self.li, v[self._sl])
        np.add.at(out, self.ui, v[self._su])
        return out

    def gram(self, w):
        """Gs' diag(w) Gs."""
        g = self.g
        m = (g.T * w[: self.m_g]) @ g
        d = np.zeros(self.n)
        np.add.at(d, self.li, w[self._sl])
        np.add.at(d, self.ui, w[self._su])
        m[np.diag_indices_from(m)] += d
        return m

    def full_rows(self):
        rows = [self.g]
        if self.li.size:
            rows.append(-np.eye(self.n)[self.li])
        if self.ui.size:
            rows.append(np.eye(self.n)[self.ui])
        return np.vstack(rows)


def _initial_point(p: ConvexProgram, x0: Optional[np.ndarray]) -> np.ndarray:
    if x0 is not None:
        x = np.asarray(x0, dtype=float).copy()
    else:
        x = np.zeros(p.n)
        both = np.isfinite(p.lo) & np.isfinite(p.hi)
        x[both] = 0.5 * (p.lo[both] + p.hi[both])
    lo = np.where(np.isfinite(p.lo), p.lo, -np.inf)
    hi = np.where(np.isfinite(p.hi), p.hi, np.inf)
    return np.clip(x, lo, hi)


def _kkt_solve(m_mat, a, reg):
    """Solve [[M, A'], [A, 0]] [dx, dy] = [r1, r2] by a Schur complement."""
    fm = scipy.linalg.cho_factor(m_mat, check_finite=False)
    if a.shape[0] == 0:
        return lambda u, v: (scipy.linalg.cho_solve(fm, u, check_finite=False), np.zeros(0))
    m_inv_at = scipy.linalg.cho_solve(fm, a.T, check_finite=False)
    schur = a @ m_inv_at
    schur[np.diag_indices_from(schur)] += reg
    fs = scipy.linalg.cho_factor(schur, check_finite=False)

    def solve(u, v):
        mu = scipy.linalg.cho_solve(fm, u, check_finite=False)
        dy = scipy.linalg.cho_solve(fs, a @ mu - v, check_finite=False)
        return mu - m_inv_at @ dy, dy

    return solve


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _ipm(p: ConvexProgram, g, h, x0, tol_feas, tol_opt, max_iter, stall_iters):
    st = _Stacked(g, h, p.lo, p.hi)
    a, b, q, c = p.a_eq, p.b_eq, p.q, p.c
    m = st.m
    x = _initial_point(p, x0)
    s = np.maximum(st.h - st.mul(x), 1.0)
    z = np.ones(m)
    y = np.zeros(a.shape[0])
    scale_c = 1.0 + float(np.max(np.abs(c), initial=0.0))
    reg = 1e-10
    best_primal, last_improve = np.inf, 0
    status, it = MAX_ITERATIONS, 0
    for it in range(1, max_iter + 1):
        r_d = q * x + c + a.T @ y + st.tmul(z)
        r_e = a @ x - b
        r_s = st.mul(x) + s - st.h
        mu = float(s @ z) / m if m else 0.0
        primal = max(np.max(np.abs(r_e), initial=0.0), np.max(np.abs(r_s), initial=0.0))
        obj = p.objective(x)
        dual = float(np.max(np.abs(r_d), initial=0.0)) / (scale_c + float(np.max(np.abs(q * x), initial=0.0)))
        if primal <= 0.1 * tol_feas and dual <= tol_opt and mu <= tol_opt * (1.0 + abs(obj)) / max(m, 1):
            status = OPTIMAL
            break

        if primal < _STALL_FACTOR * best_primal:
            best_primal, last_improve = primal, it
        elif it - last_improve >= stall_iters and best_primal > 1e3 * tol_feas:
            status = INFEASIBLE
            break
        if _farkas(a, b, st, y, z, tol_feas):
            status = INFEASIBLE
            break

        w = z / s
        m_mat = st.gram(w)
        m_mat[np.diag_indices_from(m_mat)] += q + reg
        try:
            solve = _kkt_solve(m_mat, a, reg)
        except np.linalg.LinAlgError:
            reg *= 100.0
            if reg > 1e-2:
                break
            continue

        def direction(r_c):
            t = (z * r_s - r_c) / s
            dx, dy = solve(-r_d - st.tmul(t), -r_e)
            gdx = st.mul(dx)
            dz = t + w * gdx
            ds = -r_s - gdx
            return dx, dy, ds, dz

        r_c = s * z
        dx, dy, ds, dz = direction(r_c)
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m if m else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        r_c = s * z + ds * dz - sigma * mu
        dx, dy, ds, dz = direction(r_c)
        alpha = _STEP_FRACTION * min(_max_step(s, ds), _max_step(z, dz))
        alpha = min(alpha, 1.0)
        x = x + alpha * dx
        y = y + alpha * dy
        s = np.maximum(s + alpha * ds, 1e-300)
        z = np.maximum(z + alpha * dz, 1e-300)
    return status, it, x, y, z, s, st


def _farkas(a, b, st, y, z, tol_feas):
    """Detect a diverging dual ray proving primal infeasibility."""
    norm = max(np.max(np.abs(y), initial=0.0), np.max(z, initial=0.0))
    if norm < 1e8:
        return False
    yy, zz = y / norm, z / norm
    ray = np.max(np.abs(a.T @ yy + st.tmul(zz)), initial=0.0)
    return ray < 1e-6 and float(b @ yy + st.h @ zz) < -tol_feas


def _polish(p: ConvexProgram, x, z_all, s_all, st, tol_feas):
    """Re-solve the KKT system of the active set identified by the IPM."""
    active = z_all > s_all
    rows = st.full_rows()[active]
    n, me, ma = p.n, p.a_eq.shape[0], rows.shape[0]
    kkt = np.zeros((n + me + ma, n + me + ma))
    kkt[:n, :n] = np.diag(p.q)
    kkt[:n, n:n + me] = p.a_eq.T
    kkt[:n, n + me:] = rows.T
    kkt[n:n + me, :n] = p.a_eq
    kkt[n + me:, :n] = rows
    rhs = np.concatenate([-p.c, p.b_eq, st.h[active]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    if not np.all(np.isfinite(sol)):
        return None
    xp, yp, za = sol[:n], sol[n:n + me], sol[n + me:]
    if np.any(za < -1e-7 * (1.0 + np.abs(za).max(initial=0.0))):
        return None
    xp = np.clip(xp, p.lo, p.hi)
    if np.max(np.abs(p.a_eq @ xp - p.b_eq), initial=0.0) > 0.1 * tol_feas:
        return None
    if np.max(st.mul(xp) - st.h, initial=0.0) > 0.1 * tol_feas:
        return None
    zp = np.zeros_like(z_all)
    zp[active] = np.maximum(za, 0.0)
    return xp, yp, zp


def solve(
    p: ConvexProgram,
    tol_feas: float = 1e-6,
    tol_opt: float = 1e-6,
    max_iter: int = 300,
    *,
    x0: Optional[np.ndarray] = None,
    stall_iters: int = 100,
    polish: bool = True,
) -> Solution:
    """Minimize ``p``; see :class:`Solution` for the returned status values.

    ``x0`` seeds the interior point and decides which lazy rows are screened
    in from the start.
    """
    if not isinstance(p, ConvexProgram):
        raise TypeError("solve expects a ConvexProgram")
    x_ref = _initial_point(p, x0)
    working = ~p.lazy
    if p.lazy.any():
        working |= p.g @ x_ref - p.h > -_SCREEN_MARGIN * (1.0 + np.abs(p.h))

    total_iter = 0
    x_warm = x0
    while True:
        status, it, x, y, z_all, s_all, st = _ipm(
            p, p.g[working], p.h[working], x_warm, tol_feas, tol_opt,
            max_iter - total_iter, stall_iters,
        )
        total_iter += it
        if status != OPTIMAL:
            break
        slack = p.g @ x - p.h
        fresh = ~working & (slack > -_SCREEN_MARGIN * (1.0 + np.abs(p.h)))
        if not np.any(fresh & (slack > 0.1 * tol_feas)):
            break
        working |= fresh
        x_warm = x
        if total_iter >= max_iter:
            status = MAX_ITERATIONS
            break

    polished = False
    if status == OPTIMAL and polish:
        out = _polish(p, x, z_all, s_all, st, tol_feas)
        if out is not None and p.objective(out[0]) <= p.objective(x) + tol_opt * (1.0 + abs(p.objective(x))):
            (x, y, z_all), polished = out, True

    max_viol, kind, idx = p.worst_violation(x)
    if status == OPTIMAL and max_viol > tol_feas:
        status = MAX_ITERATIONS
    r_d = p.q * x + p.c + p.a_eq.T @ y + st.tmul(z_all)
    z = np.zeros(p.g.shape[0])
    z[np.flatnonzero(working)] = z_all[: st.m_g]
    residuals = {
        "primal": max_viol,
        "dual": float(np.max(np.abs(r_d), initial=0.0)),
        "complementarity": float(abs(z_all @ (st.mul(x) - st.h))),
    }
    return Solution(
        status=status,
        x=x,
        objective_value=p.objective(x),
        kkt_residuals=residuals,
        iterations=total_iter,
        y_eq=y,
        z_ineq=z,
        polished=polished,
        worst_constraint=(kind, idx),
        max_violation=max_viol,
    )
