"""Dense bounded-variable revised simplex for the quadrature-weight LPs.

Solves ``min c.x`` subject to two-sided row bounds ``lo <= A x <= hi``
and variable bounds ``lb <= x <= ub``.  Row ranges become bounded
slacks, phase 1 uses artificial variables, and pricing is Dantzig with
a Bland fallback after stalling (the weight LPs are near-degenerate:
row widths are tiny multiples of the training tolerance).  Vertex
solutions are returned, which is what produces sparse weights.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LpProblem:
    """min c.x  s.t.  lo_row <= A x <= hi_row,  lb <= x <= ub."""

    c: np.ndarray
    A: np.ndarray
    lo_row: np.ndarray
    hi_row: np.ndarray
    lb: np.ndarray = None
    ub: np.ndarray = None
    row_labels: list = field(default_factory=list)
    fallback: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.lo_row = np.asarray(self.lo_row, dtype=float)
        self.hi_row = np.asarray(self.hi_row, dtype=float)
        n = self.c.size
        if self.lb is None:
            self.lb = np.zeros(n)
        if self.ub is None:
            self.ub = np.full(n, np.inf)

    def residuals(self, x):
        """Row values and their violation of [lo, hi] (positive = violated)."""
        ax = self.A @ np.asarray(x, dtype=float)
        viol = np.maximum(self.lo_row - ax, ax - self.hi_row)
        return ax, viol

    def is_feasible(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lb - tol) or np.any(x > self.ub + tol):
            return False
        scale = 1.0 + np.max(np.abs(self.A), axis=1)
        _, viol = self.residuals(x)
        return bool(np.all(viol <= tol * scale))


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    status: str  # "optimal" | "iteration-limit" | "infeasible"
    n_iters: int


class _Tableau:
    """Revised simplex state over the equality form [A | I] z = hi."""

    def __init__(self, A, b, lb, ub):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.m, self.N = A.shape

    def solve(self, c, basis, x, tol, max_iters, bland_after=2000):
        A, b, lb, ub = self.A, self.b, self.lb, self.ub
        m, N = self.m, self.N
        basis = np.asarray(basis, dtype=int).copy()
        x = np.asarray(x, dtype=float).copy()
        B_inv = np.linalg.inv(A[:, basis])
        in_basis = np.zeros(N, dtype=bool)
        in_basis[basis] = True
        # nonbasic status by nearest bound; boxes can be arbitrarily tight,
        # so closeness-with-absolute-tolerance tests are not usable here
        at_upper = (
            ~in_basis & np.isfinite(ub) & (x > 0.5 * (np.where(np.isfinite(lb), lb, 0.0) + ub))
        )
        n_since_refactor = 0
        stall, last_obj = 0, np.inf
        for it in range(max_iters):
            if n_since_refactor >= 64:
                B_inv = np.linalg.inv(A[:, basis])
                nb = ~in_basis
                x[basis] = B_inv @ (b - A[:, nb] @ x[nb])
                n_since_refactor = 0
            y = c[basis] @ B_inv
            d = c - y @ A
            bland = stall >= bland_after
            enter, direction = self._price(d, in_basis, at_upper, ub, tol, bland)
            if enter < 0:
                x = self._refine(basis, x)
                return x, basis, "optimal", it
            w = B_inv @ A[:, enter]
            t, leave, flip, leave_to_upper = self._ratio(
                x, basis, enter, w, direction, tol
            )
            if t is None:
                return x, basis, "unbounded", it
            x[basis] -= direction * t * w
            x[enter] += direction * t
            if flip:
                at_upper[enter] = ~at_upper[enter]
            else:
                out = basis[leave]
                in_basis[out] = False
                at_upper[out] = leave_to_upper
                x[out] = ub[out] if leave_to_upper else lb[out]
                basis[leave] = enter
                in_basis[enter] = True
                at_upper[enter] = False
                piv = w[leave]
                row = B_inv[leave, :] / piv
                B_inv -= np.outer(w, row)
                B_inv[leave, :] = row
                n_since_refactor += 1
            obj = c @ x
            if obj < last_obj - tol * (1.0 + abs(last_obj)):
                stall = 0
                last_obj = obj
            else:
                stall += 1
        x = self._refine(basis, x)
        return x, basis, "iteration-limit", max_iters

    def _price(self, d, in_basis, at_upper, ub, tol, bland):
        down = ~in_basis & at_upper & (d > tol)
        up = ~in_basis & ~at_upper & (d < -tol)
        cand = np.flatnonzero(down | up)
        if cand.size == 0:
            return -1, 0.0
        if bland:
            j = cand[0]
        else:
            j = cand[np.argmax(np.abs(d[cand]))]
        return int(j), (-1.0 if at_upper[j] else 1.0)

    def _ratio(self, x, basis, enter, w, direction, tol):
        lb, ub = self.lb, self.ub
        xb = x[basis]
        delta = direction * w  # basic change is -delta * t
        limits = np.full(len(basis), np.inf)
        pos = delta > tol
        limits[pos] = (xb[pos] - lb[basis][pos]) / delta[pos]
        fin = (delta < -tol) & np.isfinite(ub[basis])
        limits[fin] = (xb[fin] - ub[basis][fin]) / delta[fin]
        t_basic = np.min(limits) if len(limits) else np.inf
        width = ub[enter] - lb[enter]
        t_flip = width if np.isfinite(width) else np.inf
        t = min(t_basic, t_flip)
        if not np.isfinite(t):
            return None, -1, False, False
        t = max(t, 0.0)
        if t_flip <= t_basic:
            return t, -1, True, False
        ties = np.flatnonzero(limits <= t + tol)
        leave = int(ties[np.argmin(basis[ties])])  # Bland tie-break
        return t, leave, False, bool(delta[leave] < 0.0)

    def _refine(self, basis, x):
        # fresh accurate solve for the basic values, one refinement pass
        A, b = self.A, self.b
        nb_mask = np.ones(self.N, dtype=bool)
        nb_mask[basis] = False
        rhs = b - A[:, nb_mask] @ x[nb_mask]
        B = A[:, basis]
        xb = np.linalg.solve(B, rhs)
        r = np.asarray(
            np.asarray(rhs, dtype=np.longdouble)
            - np.asarray(B, dtype=np.longdouble) @ np.asarray(xb, dtype=np.longdouble),
            dtype=float,
        )
        xb += np.linalg.solve(B, r)
        x = x.copy()
        x[basis] = xb
        return x


def solve_lp(lp, tol=1e-9, max_iters=20000):
    """Solve an :class:`LpProblem` to a vertex optimum.

    On iteration-limit the best feasible iterate is returned with a
    warning; if even that is infeasible, the problem's fallback vector
    is used.
    """
    m, n = lp.A.shape
    # scale rows to unit infinity norm
    row_scale = np.max(np.abs(lp.A), axis=1)
    row_scale[row_scale == 0.0] = 1.0
    A = lp.A / row_scale[:, None]
    hi = lp.hi_row / row_scale
    lo = lp.lo_row / row_scale

    Aeq = np.hstack([A, np.eye(m)])
    b = hi
    lb = np.concatenate([lp.lb, np.zeros(m)])
    ub = np.concatenate([lp.ub, hi - lo])

    # phase-1 crash basis: structural vars at a bound, slack basic where
    # its natural value already fits its box, artificial otherwise
    x0 = np.where(np.isfinite(lp.lb), lp.lb, 0.0)
    snat = b - A @ x0
    width = hi - lo
    s0 = np.clip(snat, 0.0, width)
    r = snat - s0
    sgn = np.where(r >= 0.0, 1.0, -1.0)
    Aeq1 = np.hstack([Aeq, np.diag(sgn)])
    lb1 = np.concatenate([lb, np.zeros(m)])
    ub1 = np.concatenate([ub, np.full(m, np.inf)])
    c1 = np.concatenate([np.zeros(n + m), np.ones(m)])
    x1 = np.concatenate([x0, s0, np.abs(r)])
    basis1 = np.where(r == 0.0, n + np.arange(m), n + m + np.arange(m))

    tab = _Tableau(Aeq1, b, lb1, ub1)
    x, basis, status, it1 = tab.solve(c1, basis1, x1, tol, max_iters)
    if c1 @ x > 1e-7 * (1.0 + np.abs(b).max()):
        warnings.warn("weight LP phase 1 did not reach feasibility")
        return LpSolution(
            x=lp.fallback.copy() if lp.fallback is not None else np.ones(n),
            objective=np.nan,
            status="infeasible",
            n_iters=it1,
        )
    # phase 2: freeze artificials at zero
    ub1[n + m :] = 0.0
    x[n + m :] = np.clip(x[n + m :], 0.0, 0.0)
    c2 = np.concatenate([lp.c, np.zeros(2 * m)])
    x, basis, status, it2 = tab.solve(c2, basis, x, tol, max_iters)
    xout = np.clip(x[:n], lp.lb, lp.ub)
    sol = LpSolution(
        x=xout, objective=float(lp.c @ xout), status=status, n_iters=it1 + it2
    )
    if status != "optimal":
        warnings.warn(f"weight LP stopped with status {status}")
        if not lp.is_feasible(xout) and lp.fallback is not None:
            sol = LpSolution(
                x=lp.fallback.copy(),
                objective=float(lp.c @ lp.fallback),
                status=status,
                n_iters=it1 + it2,
            )
    return sol
