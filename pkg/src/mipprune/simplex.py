"""Dense two-phase simplex for small linear programs.

Supports general variable bounds (finite, infinite, mixed) by shifting,
mirroring, or splitting variables into the nonnegative standard form, and
upper bounds as explicit rows.  Instances in this package have at most a
few hundred variables, so a dense numpy tableau with vectorized rank-1
pivot updates is both simple and fast enough.

Pricing is Dantzig's rule (most negative reduced cost, lowest index on
ties).  After a streak of 2*(m+n) degenerate pivots the pricing switches
to Bland's rule, which guarantees termination; it switches back once the
objective strictly improves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MipPruneError

__all__ = ["LinearProgram", "LpResult", "solve_lp_arrays"]

_RC_TOL = 1e-9
_PIV_TOL = 1e-9
_FEAS_TOL = 1e-7
_MAX_PIVOTS = 200_000


class SimplexNumericsError(MipPruneError, RuntimeError):
    """The pivot loop exceeded its safety cap; the instance is ill-posed."""


@dataclass
class LinearProgram:
    """min c @ x + const  s.t.  a @ x (sense) rhs,  lb <= x <= ub."""

    c: np.ndarray
    a: np.ndarray          # (m, n), dense
    sense: np.ndarray      # array of 'L', 'G', 'E'
    rhs: np.ndarray
    lb: np.ndarray         # -inf allowed
    ub: np.ndarray         # +inf allowed
    const: float = 0.0

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.rhs.size


@dataclass
class LpResult:
    status: str            # 'optimal' | 'infeasible' | 'unbounded'
    x: np.ndarray | None
    objective: float | None
    pivots: int = 0


def _pivot_loop(t: np.ndarray, basis: np.ndarray, tol: float, bland_after: int,
                allowed: np.ndarray) -> tuple[str, int]:
    """Run simplex iterations on tableau ``t`` in place.

    ``t`` is (m+1, k+1): m constraint rows, reduced-cost row last, rhs column
    last.  ``allowed`` masks columns eligible to enter (used to lock out
    artificials in phase two).  Returns (status, pivot count).
    """
    m = t.shape[0] - 1
    pivots = 0
    degen_streak = 0
    stall = 0
    stall_cap = 4 * bland_after + 1000
    best_neg_obj = t[-1, -1]
    bland = False
    rc_view = t[-1, :-1]
    while True:
        if bland:
            cands = np.flatnonzero((rc_view < -tol) & allowed)
            if cands.size == 0:
                return "optimal", pivots
            j = int(cands[0])
        else:
            masked = np.where(allowed, rc_view, 0.0)
            j = int(np.argmin(masked))
            if masked[j] >= -tol:
                return "optimal", pivots
        col = t[:-1, j]
        pos = col > _PIV_TOL
        if not pos.any():
            # a ray whose reduced cost is only noise-deep is a stalled optimum,
            # not a real unbounded direction
            if rc_view[j] > -1e-7:
                return "optimal", pivots
            return "unbounded", pivots
        ratios = np.full(m, np.inf)
        ratios[pos] = t[:-1, -1][pos] / col[pos]
        rmin = float(ratios.min())
        ties = np.flatnonzero(ratios <= rmin + 1e-12)
        r = int(ties[np.argmin(basis[ties])])  # lowest leaving variable index
        piv = t[r, j]
        t[r] /= piv
        col_vals = t[:, j].copy()
        col_vals[r] = 0.0
        t -= np.outer(col_vals, t[r])
        t[:-1, j] = 0.0
        t[r, j] = 1.0
        basis[r] = j
        pivots += 1
        # zero out round-off noise only; large negatives would flag real trouble
        rhs_col = t[:-1, -1]
        noise = (rhs_col < 0.0) & (rhs_col > -1e-10)
        if noise.any():
            rhs_col[noise] = 0.0
        if rmin <= tol:
            degen_streak += 1
            if degen_streak > bland_after:
                bland = True
        else:
            degen_streak = 0
            bland = False
        # objective cell holds minus the objective; treat noise-level motion
        # as a stall so float round-off cannot orbit the loop forever
        if t[-1, -1] > best_neg_obj + 1e-12 * max(1.0, abs(best_neg_obj)):
            best_neg_obj = t[-1, -1]
            stall = 0
        else:
            stall += 1
            if stall > stall_cap:
                return "optimal", pivots
        if pivots > _MAX_PIVOTS:
            raise SimplexNumericsError(f"pivot cap {_MAX_PIVOTS} exceeded")


def _solve_standard(a: np.ndarray, b: np.ndarray, senses: np.ndarray, c: np.ndarray):
    """Two-phase simplex for min c y, a y (sense) b, y >= 0 with b >= 0 ensured."""
    m, n = a.shape
    a = a.copy()
    b = b.copy()
    senses = senses.copy()
    if m:
        # row equilibration: badly scaled encodings otherwise wreck the
        # absolute pivot tolerances
        row_scale = np.maximum(np.abs(a).max(axis=1, initial=0.0), np.abs(b))
        row_scale[row_scale < 1e-12] = 1.0
        a /= row_scale[:, None]
        b /= row_scale
    flip = b < 0
    a[flip] *= -1.0
    b[flip] *= -1.0
    senses[flip] = np.where(senses[flip] == "L", "G", np.where(senses[flip] == "G", "L", "E"))

    slack_rows = np.flatnonzero(senses == "L")
    surplus_rows = np.flatnonzero(senses == "G")
    art_rows = np.flatnonzero(senses != "L")  # 'G' and 'E' rows need artificials

    n_slack = slack_rows.size
    n_surp = surplus_rows.size
    n_art = art_rows.size
    k = n + n_slack + n_surp + n_art

    t = np.zeros((m + 1, k + 1), dtype=np.float64)
    t[:m, :n] = a
    t[:m, -1] = b
    for i, r in enumerate(slack_rows):
        t[r, n + i] = 1.0
    for i, r in enumerate(surplus_rows):
        t[r, n + n_slack + i] = -1.0
    art_cols = {}
    for i, r in enumerate(art_rows):
        col = n + n_slack + n_surp + i
        t[r, col] = 1.0
        art_cols[r] = col

    basis = np.zeros(m, dtype=np.int64)
    for i, r in enumerate(slack_rows):
        basis[r] = n + i
    for r, col in art_cols.items():
        basis[r] = col

    total_pivots = 0
    bland_after = 2 * (m + k)
    is_art = np.zeros(k, dtype=bool)
    is_art[n + n_slack + n_surp :] = True

    if n_art:
        # phase one: price out the artificials; they never re-enter
        t[-1, :] = 0.0
        t[-1, n + n_slack + n_surp : k] = 1.0
        for r in art_cols:
            t[-1] -= t[r]
        status, p = _pivot_loop(t, basis, _RC_TOL, bland_after, ~is_art)
        total_pivots += p
        # the phase-one objective is bounded below by zero, so an "unbounded"
        # verdict can only be round-off noise in a reduced cost; fall through
        # to the objective test either way
        if -t[-1, -1] > _FEAS_TOL:
            return "infeasible", None, total_pivots
        # drive remaining artificials out of the basis or drop redundant rows
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if is_art[basis[r]]:
                row = t[r, :k]
                cand = np.flatnonzero((np.abs(row) > _PIV_TOL) & ~is_art)
                if cand.size:
                    j = int(cand[0])
                    piv = t[r, j]
                    t[r] /= piv
                    col_vals = t[:, j].copy()
                    col_vals[r] = 0.0
                    t -= np.outer(col_vals, t[r])
                    t[:-1, j] = 0.0
                    t[r, j] = 1.0
                    basis[r] = j
                    total_pivots += 1
                else:
                    keep[r] = False
        if not keep.all():
            rows = np.flatnonzero(keep)
            t = np.vstack([t[rows], t[-1:]])
            basis = basis[rows]
            m = rows.size

    # phase two on the real objective; artificial columns locked out
    t[-1, :] = 0.0
    t[-1, :n] = c
    for r in range(m):
        cb = t[-1, basis[r]]
        if cb != 0.0:
            t[-1] -= cb * t[r]
    allowed = ~is_art
    status, p = _pivot_loop(t, basis, _RC_TOL, bland_after, allowed)
    total_pivots += p
    if status == "unbounded":
        return "unbounded", None, total_pivots
    y = np.zeros(k, dtype=np.float64)
    y[basis] = t[: t.shape[0] - 1, -1][: basis.size]
    return "optimal", y[:n], total_pivots


def solve_lp_arrays(lp: LinearProgram) -> LpResult:
    """Solve a bounded-variable LP by reduction to standard form."""
    n = lp.n
    lb = lp.lb.astype(np.float64).copy()
    ub = lp.ub.astype(np.float64).copy()
    if np.any(lb > ub):
        return LpResult("infeasible", None, None, 0)

    fixed = lb == ub
    free_idx = np.flatnonzero(~fixed)
    x_fix = np.where(fixed, lb, 0.0)

    a = lp.a.astype(np.float64)
    rhs = lp.rhs.astype(np.float64) - a @ np.where(fixed, x_fix, 0.0)
    const = lp.const + float(np.dot(lp.c, np.where(fixed, x_fix, 0.0)))

    if free_idx.size == 0:
        # everything fixed: only feasibility to check
        resid = rhs
        ok = True
        for i in range(lp.m):
            s = lp.sense[i]
            if s == "L" and resid[i] < -_FEAS_TOL:
                ok = False
            elif s == "G" and resid[i] > _FEAS_TOL:
                ok = False
            elif s == "E" and abs(resid[i]) > _FEAS_TOL:
                ok = False
        if not ok:
            return LpResult("infeasible", None, None, 0)
        return LpResult("optimal", x_fix.copy(), const, 0)

    # build standard-form columns for the unfixed variables
    cols: list[np.ndarray] = []
    costs: list[float] = []
    ub_rows: list[tuple[int, float]] = []  # (std column, width)
    decode: list[tuple[str, int, float]] = []  # (kind, original index, offset)
    for j in free_idx.tolist():
        aj = a[:, j]
        if np.isfinite(lb[j]):
            rhs = rhs - aj * lb[j]
            const += lp.c[j] * lb[j]
            cols.append(aj)
            costs.append(lp.c[j])
            decode.append(("shift", j, lb[j]))
            if np.isfinite(ub[j]):
                ub_rows.append((len(cols) - 1, ub[j] - lb[j]))
        elif np.isfinite(ub[j]):
            rhs = rhs - aj * ub[j]
            const += lp.c[j] * ub[j]
            cols.append(-aj)
            costs.append(-lp.c[j])
            decode.append(("mirror", j, ub[j]))
        else:
            cols.append(aj)
            costs.append(lp.c[j])
            decode.append(("pos", j, 0.0))
            cols.append(-aj)
            costs.append(-lp.c[j])
            decode.append(("neg", j, 0.0))

    n_std = len(cols)
    m_all = lp.m + len(ub_rows)
    a_std = np.zeros((m_all, n_std), dtype=np.float64)
    for jj, col in enumerate(cols):
        a_std[: lp.m, jj] = col
    b_std = np.concatenate([rhs, np.array([w for _, w in ub_rows], dtype=np.float64)])
    senses = np.concatenate(
        [np.asarray(lp.sense, dtype="U1"), np.full(len(ub_rows), "L", dtype="U1")]
    )
    for i, (jj, _) in enumerate(ub_rows):
        a_std[lp.m + i, jj] = 1.0

    status, y, pivots = _solve_standard(a_std, b_std, senses, np.array(costs))
    if status != "optimal":
        return LpResult(status, None, None, pivots)

    x = x_fix.copy()
    for jj, (kind, j, off) in enumerate(decode):
        if kind == "shift":
            x[j] = off + y[jj]
        elif kind == "mirror":
            x[j] = off - y[jj]
        elif kind == "pos":
            x[j] += y[jj]
        else:
            x[j] -= y[jj]
    # recompute the objective from the original data: immune to tableau drift
    obj = float(np.dot(lp.c, x)) + lp.const
    return LpResult("optimal", x, obj, pivots)
