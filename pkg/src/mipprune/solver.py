"""Exact solving of the encoded models: LP relaxations, best-first branch
and bound over the binaries, and an outer-approximation loop that tightens
the log-sum-exp epigraph at integer-feasible candidates.

Everything is deterministic: node selection breaks ties by insertion order,
branching picks the most fractional binary (lowest id on ties), and the
underlying simplex is itself deterministic.  Distinct solves share no
state, so callers may run several in parallel threads.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .encoding import MipModel, add_lse_cut, log_sum_exp
from .errors import InvalidArgument, NoIncumbent
from .simplex import LinearProgram, LpResult, solve_lp_arrays

__all__ = ["SolveConfig", "Solution", "solve_lp", "solve_mip", "warm_start"]


@dataclass
class SolveConfig:
    gap_tol: float = 1e-6
    oa_tol: float = 1e-6
    int_tol: float = 1e-6
    node_limit: int = 100_000
    time_limit: float = float("inf")   # seconds
    max_cut_rounds: int = 50
    log_path: str | None = None


@dataclass
class Solution:
    """Best assignment found, with proof-of-optimality bookkeeping."""

    values: np.ndarray
    objective: float
    gap: float
    node_count: int
    cut_rounds: int
    wall_time: float
    lp_pivots: int
    status: str                      # 'optimal' | 'limit'
    log_lines: list[str] = field(default_factory=list)


def _materialize(model: MipModel, fixings: dict[int, float]) -> LinearProgram:
    n = len(model.variables)
    m = len(model.constraints)
    a = np.zeros((m, n), dtype=np.float64)
    rhs = np.zeros(m, dtype=np.float64)
    sense = np.empty(m, dtype="U1")
    for i, con in enumerate(model.constraints):
        for j, c in con.coefs.items():
            a[i, j] = c
        rhs[i] = con.rhs
        sense[i] = con.sense
    lb = np.array([v.lb for v in model.variables], dtype=np.float64)
    ub = np.array([v.ub for v in model.variables], dtype=np.float64)
    for j, val in fixings.items():
        lb[j] = val
        ub[j] = val
    c = np.zeros(n, dtype=np.float64)
    for j, coef in model.objective.items():
        c[j] = coef
    return LinearProgram(c=c, a=a, sense=sense, rhs=rhs, lb=lb, ub=ub,
                         const=model.objective_const)


def solve_lp(model: MipModel, fixings: dict[int, float] | None = None) -> LpResult:
    """Solve the continuous relaxation (binaries relaxed into their boxes)."""
    return solve_lp_arrays(_materialize(model, fixings or {}))


def warm_start(model: MipModel, assignment: np.ndarray, tol: float = 1e-6) -> float:
    """Validate a feasible assignment and return its true objective.

    Raises with the first violated constraint when the assignment is not
    feasible, so a bad warm start fails loudly instead of corrupting the
    incumbent.
    """
    assignment = np.asarray(assignment, dtype=np.float64)
    if assignment.size != len(model.variables):
        raise InvalidArgument("assignment length does not match the model")
    bad = model.check_assignment(assignment, tol)
    if bad:
        raise InvalidArgument(f"warm start rejected: {bad[0]}")
    return model.true_objective(assignment)


def _fractional_binaries(model: MipModel, x: np.ndarray, int_tol: float) -> list[tuple[float, int]]:
    out = []
    for v in model.variables:
        if not v.binary or v.lb == v.ub:
            continue
        frac = abs(x[v.idx] - round(x[v.idx]))
        if frac > int_tol:
            out.append((frac, v.idx))
    return out


def _lse_violations(model: MipModel, x: np.ndarray) -> list[tuple[int, float, np.ndarray]]:
    """(point, violation, logits) wherever t_lse sits below the true value."""
    out = []
    for k, t_idx in enumerate(model.tlse_vars):
        logits = np.array([x[j] for j in model.logit_vars[k]])
        true = log_sum_exp(logits)
        if true - x[t_idx] > 0:
            out.append((k, true - x[t_idx], logits))
    return out


def solve_mip(model: MipModel, config: SolveConfig | None = None,
              warm: np.ndarray | None = None) -> Solution:
    """Best-first branch and bound with most-fractional branching.

    At every integer-feasible LP optimum the log-sum-exp epigraph is checked;
    a violated point gets a new tangent cut and the node is re-solved, up to
    ``max_cut_rounds`` rounds across the whole solve.  Incumbent objectives
    are always evaluated with the exact log-sum-exp, so the reported value
    decomposes into sparsity + lambda * softmax without cut slack.
    """
    cfg = config or SolveConfig()
    t0 = time.perf_counter()
    log: list[str] = []
    total_pivots = 0
    cut_rounds = 0
    node_count = 0

    incumbent: np.ndarray | None = None
    incumbent_obj = float("inf")
    if warm is not None:
        incumbent_obj = warm_start(model, warm)
        incumbent = np.asarray(warm, dtype=np.float64).copy()
        # store the exact epigraph values alongside the warm assignment
        for k, t_idx in enumerate(model.tlse_vars):
            logits = np.array([incumbent[j] for j in model.logit_vars[k]])
            incumbent[t_idx] = log_sum_exp(logits)

    counter = 0
    heap: list[tuple[float, int, dict[int, float]]] = []

    res = solve_lp(model, {})
    total_pivots += res.pivots
    if res.status == "infeasible":
        if incumbent is not None:
            return Solution(incumbent, incumbent_obj, 0.0, 0, 0,
                            time.perf_counter() - t0, total_pivots, "optimal", log)
        raise NoIncumbent("root relaxation is infeasible")
    if res.status == "unbounded":
        raise NoIncumbent("root relaxation is unbounded")
    heapq.heappush(heap, (res.objective, counter, {}))
    counter += 1

    def current_gap(best_bound: float) -> float:
        if incumbent_obj == float("inf"):
            return float("inf")
        return max(0.0, incumbent_obj - best_bound) / max(1.0, abs(incumbent_obj))

    best_bound = res.objective
    status = "optimal"

    def node_line(kind: str) -> None:
        log.append(
            f"node {node_count} bound {best_bound!r} "
            f"incumbent {incumbent_obj!r} gap {current_gap(best_bound)!r} {kind}"
        )

    while heap:
        if node_count >= cfg.node_limit or (time.perf_counter() - t0) > cfg.time_limit:
            status = "limit"
            break
        bound, _, fixings = heapq.heappop(heap)
        best_bound = bound  # best-first: the popped node carries the smallest bound
        if incumbent is not None and bound >= incumbent_obj - cfg.gap_tol * max(1.0, abs(incumbent_obj)):
            # every open node is within tolerance of the incumbent
            break
        node_count += 1
        res = solve_lp(model, fixings)
        total_pivots += res.pivots
        if res.status == "infeasible":
            node_line("pruned-infeasible")
            continue
        if res.status == "unbounded":
            raise NoIncumbent("node relaxation is unbounded")
        x = res.x
        obj = res.objective
        if incumbent is not None and obj >= incumbent_obj - cfg.gap_tol * max(1.0, abs(incumbent_obj)):
            node_line("pruned-bound")
            continue
        fracs = _fractional_binaries(model, x, cfg.int_tol)
        if not fracs:
            # integer feasible: enforce the epigraph before accepting
            viols = _lse_violations(model, x)
            worst = max((v for _, v, _ in viols), default=0.0)
            if worst > cfg.oa_tol and cut_rounds < cfg.max_cut_rounds:
                for k, _, logits in viols:
                    add_lse_cut(model, k, logits)
                cut_rounds += 1
                heapq.heappush(heap, (obj, counter, fixings))
                counter += 1
                node_line("cut-round")
                continue
            candidate = x.copy()
            for k, t_idx in enumerate(model.tlse_vars):
                logits = np.array([candidate[j] for j in model.logit_vars[k]])
                candidate[t_idx] = log_sum_exp(logits)
            cand_obj = model.objective_value(candidate)
            if cand_obj < incumbent_obj:
                incumbent = candidate
                incumbent_obj = cand_obj
            node_line("integer")
            continue
        # branch on the most fractional binary, lowest id on ties
        fracs.sort(key=lambda t: (-round(t[0], 12), t[1]))
        _, j = fracs[0]
        for val in (0.0, 1.0):
            child = dict(fixings)
            child[j] = val
            heapq.heappush(heap, (obj, counter, child))
            counter += 1
        node_line(f"branch {j}")

    if incumbent is None:
        raise NoIncumbent(f"no feasible solution within limits (nodes={node_count})")
    if not heap and status == "optimal":
        best_bound = incumbent_obj
    gap = current_gap(best_bound)
    if gap > cfg.gap_tol:
        status = "limit"
    sol = Solution(
        values=incumbent, objective=incumbent_obj, gap=gap, node_count=node_count,
        cut_rounds=cut_rounds, wall_time=time.perf_counter() - t0,
        lp_pivots=total_pivots, status=status, log_lines=log,
    )
    if cfg.log_path:
        with open(cfg.log_path, "w", encoding="ascii") as fh:
            fh.write("\n".join(log) + ("\n" if log else ""))
    return sol
