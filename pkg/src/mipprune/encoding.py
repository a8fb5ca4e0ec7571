"""Mixed-integer model of a ReLU network with neuron importance variables.

Variables, per batch point k:

* ``h_l_j_k``  continuous activation of unit j in layer l (post-ReLU for
  hidden layers, raw logits for the output layer, pooled values for pools);
* ``z_l_j_k``  binary on/off state of a ReLU unit;
* ``t_lse_k``  epigraph value for the log-sum-exp of the logits.

Shared across points:

* ``s_l_u``    importance score in [0, 1], one per prunable unit (hidden
  dense neuron or conv feature map), the quantity this package exists to
  compute;
* ``t_min``   epigraph variable for the smallest per-layer importance sum.

A ReLU unit with pre-activation bounds [L, U] and importance s satisfies

    h >= 0
    h + (1 - z) L <= w.h_prev + b - (1 - s) max(U, 0)
    h <= z U
    h >= w.h_prev + b - (1 - s) max(U, 0)

so an active unit outputs its affine value damped by (1 - s) max(U, 0) and
an inactive one outputs zero; units whose upper bound is never positive can
take s = 0 at no cost.  Bounds come from interval propagation per input
point.  Units with U <= 0 have z fixed to 0 and units with L >= 0 have z
fixed to 1 before solving.

The objective minimizes

    [ sum_l I_l  -  min_l I_l ] / (number of prunable units)
      + lambda * sum_k [ t_lse_k - y_k . h_out_k ]

with I_l the layer sum of (s + offset) for offset in {-2, -1, 0}.  The min
term is linearized through ``t_min <= I_l``; the log-sum-exp epigraph is
enforced by an outer-approximation cut pool seeded with one tangent cut at
the reference logits of every point.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .bounds import IntervalBounds
from .errors import InvalidArgument
from .network import Network, forward

__all__ = [
    "VarRef",
    "LinConstraint",
    "MipModel",
    "RESCALE_OFFSETS",
    "encode_network",
    "encode_maxpool",
    "add_lse_cut",
    "log_sum_exp",
    "softmax_probs",
]

RESCALE_OFFSETS = {"minus2": -2.0, "minus1": -1.0, "none": 0.0}

INF = float("inf")


def log_sum_exp(v: np.ndarray) -> float:
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def softmax_probs(v: np.ndarray) -> np.ndarray:
    m = np.max(v)
    e = np.exp(v - m)
    return e / e.sum()


@dataclass
class VarRef:
    idx: int
    name: str
    kind: str  # 'h', 'z', 's', 'm', 'w', 't_lse', 't_min'
    lb: float
    ub: float
    binary: bool = False
    layer: int | None = None
    unit: int | None = None
    point: int | None = None


@dataclass
class LinConstraint:
    coefs: dict[int, float]
    sense: str  # 'L' (<=), 'G' (>=), 'E' (=)
    rhs: float
    tag: str

    def violation(self, x: np.ndarray) -> float:
        lhs = sum(c * x[j] for j, c in self.coefs.items())
        if self.sense == "L":
            return max(0.0, lhs - self.rhs)
        if self.sense == "G":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


class LinExpr:
    """Small affine-expression helper used while emitting constraints."""

    __slots__ = ("coefs", "const")

    def __init__(self, coefs: dict[int, float] | None = None, const: float = 0.0):
        self.coefs = dict(coefs) if coefs else {}
        self.const = const

    @staticmethod
    def var(idx: int, coef: float = 1.0) -> "LinExpr":
        return LinExpr({idx: coef})

    @staticmethod
    def constant(v: float) -> "LinExpr":
        return LinExpr(None, v)

    def add(self, other: "LinExpr", scale: float = 1.0) -> "LinExpr":
        for j, c in other.coefs.items():
            self.coefs[j] = self.coefs.get(j, 0.0) + scale * c
        self.const += scale * other.const
        return self

    def add_term(self, idx: int, coef: float) -> "LinExpr":
        self.coefs[idx] = self.coefs.get(idx, 0.0) + coef
        return self

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[j] for j, c in self.coefs.items())


@dataclass
class MipModel:
    """Variables, constraints, objective, and cut pool of one encoding."""

    variables: list[VarRef] = field(default_factory=list)
    constraints: list[LinConstraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    objective_const: float = 0.0
    lam: float = 5.0
    rescale: str = "minus2"
    epsilon: float = 0.0
    labels: np.ndarray | None = None
    n_points: int = 0
    # bookkeeping filled by encode_network
    logit_vars: list[list[int]] = field(default_factory=list)   # per point
    tlse_vars: list[int] = field(default_factory=list)          # per point
    s_vars: dict[tuple[int, int], int] = field(default_factory=dict)
    prunable: list[tuple[int, int]] = field(default_factory=list)
    reference_assignment: np.ndarray | None = None
    batch_digest: str = ""
    cut_anchors: list[tuple[int, np.ndarray]] = field(default_factory=list)

    # -- construction ------------------------------------------------------

    def add_var(self, name: str, kind: str, lb: float, ub: float, binary: bool = False,
                layer: int | None = None, unit: int | None = None,
                point: int | None = None) -> int:
        idx = len(self.variables)
        self.variables.append(VarRef(idx, name, kind, lb, ub, binary, layer, unit, point))
        return idx

    def add_constraint(self, expr: LinExpr, sense: str, rhs: float, tag: str) -> int:
        coefs = {j: c for j, c in expr.coefs.items() if c != 0.0}
        if not coefs:
            raise InvalidArgument(f"constraint {tag!r} has no variables")
        if not all(np.isfinite(list(coefs.values()))) or not np.isfinite(rhs - expr.const):
            raise InvalidArgument(f"constraint {tag!r} has non-finite data")
        self.constraints.append(LinConstraint(coefs, sense, rhs - expr.const, tag))
        return len(self.constraints) - 1

    def add_objective_term(self, idx: int, coef: float) -> None:
        self.objective[idx] = self.objective.get(idx, 0.0) + coef

    # -- evaluation --------------------------------------------------------

    def n_binary(self) -> int:
        return sum(1 for v in self.variables if v.binary)

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective_const + sum(c * x[j] for j, c in self.objective.items()))

    def check_assignment(self, x: np.ndarray, tol: float = 1e-6) -> list[str]:
        """All violated bounds/constraints, worst first is not guaranteed."""
        bad: list[str] = []
        for v in self.variables:
            if x[v.idx] < v.lb - tol or x[v.idx] > v.ub + tol:
                bad.append(f"bound of {v.name}: {x[v.idx]!r} not in [{v.lb!r}, {v.ub!r}]")
            if v.binary and min(abs(x[v.idx]), abs(x[v.idx] - 1.0)) > tol:
                bad.append(f"binary {v.name} is fractional: {x[v.idx]!r}")
        for i, con in enumerate(self.constraints):
            v = con.violation(x)
            if v > tol:
                bad.append(f"constraint {i} [{con.tag}] violated by {v!r}")
        return bad

    def true_objective(self, x: np.ndarray) -> float:
        """Objective with the epigraph variables replaced by their exact values."""
        y = x.copy()
        for k, t_idx in enumerate(self.tlse_vars):
            logits = np.array([y[j] for j in self.logit_vars[k]])
            y[t_idx] = log_sum_exp(logits)
        return self.objective_value(y)

    def decompose(self, x: np.ndarray) -> tuple[float, float]:
        """(sparsity term, softmax term) recomputed from first principles."""
        offset = RESCALE_OFFSETS[self.rescale]
        n_prunable = sum(n for _, n in self.prunable)
        layer_sums = []
        for layer, n in self.prunable:
            layer_sums.append(
                sum(x[self.s_vars[(layer, u)]] + offset for u in range(n))
            )
        sparsity = (sum(layer_sums) - min(layer_sums)) / n_prunable
        soft = 0.0
        for k in range(self.n_points):
            logits = np.array([x[j] for j in self.logit_vars[k]])
            soft += log_sum_exp(logits) - float(logits[self.labels[k]])
        return sparsity, soft

    def scores(self, x: np.ndarray) -> dict[tuple[int, int], float]:
        """Importance scores clamped into [0, 1]."""
        return {
            key: min(1.0, max(0.0, float(x[idx]))) for key, idx in self.s_vars.items()
        }


def encode_maxpool(model: MipModel, input_vars: list[int], uppers, layer: int, group: int,
                   point: int) -> tuple[int, list[int], list[int]]:
    """Max of ``input_vars`` via selection binaries and product variables.

    Exactly one selector m_i is on; the output x dominates every input and
    is capped by the selected input through the product w_i = h_i m_i,
    linearized with the standard envelope over [0, U_i].  Returns the output
    variable, the selector variables, and the product variables.
    """
    uppers = [float(u) for u in uppers]
    if len(uppers) != len(input_vars):
        raise InvalidArgument("one upper bound per pooled input is required")
    if not all(np.isfinite(uppers)):
        raise InvalidArgument("pooled inputs need finite upper bounds")
    lbs = [model.variables[j].lb for j in input_vars]
    u_pool = max(uppers)  # deactivated selectors must not cap the pooled max
    out = model.add_var(f"h_{layer}_{group}_{point}", "h", max(lbs), u_pool,
                        layer=layer, unit=group, point=point)
    m_vars: list[int] = []
    w_vars: list[int] = []
    choose = LinExpr()
    for i, (hj, u) in enumerate(zip(input_vars, uppers)):
        m = model.add_var(f"m_{layer}_{group}_{i}_{point}", "m", 0.0, 1.0, binary=True,
                          layer=layer, unit=group, point=point)
        w = model.add_var(f"w_{layer}_{group}_{i}_{point}", "w", 0.0, max(u, 0.0),
                          layer=layer, unit=group, point=point)
        m_vars.append(m)
        w_vars.append(w)
        choose.add_term(m, 1.0)
        # x >= h_i
        model.add_constraint(LinExpr({out: 1.0, hj: -1.0}), "G", 0.0, "maxpool_ge")
        # x <= w_i + U_pool (1 - m_i): binding only for the selected input
        model.add_constraint(LinExpr({out: 1.0, w: -1.0, m: u_pool}), "L", u_pool,
                             "maxpool_select")
        # product envelope: w_i <= U_i m_i ; w_i <= h_i ; w_i >= h_i - U_i (1 - m_i)
        model.add_constraint(LinExpr({w: 1.0, m: -u}), "L", 0.0, "maxpool_prod_cap")
        model.add_constraint(LinExpr({w: 1.0, hj: -1.0}), "L", 0.0, "maxpool_prod_le")
        model.add_constraint(LinExpr({w: 1.0, hj: -1.0, m: -u}), "G", -u, "maxpool_prod_ge")
    model.add_constraint(choose, "E", 1.0, "maxpool_choose")
    return out, m_vars, w_vars


def add_lse_cut(model: MipModel, point: int, anchor: np.ndarray) -> int:
    """Tangent cut t_lse_k >= lse(anchor) + softmax(anchor) . (h - anchor).

    A supporting hyperplane of the convex log-sum-exp, so the cut never
    excludes a point satisfying the true epigraph.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    if not np.all(np.isfinite(anchor)):
        raise InvalidArgument("cut anchor must be finite")
    sig = softmax_probs(anchor)
    rhs = log_sum_exp(anchor) - float(np.dot(sig, anchor))
    expr = LinExpr({model.tlse_vars[point]: 1.0})
    for c, hj in enumerate(model.logit_vars[point]):
        expr.add_term(hj, -float(sig[c]))
    idx = model.add_constraint(expr, "G", rhs, "lse_cut")
    model.cut_anchors.append((point, anchor.copy()))
    return idx


def _batch_digest(xs: np.ndarray, ys: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(xs, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(ys, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def encode_network(net: Network, xs: np.ndarray, ys: np.ndarray,
                   bounds: list[IntervalBounds], lam: float = 5.0,
                   rescale: str = "minus2") -> MipModel:
    """Build the full model for a batch of inputs with one-hot labels ``ys``.

    ``bounds[k]`` must hold the interval bounds of input k.  Inputs enter as
    constants, not variables; epsilon only widens the bounds.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise InvalidArgument("batch must be a non-empty (n, d) array")
    if ys.shape != (xs.shape[0],):
        raise InvalidArgument("labels must be one per batch point")
    if lam <= 0:
        raise InvalidArgument("lambda must be positive")
    if rescale not in RESCALE_OFFSETS:
        raise InvalidArgument(f"unknown rescale mode {rescale!r}")
    if len(bounds) != xs.shape[0]:
        raise InvalidArgument("one IntervalBounds per batch point is required")
    for k, b in enumerate(bounds):
        if len(b.pre_lo) != len(net.layers):
            raise InvalidArgument(f"bounds for point {k} do not cover every layer")
    net.validate()
    n_classes = net.n_classes
    if ys.min() < 0 or ys.max() >= n_classes:
        raise InvalidArgument("label out of range for the network's logit count")

    model = MipModel(lam=float(lam), rescale=rescale, epsilon=bounds[0].epsilon,
                     labels=ys.copy(), n_points=xs.shape[0])
    model.prunable = net.prunable_layers()
    model.batch_digest = _batch_digest(xs, ys)
    offset = RESCALE_OFFSETS[rescale]
    n_prunable = sum(n for _, n in model.prunable)
    if n_prunable == 0:
        raise InvalidArgument("network has no prunable units")

    # shared importance variables
    for layer, n_units in model.prunable:
        for u in range(n_units):
            s = model.add_var(f"s_{layer}_{u}", "s", 0.0, 1.0, layer=layer, unit=u)
            model.s_vars[(layer, u)] = s
            model.add_objective_term(s, 1.0 / n_prunable)
    model.objective_const += offset

    t_min = model.add_var("t_min", "t_min", -INF, INF)
    model.add_objective_term(t_min, -1.0 / n_prunable)
    for layer, n_units in model.prunable:
        expr = LinExpr({t_min: 1.0})
        for u in range(n_units):
            expr.add_term(model.s_vars[(layer, u)], -1.0)
        model.add_constraint(expr, "L", offset * n_units, "min_layer_epigraph")

    prunable_set = dict(model.prunable)
    reference: dict[int, float] = {}

    for k in range(xs.shape[0]):
        bnd = bounds[k]
        trace = forward(net, xs[k])
        prev: list[LinExpr] = [LinExpr.constant(float(v)) for v in xs[k]]
        for l_idx, spec in enumerate(net.layers):
            if spec.kind in ("dense", "conv"):
                relu = spec.activation == "relu"
                n_out = spec.weight.shape[0]
                cur: list[LinExpr] = []
                for j in range(n_out):
                    lo = float(bnd.pre_lo[l_idx][j])
                    hi = float(bnd.pre_hi[l_idx][j])
                    psum = LinExpr.constant(float(spec.bias[j]))
                    row = spec.weight[j]
                    for i in np.flatnonzero(row != 0.0):
                        psum.add(prev[int(i)], float(row[int(i)]))
                    if relu:
                        max_u = max(hi, 0.0)
                        h = model.add_var(f"h_{l_idx}_{j}_{k}", "h", 0.0, max_u,
                                          layer=l_idx, unit=j, point=k)
                        if hi <= 0.0:
                            z_lb = z_ub = 0.0
                        elif lo >= 0.0:
                            z_lb = z_ub = 1.0
                        else:
                            z_lb, z_ub = 0.0, 1.0
                        z = model.add_var(f"z_{l_idx}_{j}_{k}", "z", z_lb, z_ub, binary=True,
                                          layer=l_idx, unit=j, point=k)
                        if l_idx in prunable_set:
                            unit = j if spec.kind == "dense" else j // (
                                spec.conv.output_h * spec.conv.output_w
                            )
                            s_idx = model.s_vars[(l_idx, unit)]
                        else:
                            s_idx = None
                        # h + (1 - z) L <= psum - (1 - s) max(U, 0)
                        up = LinExpr({h: 1.0, z: -lo}, lo).add(psum, -1.0)
                        if s_idx is not None and max_u != 0.0:
                            up.add_term(s_idx, -max_u)
                            up.const += max_u
                        model.add_constraint(up, "L", 0.0, "relu_upper_on")
                        # h <= z U
                        model.add_constraint(LinExpr({h: 1.0, z: -hi}), "L", 0.0, "relu_cap")
                        # h >= psum - (1 - s) max(U, 0)
                        low = LinExpr({h: 1.0}).add(psum, -1.0)
                        if s_idx is not None and max_u != 0.0:
                            low.add_term(s_idx, -max_u)
                            low.const += max_u
                        model.add_constraint(low, "G", 0.0, "relu_lower_on")
                        cur.append(LinExpr.var(h))
                        psum_obs = float(trace.pre[l_idx][j])
                        z_obs = 1.0 if psum_obs > 0.0 else 0.0
                        if z_lb == z_ub:
                            z_obs = z_lb
                        reference[h] = float(trace.post[l_idx][j])
                        reference[z] = z_obs
                    else:
                        h = model.add_var(f"h_{l_idx}_{j}_{k}", "h", lo, hi,
                                          layer=l_idx, unit=j, point=k)
                        eq = LinExpr({h: 1.0}).add(psum, -1.0)
                        model.add_constraint(eq, "E", 0.0, "affine_out")
                        cur.append(LinExpr.var(h))
                        reference[h] = float(trace.post[l_idx][j])
                prev = cur
            elif spec.kind == "avgpool":
                window = spec.pool_window
                n_groups = len(prev) // window
                cur = []
                for g in range(n_groups):
                    lo = float(bnd.pre_lo[l_idx][g])
                    hi = float(bnd.pre_hi[l_idx][g])
                    out = model.add_var(f"h_{l_idx}_{g}_{k}", "h", lo, hi,
                                        layer=l_idx, unit=g, point=k)
                    eq = LinExpr({out: 1.0})
                    for i in range(window):
                        eq.add(prev[g * window + i], -1.0 / window)
                    model.add_constraint(eq, "E", 0.0, "avgpool_mean")
                    cur.append(LinExpr.var(out))
                    reference[out] = float(trace.post[l_idx][g])
                prev = cur
            elif spec.kind == "maxpool":
                window = spec.pool_window
                n_groups = len(prev) // window
                cur = []
                for g in range(n_groups):
                    member_vars = []
                    uppers = []
                    for i in range(window):
                        e = prev[g * window + i]
                        if len(e.coefs) != 1 or e.const != 0.0:
                            raise InvalidArgument(
                                "max pooling directly over the input layer is not supported"
                            )
                        member_vars.append(next(iter(e.coefs)))
                        uppers.append(float(bnd.post_hi[l_idx - 1][g * window + i]))
                    out, m_vars, w_vars = encode_maxpool(model, member_vars, uppers, l_idx, g, k)
                    cur.append(LinExpr.var(out))
                    vals = trace.post[l_idx - 1][g * window : (g + 1) * window]
                    best = int(np.argmax(vals))
                    reference[out] = float(trace.post[l_idx][g])
                    for i, (m, w) in enumerate(zip(m_vars, w_vars)):
                        reference[m] = 1.0 if i == best else 0.0
                        reference[w] = float(vals[i]) if i == best else 0.0
                prev = cur
            else:  # flatten
                pass
        model.logit_vars.append([next(iter(e.coefs)) for e in prev])
        t = model.add_var(f"t_lse_{k}", "t_lse", -INF, INF, point=k)
        model.tlse_vars.append(t)
        model.add_objective_term(t, lam)
        logits_obs = trace.logits
        reference[t] = log_sum_exp(logits_obs)
        model.add_objective_term(model.logit_vars[k][int(ys[k])], -lam)

    # importance defaults and epigraph reference values
    for key, idx in model.s_vars.items():
        reference[idx] = 1.0
    layer_consts = [n * (1.0 + offset) for _, n in model.prunable]
    reference[t_min] = min(layer_consts)

    for k in range(xs.shape[0]):
        anchor = np.array([reference[j] for j in model.logit_vars[k]])
        add_lse_cut(model, k, anchor)

    x_ref = np.zeros(len(model.variables), dtype=np.float64)
    for idx, val in reference.items():
        x_ref[idx] = val
    model.reference_assignment = x_ref
    return model
