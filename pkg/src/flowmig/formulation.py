"""Single-interval flow migration problem and its mixed-integer conic form.

:func:`build_p1` assembles the original problem for one interval,
:func:`objective_value` and :func:`check_feasibility` evaluate a candidate
:class:`Solution` against it, and :func:`transform_to_miqcp` produces the
solver-ready :class:`MiqcpModel`: linear rows, rotated-cone triples
``a * b >= c**2`` and binaries, with the delay definition relaxed into a cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from .model import (
    Hop,
    Instance,
    InstanceError,
    MappingDelta,
    MappingState,
    _delta,
    link_endpoints,
    validate_mapping,
)

Slot = tuple[str, int, str]  # (SFC id, hop index, VNFI id)


@dataclass(frozen=True)
class Weights:
    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float = 0.0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            val = getattr(self, name)
            if not (val >= 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be a finite nonnegative number, got {val}")


@dataclass(frozen=True)
class ProblemP1:
    instance: Instance
    interval: int
    prev: MappingState
    rates: Mapping[str, float]
    weights: Weights
    soft_delay: bool = False
    margin_sfcs: frozenset[str] = frozenset()

    @cached_property
    def slots(self) -> list[Slot]:
        """Every (r, h, i) with i a candidate of hop (r, h), in canonical order."""
        inst = self.instance
        return [(r, h, i) for r, h in inst.hops for i in inst.candidates(r, h)]

    @property
    def hops(self) -> list[Hop]:
        return self.instance.hops

    def capacity_rate(self, r: str, i: str) -> float:
        """Largest processing rate (packet/s) VNFI ``i`` can give SFC ``r``."""
        return self.instance.vnfi(i).capacity_cycles / self.instance.sfc(r).density[i]

    @property
    def d_min(self) -> float:
        """Positive floor standing in for the strict ``d > 0``."""
        inst = self.instance
        top = max(self.capacity_rate(r, i) for r, _, i in self.slots)
        return 1.0 / (top + inst.epsilon) * 1e-3


def build_p1(
    inst: Instance,
    prev: MappingState,
    rates: Mapping[str, float],
    weights: Weights,
    soft_delay: bool = False,
    margin_sfcs=None,
) -> ProblemP1:
    """Assemble the problem for interval ``prev.interval + 1``.

    With ``soft_delay`` each SFC in ``margin_sfcs`` (all SFCs when ``None``)
    gets a penalised deadline margin; the others keep a hard deadline.
    """
    validate_mapping(inst, prev)
    problems = []
    clean = {}
    for r in inst.sfc_ids:
        if r not in rates:
            problems.append(f"missing rate for SFC {r!r}")
            continue
        lam = float(rates[r])
        if not (lam >= 0 and math.isfinite(lam)):
            problems.append(f"rate for SFC {r!r} must be finite and >= 0")
        clean[r] = lam
    if soft_delay:
        margins = frozenset(inst.sfc_ids if margin_sfcs is None else map(str, margin_sfcs))
        unknown = margins - set(inst.sfc_ids)
        if unknown:
            problems.append(f"margins requested for unknown SFCs {sorted(unknown)}")
    else:
        margins = frozenset()
    if problems:
        raise InstanceError(problems)
    return ProblemP1(
        instance=inst,
        interval=prev.interval + 1,
        prev=prev,
        rates=clean,
        weights=weights,
        soft_delay=soft_delay,
        margin_sfcs=margins,
    )


# ---------------------------------------------------------------- solutions


@dataclass(frozen=True)
class ObjectiveBreakdown:
    total: float
    load: float
    migration: float
    extra_edge: float
    margin: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.total, self.load, self.migration, self.extra_edge, self.margin)


@dataclass(frozen=True)
class Solution:
    cur: MappingState
    mu: Mapping[Slot, float]
    d: Mapping[Slot, float]
    eta: float
    delta: Mapping[str, float]
    delta_objects: MappingDelta
    objective: ObjectiveBreakdown
    status: str = "optimal"
    gap: float = 0.0

    @property
    def migrations(self) -> int:
        return self.delta_objects.n_migrations

    @property
    def extra_edges(self) -> int:
        return self.delta_objects.extra_edges

    def to_doc(self) -> dict[str, Any]:
        def key(s):
            return f"({s[0]},{s[1]},{s[2]})"

        return {
            "interval": self.cur.interval,
            "status": self.status,
            "gap": self.gap,
            "assign": self.cur.to_doc(),
            "eta": self.eta,
            "mu": {key(s): v for s, v in self.mu.items() if v != 0.0},
            "d": {key(s): v for s, v in self.d.items() if self.cur.assign[s[:2]] == s[2]},
            "delta": dict(self.delta),
            "migrations": sorted(list(m) for m in self.delta_objects.migrations),
            "extra_edges": self.delta_objects.extra_edges,
            "objective": {
                "total": self.objective.total,
                "load": self.objective.load,
                "migration": self.objective.migration,
                "extra_edge": self.objective.extra_edge,
                "margin": self.objective.margin,
            },
        }


def make_solution(
    p1: ProblemP1,
    cur: MappingState,
    mu: Mapping[Slot, float],
    d: Mapping[Slot, float],
    eta: float,
    delta: Mapping[str, float] | None = None,
    status: str = "optimal",
    gap: float = 0.0,
) -> Solution:
    if cur.interval != p1.interval:
        cur = MappingState(cur.assign, p1.interval)
    delta = {r: float((delta or {}).get(r, 0.0)) for r in sorted(p1.margin_sfcs)}
    objs = _delta(p1.instance, p1.prev, cur)
    partial = Solution(cur, dict(mu), dict(d), float(eta), delta, objs, ObjectiveBreakdown(0, 0, 0, 0))
    return replace(partial, objective=objective_value(p1, partial), status=status, gap=gap)


def objective_value(p1: ProblemP1, sol: Solution) -> ObjectiveBreakdown:
    w = p1.weights
    load = w.alpha1 * sol.eta
    migration = w.alpha2 * sol.delta_objects.n_migrations
    extra = w.alpha3 * sol.delta_objects.extra_edges
    margin = w.alpha4 * sum(sol.delta.values()) if p1.soft_delay else 0.0
    return ObjectiveBreakdown(load + migration + extra + margin, load, migration, extra, margin)


@dataclass(frozen=True)
class Violation:
    family: str
    index: tuple
    amount: float  # scaled amount by which the constraint is broken (> tol)


def check_feasibility(p1: ProblemP1, sol: Solution, tol: float = 1e-7) -> list[Violation]:
    """Re-evaluate every constraint of the original problem at ``sol``.

    Rows are scaled by their largest coefficient, so ``tol`` is a single
    absolute tolerance across constraint families. An empty list means
    feasible.
    """
    inst = p1.instance
    eps = inst.epsilon
    big = 1.0 / eps
    out: list[Violation] = []

    def report(family, index, amount):
        if amount > tol or not math.isfinite(amount):
            out.append(Violation(family, index, float(amount)))

    try:
        validate_mapping(inst, sol.cur)
    except InstanceError as exc:
        for msg in exc.problems:
            report("mapping", (msg,), math.inf)
        return out

    def x(r, h, i):
        return 1.0 if sol.cur.assign[(r, h)] == i else 0.0

    load: dict[str, float] = {}
    e2e: dict[str, float] = {}
    for r, h, i in p1.slots:
        lam = p1.rates[r]
        s = inst.sfc(r)
        cap = p1.capacity_rate(r, i)
        xi = x(r, h, i)
        mu = sol.mu.get((r, h, i), 0.0)
        d = sol.d.get((r, h, i), math.nan)
        report("rate_lower", (r, h, i), (xi * lam - mu) / max(lam, 1.0))
        report("rate_upper", (r, h, i), (mu - xi * cap) / max(cap, 1.0))
        report("rate_nonneg", (r, h, i), -mu)
        load[i] = load.get(i, 0.0) + s.density[i] * mu
        report("mm1_delay", (r, h, i), abs(d * (mu - xi * lam + eps) - 1.0))
        bound = xi * s.deadline_s + (1.0 - xi) * big
        report("delay_bound", (r, h, i), (d - bound) / max(1.0, abs(s.deadline_s - big)))
        report("delay_positive", (r, h, i), -d if d <= 0 else 0.0)
        e2e[r] = e2e.get(r, 0.0) + xi * d
    report("eta_range", (), max(-sol.eta, sol.eta - 1.0))
    for i, used in load.items():
        c = inst.vnfi(i).capacity_cycles
        report("utilization", (i,), (used - sol.eta * c) / c)
    for s in inst.sfcs:
        margin = sol.delta.get(s.id, 0.0) if s.id in p1.margin_sfcs else 0.0
        if s.id in sol.delta and s.id not in p1.margin_sfcs and sol.delta[s.id] != 0.0:
            report("margin_pinned", (s.id,), abs(sol.delta[s.id]))
        report("margin_nonneg", (s.id,), -margin)
        report("e2e_deadline", (s.id,), e2e.get(s.id, 0.0) - s.deadline_s - margin)

    expect = _delta(inst, p1.prev, sol.cur)
    if expect != sol.delta_objects:
        report("edge_usage", (), math.inf)

    traffic: dict[tuple[str, str], float] = {}
    for s in inst.sfcs:
        for a, b in link_endpoints(inst, sol.cur, s.id):
            if inst.has_edge(a, b):
                traffic[(a, b)] = traffic.get((a, b), 0.0) + p1.rates[s.id] * s.packet_bits
    for (a, b), bits in traffic.items():
        cap = inst.edge(a, b).capacity_bits
        report("transmission", (a, b), (bits - cap) / max(cap, 1.0))
    return out


# ---------------------------------------------------------------- MIQCP IR


@dataclass
class MiqcpModel:
    """Solver-ready mixed-integer conic model.

    Rows read ``A @ v (sense) rhs`` with sense in ``<``, ``=``, ``>``; each
    row of ``cones`` holds variable indices ``(a, b, c)`` meaning
    ``a * b >= c**2`` with ``a, b >= 0``. The objective is
    ``obj @ v + offset``.
    """

    names: list[str]
    roles: list[tuple]
    binary: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    row_names: list[str]
    cones: np.ndarray
    obj: np.ndarray
    offset: float
    meta: dict[str, Any] = field(default_factory=dict)

    @cached_property
    def index(self) -> dict[tuple, int]:
        return {role: k for k, role in enumerate(self.roles)}

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def var(self, *role) -> int:
        return self.index[tuple(role)]

    def objective(self, values: np.ndarray) -> float:
        return float(self.obj @ values + self.offset)

    def with_fixed_binaries(self, fixings: Mapping[int, float]) -> "MiqcpModel":
        lb, ub = self.lb.copy(), self.ub.copy()
        for k, v in fixings.items():
            lb[k] = ub[k] = v
        return replace(self, lb=lb, ub=ub)

    def with_fixed_mapping(self, state: MappingState) -> "MiqcpModel":
        fix = {}
        for r, h, i in self.meta["slots"]:
            fix[self.var("x", r, h, i)] = 1.0 if state.assign[(r, h)] == i else 0.0
        return self.with_fixed_binaries(fix)

    def residuals(self, values: np.ndarray) -> dict[str, float]:
        """Scaled worst-case violations of rows, bounds, cones and integrality."""
        v = np.asarray(values, dtype=float)
        lhs = self.A @ v
        scale = np.maximum(abs(self.A).max(axis=1).toarray().ravel(), 1e-300)
        diff = (lhs - self.rhs) / scale
        viol = np.where(self.sense == "<", diff, np.where(self.sense == ">", -diff, abs(diff)))
        bounds = np.maximum(self.lb - v, v - self.ub)
        bounds = bounds / np.maximum(1.0, np.maximum(abs(self.lb), abs(np.where(np.isfinite(self.ub), self.ub, 0))))
        a, b, c = (v[self.cones[:, k]] for k in range(3))
        cone = np.maximum(c * c - a * b, np.maximum(-a, -b)) / np.maximum(1.0, c * c)
        bins = v[self.binary]
        return {
            "rows": float(viol.max(initial=0.0)),
            "bounds": float(bounds.max(initial=0.0)),
            "cones": float(cone.max(initial=0.0)),
            "integrality": float(abs(bins - np.round(bins)).max(initial=0.0)),
        }

    def dump(self) -> str:
        """Line-oriented, deterministic text form for diffing models."""
        lines = [f"# miqcp vars={self.n_vars} rows={len(self.rhs)} cones={len(self.cones)}"]
        for k, name in enumerate(self.names):
            kind = "B" if self.binary[k] else "C"
            lines.append(f"var {k} {name} {kind} {self.lb[k]:.17g} {self.ub[k]:.17g}")
        A = self.A.tocsr()
        for k in range(A.shape[0]):
            lo, hi = A.indptr[k], A.indptr[k + 1]
            terms = " ".join(
                f"{A.data[p]:+.17g}*{self.names[A.indices[p]]}"
                for p in sorted(range(lo, hi), key=lambda p: A.indices[p])
            )
            lines.append(f"row {k} {self.row_names[k]} {self.sense[k]} {self.rhs[k]:.17g} : {terms}")
        for k, (a, b, c) in enumerate(self.cones):
            lines.append(f"cone {k} {self.names[a]} {self.names[b]} {self.names[c]}")
        nz = np.flatnonzero(self.obj)
        terms = " ".join(f"{self.obj[j]:+.17g}*{self.names[j]}" for j in nz)
        lines.append(f"obj {self.offset:.17g} : {terms}")
        return "\n".join(lines) + "\n"


class _Builder:
    def __init__(self):
        self.names: list[str] = []
        self.roles: list[tuple] = []
        self.binary: list[bool] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.rows: list[dict[int, float]] = []
        self.sense: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str] = []
        self.cones: list[tuple[int, int, int]] = []

    def var(self, role: tuple, lb: float, ub: float, binary: bool = False) -> int:
        self.names.append(role[0] + ("[" + ",".join(map(str, role[1:])) + "]" if len(role) > 1 else ""))
        self.roles.append(role)
        self.binary.append(binary)
        self.lb.append(lb)
        self.ub.append(ub)
        return len(self.names) - 1

    def row(self, name: str, coefs: dict[int, float], sense: str, rhs: float):
        self.rows.append(coefs)
        self.sense.append(sense)
        self.rhs.append(rhs)
        self.row_names.append(name)

    def build(self, obj: dict[int, float], offset: float, meta: dict) -> MiqcpModel:
        n = len(self.names)
        indptr, indices, data = [0], [], []
        for coefs in self.rows:
            for j in sorted(coefs):
                if coefs[j] != 0.0:
                    indices.append(j)
                    data.append(coefs[j])
            indptr.append(len(indices))
        A = sp.csr_matrix((data, indices, indptr), shape=(len(self.rows), n))
        c = np.zeros(n)
        for j, v in obj.items():
            c[j] += v
        return MiqcpModel(
            names=self.names,
            roles=self.roles,
            binary=np.array(self.binary, dtype=bool),
            lb=np.array(self.lb, dtype=float),
            ub=np.array(self.ub, dtype=float),
            A=A,
            sense=np.array(self.sense, dtype="<U1"),
            rhs=np.array(self.rhs, dtype=float),
            row_names=self.row_names,
            cones=np.array(self.cones, dtype=int).reshape(-1, 3),
            obj=c,
            offset=float(offset),
            meta=meta,
        )


def transform_to_miqcp(p1: ProblemP1) -> MiqcpModel:
    """Reformulate ``p1`` as a mixed-integer program with rotated cones.

    The E2E deadline is linearised with big-M (M = 1/epsilon) through
    auxiliary ``gamma``; the product of consecutive mapping indicators is
    replaced by binaries ``xi`` with the four McCormick rows; the M/M/1
    delay equality is dropped in favour of ``d * pi >= c**2`` with
    ``pi = mu - x*lambda + epsilon``, ``pi >= epsilon`` and ``c = 1``.
    Migration indicators are eliminated since the previous mapping is
    data: ``m[i->j] = x[j]`` whenever ``i`` was the previous VNFI.
    """
    inst = p1.instance
    eps = inst.epsilon
    big = 1.0 / eps
    w = p1.weights
    b = _Builder()
    slots = p1.slots

    x = {s: b.var(("x",) + s, 0.0, 1.0, binary=True) for s in slots}
    xi: dict[tuple[str, int, str, str], int] = {}
    for s in inst.sfcs:
        for h in range(1, s.n_hops):
            for i in inst.candidates(s.id, h):
                for j in inst.candidates(s.id, h + 1):
                    if inst.has_edge(i, j):
                        xi[(s.id, h, i, j)] = b.var(("xi", s.id, h, i, j), 0.0, 1.0, binary=True)
    d_min = p1.d_min
    mu, d, gamma, pi = {}, {}, {}, {}
    for s in slots:
        r, _, i = s
        cap = p1.capacity_rate(r, i)
        mu[s] = b.var(("mu",) + s, 0.0, cap)
        d[s] = b.var(("d",) + s, d_min, big)
        gamma[s] = b.var(("gamma",) + s, 0.0, big)
        pi[s] = b.var(("pi",) + s, eps, cap + eps)
    eta = b.var(("eta",), 0.0, 1.0)
    c = b.var(("c",), 1.0, 1.0)
    delta = {}
    for s in inst.sfcs:
        if s.id in p1.margin_sfcs:
            delta[s.id] = b.var(("delta", s.id), 0.0, s.n_hops * big)

    for r, h in inst.hops:
        b.row(f"mapping[{r},{h}]", {x[(r, h, i)]: 1.0 for i in inst.candidates(r, h)}, "=", 1.0)

    on_vnfi: dict[str, dict[int, float]] = {}
    for s in slots:
        r, h, i = s
        sfc = inst.sfc(r)
        lam = p1.rates[r]
        cap = p1.capacity_rate(r, i)
        tag = f"{r},{h},{i}"
        b.row(f"rate_lo[{tag}]", {x[s]: lam, mu[s]: -1.0}, "<", 0.0)
        b.row(f"rate_hi[{tag}]", {mu[s]: 1.0, x[s]: -cap}, "<", 0.0)
        on_vnfi.setdefault(i, {})[mu[s]] = sfc.density[i]
        b.row(f"delay_ub[{tag}]", {d[s]: 1.0, x[s]: big - sfc.deadline_s}, "<", big)
        b.row(f"gamma_lo[{tag}]", {d[s]: 1.0, x[s]: big, gamma[s]: -1.0}, "<", big)
        b.row(f"gamma_hi[{tag}]", {gamma[s]: 1.0, d[s]: -1.0}, "<", 0.0)
        b.row(f"gamma_x[{tag}]", {gamma[s]: 1.0, x[s]: -big}, "<", 0.0)
        b.row(f"pi_def[{tag}]", {pi[s]: 1.0, mu[s]: -1.0, x[s]: lam}, "=", eps)
        b.cones.append((d[s], pi[s], c))
    for i in sorted(on_vnfi):
        coefs = dict(on_vnfi[i])
        coefs[eta] = -inst.vnfi(i).capacity_cycles
        b.row(f"utilization[{i}]", coefs, "<", 0.0)
    b.row("c_fix", {c: 1.0}, "=", 1.0)
    for s in inst.sfcs:
        coefs = {gamma[(s.id, h, i)]: 1.0 for h in range(1, s.n_hops + 1) for i in inst.candidates(s.id, h)}
        if s.id in delta:
            coefs[delta[s.id]] = -1.0
        b.row(f"e2e[{s.id}]", coefs, "<", s.deadline_s)
    for (r, h, i, j), k in xi.items():
        tag = f"{r},{h},{i},{j}"
        b.row(f"xi_lo_i[{tag}]", {k: 1.0, x[(r, h, i)]: -1.0}, "<", 0.0)
        b.row(f"xi_lo_j[{tag}]", {k: 1.0, x[(r, h + 1, j)]: -1.0}, "<", 0.0)
        b.row(f"xi_and[{tag}]", {x[(r, h, i)]: 1.0, x[(r, h + 1, j)]: 1.0, k: -1.0}, "<", 1.0)

    # Edge usage: y equals xi on internal links and x on access links.
    y_terms: list[tuple[int, str, str, str]] = []  # (var, SFC, from, to)
    for s in inst.sfcs:
        for j in inst.candidates(s.id, 1):
            if inst.has_edge(s.source, j):
                y_terms.append((x[(s.id, 1, j)], s.id, s.source, j))
        for (r, h, i, j), k in xi.items():
            if r == s.id:
                y_terms.append((k, r, i, j))
        for i in inst.candidates(s.id, s.n_hops):
            if inst.has_edge(i, s.dest):
                y_terms.append((x[(s.id, s.n_hops, i)], s.id, i, s.dest))
    per_edge: dict[tuple[str, str], dict[int, float]] = {}
    for k, r, a, e in y_terms:
        load = p1.rates[r] * inst.sfc(r).packet_bits
        if load > 0:
            row = per_edge.setdefault((a, e), {})
            row[k] = row.get(k, 0.0) + load
    for (a, e) in sorted(per_edge):
        cap = inst.edge(a, e).capacity_bits
        if sum(per_edge[(a, e)].values()) > cap:
            b.row(f"transmission[{a},{e}]", per_edge[(a, e)], "<", cap)

    obj: dict[int, float] = {eta: w.alpha1}
    for r, h, i in slots:
        if p1.prev.assign[(r, h)] != i:
            obj[x[(r, h, i)]] = obj.get(x[(r, h, i)], 0.0) + w.alpha2
    for k, *_ in y_terms:
        obj[k] = obj.get(k, 0.0) - w.alpha3
    for k in delta.values():
        obj[k] = w.alpha4
    offset = w.alpha3 * inst.n_virtual_links

    meta = {
        "slots": slots,
        "x": np.array([x[s] for s in slots]),
        "mu": np.array([mu[s] for s in slots]),
        "d": np.array([d[s] for s in slots]),
        "gamma": np.array([gamma[s] for s in slots]),
        "pi": np.array([pi[s] for s in slots]),
        "lam": np.array([p1.rates[s[0]] for s in slots]),
        "cap": np.array([p1.capacity_rate(s[0], s[2]) for s in slots]),
        "deadline": np.array([inst.sfc(s[0]).deadline_s for s in slots]),
        "d_min": d_min,
        "hop_groups": [np.array([x[(r, h, i)] for i in inst.candidates(r, h)]) for r, h in inst.hops],
        "eta": eta,
        "c": c,
        "delta": delta,
        "epsilon": eps,
    }
    return b.build(obj, offset, meta)
