"""Best-first branch-and-bound over the mapping binaries of a MiqcpModel.

Only the ``x`` (VNF -> VNFI) binaries are branched on: once they are
integral the McCormick rows force ``xi`` and the edge/migration terms to be
integral too. Node bounds come from a convex relaxation; leaves are always
re-solved on the literal model with every ``x`` fixed, so an incumbent is a
point of the model itself, checked against its rows and cones.

Two node relaxations are available:

``"perspective"`` (default)
    The dummy-delay block (``d``, ``pi``, ``c`` and the big-M rows) is
    projected out; each slot instead carries ``gamma * q >= x**2`` with
    ``q = mu - x*lambda + eps*x`` and ``gamma <= D*x``, plus a per-hop load
    row ``sum_i mu_i / cap_i <= eta``. At integral ``x`` this describes the
    same points as the model, and it is far tighter at fractional ``x``.
``"bigm"``
    The model's own continuous relaxation, binaries in [0, 1].
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .convex import ConeProgram, ConeSolution, ToleranceConfig, solve_cone
from .formulation import MiqcpModel
from .model import MappingState

log = logging.getLogger(__name__)

INT_TOL = 1e-6


@dataclass(frozen=True)
class BnbParams:
    abs_gap: float = 1e-6
    time_cap_s: float = 120.0
    node_cap: int = 200_000
    branching: str = "most-fractional"
    seed: int = 0
    relaxation: str = "perspective"
    propagate: bool = True
    first_feasible: bool = False
    tol: ToleranceConfig = field(default_factory=ToleranceConfig)
    log_every: int = 200

    def __post_init__(self):
        if not (self.abs_gap > 0 and self.time_cap_s > 0 and self.node_cap > 0):
            raise ValueError("abs_gap, time_cap_s and node_cap must be positive")
        if self.branching != "most-fractional":
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.relaxation not in ("perspective", "bigm"):
            raise ValueError(f"unknown relaxation {self.relaxation!r}")


@dataclass
class BnbStats:
    nodes: int = 0
    solves: int = 0
    leaf_solves: int = 0
    pruned: int = 0
    infeasible_nodes: int = 0
    numerical_failures: int = 0
    wall_s: float = 0.0
    bound_trace: list[float] = field(default_factory=list)


@dataclass
class MiqcpSolution:
    status: str  # "optimal" | "feasible-capped" | "capped" | "infeasible"
    values: np.ndarray | None
    objective: float
    bound: float
    gap: float
    stats: BnbStats
    model: MiqcpModel

    @property
    def certified(self) -> bool:
        return self.status in ("optimal", "infeasible")


def branch_select(values: np.ndarray, candidates: np.ndarray, int_tol: float = INT_TOL) -> int | None:
    """Most-fractional candidate variable; ties go to the earliest index.

    ``candidates`` must be in canonical (r, h, VNFI) order. Returns ``None``
    when every candidate is integral within ``int_tol``.
    """
    if len(candidates) == 0:
        return None
    v = values[candidates]
    frac = np.round(np.minimum(v - np.floor(v), np.ceil(v) - v), 9)
    k = int(np.argmax(frac))
    if frac[k] <= int_tol:
        return None
    return int(candidates[k])


class _Relaxation:
    """Node relaxation over the model's variable space (plus extras)."""

    def __init__(self, model: MiqcpModel, kind: str):
        self.model = model
        self.kind = kind
        if kind == "bigm":
            self.base = ConeProgram.from_model(model)
            self.x_map = np.arange(model.n_vars)
        else:
            self.base, self.x_map = _perspective_program(model)

    def program(self, fixings: Mapping[int, float]) -> ConeProgram:
        mapped = {int(self.x_map[k]): v for k, v in fixings.items()}
        return self.base.with_fixings(mapped)

    def x_values(self, sol: ConeSolution, x_idx: np.ndarray) -> np.ndarray:
        out = np.zeros(self.model.n_vars)
        out[x_idx] = sol.values[self.x_map[x_idx]]
        return out


def _perspective_program(model: MiqcpModel) -> tuple[ConeProgram, np.ndarray]:
    meta = model.meta
    keep_roles = ("x", "xi", "mu", "gamma", "eta", "delta")
    keep = np.array([k for k, role in enumerate(model.roles) if role[0] in keep_roles])
    new = -np.ones(model.n_vars, dtype=int)
    new[keep] = np.arange(len(keep))
    drop = ("delay_ub", "gamma_lo", "gamma_hi", "pi_def", "c_fix", "gamma_x")
    rows = np.array([k for k, name in enumerate(model.row_names) if not name.startswith(drop)])
    A = model.A[rows][:, keep]
    lb, ub = model.lb[keep].copy(), model.ub[keep].copy()

    eps = meta["epsilon"]
    n, S = len(keep), len(meta["slots"])
    X, MU, G, ETA = new[meta["x"]], new[meta["mu"]], new[meta["gamma"]], new[meta["eta"]]
    Q = n + np.arange(S)
    dl = meta["deadline"]
    ub[G] = dl
    r_ix, c_ix, vals, rhs, sense = [], [], [], [], []
    row = 0
    for k in range(S):
        # q - mu + (lambda - eps) x = 0
        r_ix += [row] * 3
        c_ix += [Q[k], MU[k], X[k]]
        vals += [1.0, -1.0, meta["lam"][k] - eps]
        rhs.append(0.0)
        sense.append("=")
        # d_min x <= gamma <= D x
        r_ix += [row + 1] * 2 + [row + 2] * 2
        c_ix += [G[k], X[k], G[k], X[k]]
        vals += [1.0, -dl[k], 1.0, -meta["d_min"]]
        rhs += [0.0, 0.0]
        sense += ["<", ">"]
        row += 3
    slot_of = {int(v): k for k, v in enumerate(meta["x"])}
    for group in meta["hop_groups"]:
        for xv in group:
            k = slot_of[int(xv)]
            r_ix.append(row)
            c_ix.append(MU[k])
            vals.append(1.0 / meta["cap"][k])
        r_ix.append(row)
        c_ix.append(ETA)
        vals.append(-1.0)
        rhs.append(0.0)
        sense.append("<")
        row += 1
    extra = sp.csr_matrix((vals, (r_ix, c_ix)), shape=(row, n + S))
    A = sp.vstack([sp.hstack([A, sp.csr_matrix((A.shape[0], S))]), extra]).tocsr()
    prog = ConeProgram(
        lb=np.concatenate([lb, np.zeros(S)]),
        ub=np.concatenate([ub, meta["cap"] + eps]),
        A=A,
        sense=np.concatenate([model.sense[rows], np.array(sense, dtype="<U1")]),
        rhs=np.concatenate([model.rhs[rows], np.array(rhs)]),
        cones=np.stack([G, Q, X], axis=1),
        obj=np.concatenate([model.obj[keep], np.zeros(S)]),
        offset=model.offset,
        binary=np.concatenate([model.binary[keep], np.zeros(S, dtype=bool)]),
    )
    return prog, new


@dataclass(order=True)
class _Node:
    key: tuple
    bound: float
    node_id: int
    fixings: dict = field(compare=False)
    x: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


class _Search:
    def __init__(self, model: MiqcpModel, params: BnbParams):
        self.model = model
        self.params = params
        self.relax = _Relaxation(model, params.relaxation)
        self.x_idx = np.asarray(model.meta["x"])
        self.groups = [np.asarray(g) for g in model.meta["hop_groups"]]
        self.group_of = {int(v): g for g in self.groups for v in g}
        self.stats = BnbStats()
        self.incumbent: np.ndarray | None = None
        self.inc_obj = math.inf
        self.next_id = 0

    # -- fixings -------------------------------------------------------
    def propagate(self, fixings: dict[int, float]) -> dict[int, float] | None:
        """Apply one-hot closure; ``None`` if some hop has no VNFI left."""
        fix = dict(fixings)
        if not self.params.propagate:
            for g in self.groups:
                vals = [fix.get(int(v)) for v in g]
                if all(v == 0.0 for v in vals) or sum(v == 1.0 for v in vals) > 1:
                    return None
            return fix
        for g in self.groups:
            ones = [int(v) for v in g if fix.get(int(v)) == 1.0]
            if len(ones) > 1:
                return None
            if ones:
                for v in g:
                    fix[int(v)] = 1.0 if int(v) == ones[0] else 0.0
                continue
            open_ = [int(v) for v in g if int(v) not in fix]
            if not open_:
                return None
            if len(open_) == 1:
                fix[open_[0]] = 1.0
        return fix

    def root_fixings(self) -> dict[int, float] | None:
        meta = self.model.meta
        fix = {}
        # Rate bounds: a VNFI whose full capacity is below the arrival rate
        # cannot host the hop.
        for k, xv in enumerate(self.x_idx):
            lb, ub = self.model.lb[xv], self.model.ub[xv]
            if lb == ub:
                fix[int(xv)] = float(lb)
            elif meta["cap"][k] < meta["lam"][k]:
                fix[int(xv)] = 0.0
        return self.propagate(fix)

    # -- solving -------------------------------------------------------
    def relax_solve(self, fixings) -> ConeSolution:
        self.stats.solves += 1
        return solve_cone(self.relax.program(fixings), self.params.tol)

    def leaf(self, x_vals: np.ndarray) -> None:
        fix = {int(v): float(round(x_vals[v])) for v in self.x_idx}
        self.stats.leaf_solves += 1
        sol = solve_cone(ConeProgram.from_model(self.model, fix), self.params.tol)
        if sol.status != "optimal":
            if sol.status == "numerical-failure":
                self.stats.numerical_failures += 1
            return
        vals = sol.values.copy()
        vals[self.model.binary] = np.round(vals[self.model.binary])
        obj = self.model.objective(vals)
        if obj < self.inc_obj - 1e-12:
            self.inc_obj = obj
            self.incumbent = vals

    def make_node(self, fixings, parent_bound: float, depth: int) -> _Node | None:
        sol = self.relax_solve(fixings)
        if sol.status == "infeasible":
            self.stats.infeasible_nodes += 1
            return None
        if sol.status == "numerical-failure":
            self.stats.numerical_failures += 1
            if sol.values is None:
                return None
            bound = parent_bound
        else:
            bound = max(parent_bound, min(sol.objective, sol.bound))
        # Feasibility-only searches dive (deepest first); otherwise best-first.
        key = (-depth, self.next_id) if self.params.first_feasible else (bound, self.next_id)
        node = _Node(key, bound, self.next_id, fixings, self.relax.x_values(sol, self.x_idx), depth)
        self.next_id += 1
        return node

    def run(self, warm_starts: Iterable[MappingState]) -> MiqcpSolution:
        p = self.params
        t0 = time.perf_counter()
        root_fix = self.root_fixings()
        for state in warm_starts:
            x = np.zeros(self.model.n_vars)
            for r, h, i in self.model.meta["slots"]:
                x[self.model.var("x", r, h, i)] = 1.0 if state.assign[(r, h)] == i else 0.0
            if root_fix is not None and all(x[k] == v for k, v in root_fix.items()):
                self.leaf(x)
        heap: list[_Node] = []
        if root_fix is not None:
            root = self.make_node(root_fix, -math.inf, 0)
            if root is not None:
                heap.append(root)
        bound = -math.inf
        capped = False
        while heap:
            if self.incumbent is not None and p.first_feasible:
                capped = True
                break
            if not p.first_feasible:
                bound = max(bound, min(heap[0].bound, self.inc_obj))
                self.stats.bound_trace.append(bound)
            node = heapq.heappop(heap)
            if node.bound >= self.inc_obj - p.abs_gap:
                self.stats.pruned += 1
                continue
            self.stats.nodes += 1
            if self.stats.nodes % p.log_every == 0:
                log.info(
                    "bnb node=%d open=%d bound=%.9g incumbent=%.9g gap=%.3g t=%.2f",
                    self.stats.nodes, len(heap), bound, self.inc_obj, self.inc_obj - bound,
                    time.perf_counter() - t0,
                )
            free = np.array([v for v in self.x_idx if int(v) not in node.fixings], dtype=int)
            var = branch_select(node.x, free)
            if var is None:
                self.leaf(node.x)
                if self.inc_obj <= node.bound + p.abs_gap or len(free) == 0:
                    continue
                # Leaf value disagrees with the relaxation: keep splitting.
                v = node.x[free]
                var = int(free[np.argmax(np.minimum(v, 1 - v))])
            for val in (1.0, 0.0):
                child_fix = self.propagate({**node.fixings, var: val})
                if child_fix is None:
                    continue
                child = self.make_node(child_fix, node.bound, node.depth + 1)
                if child is None:
                    continue
                if child.bound >= self.inc_obj - p.abs_gap:
                    self.stats.pruned += 1
                    continue
                heapq.heappush(heap, child)
            elapsed = time.perf_counter() - t0
            if heap and (elapsed > p.time_cap_s or self.stats.nodes >= p.node_cap):
                capped = True
                break
        self.stats.wall_s = time.perf_counter() - t0
        if capped and heap:
            bound = max(bound, min(min(n.bound for n in heap), self.inc_obj))
        elif capped:
            bound = max(bound, self.inc_obj)
        if self.incumbent is None:
            status = "capped" if capped else "infeasible"
            return MiqcpSolution(status, None, math.inf, bound if capped else math.inf, math.inf,
                                 self.stats, self.model)
        if not capped:
            bound = self.inc_obj if not heap else bound
        gap = max(self.inc_obj - bound, 0.0)
        status = "optimal" if (not capped or gap <= p.abs_gap) else "feasible-capped"
        log.info("bnb done status=%s nodes=%d objective=%.9g bound=%.9g gap=%.3g t=%.2f",
                 status, self.stats.nodes, self.inc_obj, bound, gap, self.stats.wall_s)
        return MiqcpSolution(status, self.incumbent, self.inc_obj, min(bound, self.inc_obj), gap,
                             self.stats, self.model)


def solve_miqcp(
    model: MiqcpModel,
    params: BnbParams | None = None,
    warm_starts: Iterable[MappingState] = (),
) -> MiqcpSolution:
    """Solve ``model`` to ``params.abs_gap`` or until a cap is hit.

    ``warm_starts`` are mappings evaluated as initial incumbents (typically
    the previous interval's mapping). With ``params.first_feasible`` the
    search dives depth-first, stops at the first incumbent and reports
    ``feasible-capped`` (or ``infeasible`` once the tree is exhausted).
    """
    return _Search(model, params or BnbParams()).run(list(warm_starts))
