"""Exhaustive reference solver for tiny instances.

Every assignment of hops to candidate VNFIs is enumerated. The discrete
terms (migrations, extra edges, link capacities) are exact. The continuous
part is solved without any conic machinery. At load ``eta`` each VNFI has
``eta * C_i`` cycles per second; giving all of it to the hops it hosts never
hurts, so only the split between co-hosted hops matters. The split is found
by a refined grid search, and the least feasible ``eta`` by bisection. With
deadline margins the penalised excess is minimised over ``eta`` by
golden-section search on top of the same inner routine.

This is deliberately slow and simple; it exists to cross-check the
branch-and-bound on instances with a few hundred assignments at most.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .formulation import ProblemP1, Solution, make_solution
from .model import MappingState, _delta, link_endpoints


@dataclass(frozen=True)
class OracleParams:
    grid: int = 16
    refine_rounds: int = 6
    refine_factor: float = 4.0
    eta_iters: int = 30
    max_assignments: int = 1_000_000


@dataclass
class OracleResult:
    objective: float  # inf when no assignment is feasible
    solution: Solution | None
    ties: list[MappingState] = field(default_factory=list)
    evaluated: int = 0

    @property
    def unique(self) -> bool:
        return len(self.ties) == 1


class _Split:
    """Continuous subproblem for one fixed assignment."""

    def __init__(self, p1: ProblemP1, assign: dict):
        inst = p1.instance
        eps = inst.epsilon
        self.p1 = p1
        self.eps = eps
        hops = sorted(assign)
        self.hop_sfc = [r for r, _ in hops]
        self.lam = np.array([p1.rates[r] for r, _ in hops])
        self.dl = np.array([inst.sfc(r).deadline_s for r, _ in hops])
        # cycles-per-second -> packets-per-second for each hop
        self.per_cycle = np.array([1.0 / inst.sfc(r).density[assign[(r, h)]] for r, h in hops])
        by_vnfi: dict[str, list[int]] = {}
        for k, hop in enumerate(hops):
            by_vnfi.setdefault(assign[hop], []).append(k)
        self.groups = [(inst.vnfi(i).capacity_cycles, ks) for i, ks in sorted(by_vnfi.items())]
        self.shared = [g for g in self.groups if len(g[1]) > 1]
        self.dims = sum(len(ks) - 1 for _, ks in self.shared)
        sfcs = sorted(set(self.hop_sfc))
        self.sfc_ids = sfcs
        self.member = np.array([[1.0 if r == s else 0.0 for r in self.hop_sfc] for s in sfcs])
        self.sfc_dl = np.array([inst.sfc(s).deadline_s for s in sfcs])
        self.soft = np.array([s in p1.margin_sfcs for s in sfcs])

    def rates(self, eta: float, u: np.ndarray) -> np.ndarray:
        """Service rates for stick-breaking parameters ``u`` (points x dims)."""
        n = u.shape[0]
        mu = np.zeros((n, len(self.lam)))
        col = 0
        for cap, ks in self.groups:
            budget = eta * cap
            rest = np.ones(n)
            for pos, k in enumerate(ks):
                if pos == len(ks) - 1:
                    frac = rest
                else:
                    frac = rest * u[:, col]
                    rest = rest - frac
                    col += 1
                mu[:, k] = frac * budget * self.per_cycle[k]
        return mu

    def evaluate(self, eta: float, u: np.ndarray):
        """Return (violation, margin sum) per grid point."""
        mu = self.rates(eta, u)
        slack = mu - self.lam + self.eps
        with np.errstate(divide="ignore"):
            d = np.where(slack > 0, 1.0 / np.maximum(slack, 1e-300), np.inf)
        viol = np.max((self.lam - mu) / np.maximum(self.lam, 1.0), axis=1, initial=-np.inf)
        viol = np.maximum(viol, np.max((d - self.dl) / self.dl, axis=1, initial=-np.inf))
        with np.errstate(invalid="ignore"):
            e2e = np.where(np.isfinite(d), d, 1e300) @ self.member.T
        excess = (e2e - self.sfc_dl) / self.sfc_dl
        hard = np.where(self.soft, -np.inf, excess)
        viol = np.maximum(viol, np.max(hard, axis=1, initial=-np.inf))
        margin = np.where(self.soft, np.maximum(e2e - self.sfc_dl, 0.0), 0.0).sum(axis=1)
        return viol, margin

    def best(self, eta: float, params: OracleParams):
        """Minimise (violation, then margin) over the split simplex.

        Returns ``(violation, margin, u)`` for the best stick-breaking point.
        """
        if self.dims == 0:
            u = np.zeros((1, 0))
            v, m = self.evaluate(eta, u)
            return float(v[0]), float(m[0]), u[0]
        lo = np.zeros(self.dims)
        hi = np.ones(self.dims)
        best_key, best = (math.inf, math.inf), None
        for _ in range(params.refine_rounds + 1):
            axes = [np.linspace(lo[k], hi[k], params.grid + 1) for k in range(self.dims)]
            pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
            v, m = self.evaluate(eta, pts)
            clipped = np.maximum(v, 0.0)
            k = np.lexsort((m, clipped))[0]
            if (clipped[k], m[k]) < best_key:
                best_key, best = (clipped[k], m[k]), (float(v[k]), float(m[k]), pts[k])
            span = (hi - lo) / params.refine_factor
            lo = np.clip(best[2] - span / 2, 0.0, 1.0)
            hi = np.clip(best[2] + span / 2, 0.0, 1.0)
        return best


def _continuous(p1: ProblemP1, assign: dict, params: OracleParams):
    """Best (alpha1*eta + alpha4*margin, eta, margin) for one assignment."""
    w = p1.weights
    split = _Split(p1, assign)

    def feasible(eta):
        return split.best(eta, params)[0] <= 0.0

    if not feasible(1.0):
        return None
    lo, hi = 0.0, 1.0
    for _ in range(params.eta_iters):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    eta_min = hi
    if not p1.margin_sfcs:
        return w.alpha1 * eta_min, eta_min, 0.0

    def cost(eta):
        return w.alpha1 * eta + w.alpha4 * split.best(eta, params)[1]

    # Margin sum is convex and nonincreasing in eta; golden-section search.
    a, b = eta_min, 1.0
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = cost(c), cost(d)
    for _ in range(params.eta_iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = cost(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = cost(d)
    cands = [(cost(e), e) for e in (eta_min, c, d, 1.0)]
    val, eta = min(cands)
    return val, eta, split.best(eta, params)[1]


def _links_ok(p1: ProblemP1, cur: MappingState) -> bool:
    inst = p1.instance
    traffic: dict = {}
    for s in inst.sfcs:
        for a, b in link_endpoints(inst, cur, s.id):
            if inst.has_edge(a, b):
                traffic[(a, b)] = traffic.get((a, b), 0.0) + p1.rates[s.id] * s.packet_bits
    return all(bits <= inst.edge(a, b).capacity_bits for (a, b), bits in traffic.items())


def oracle_search(p1: ProblemP1, params: OracleParams | None = None, tie_tol: float = 1e-6) -> OracleResult:
    """Optimal objective and assignment by enumeration.

    ``ties`` lists every assignment within ``tie_tol`` of the best value in
    canonical enumeration order, so callers can tell whether the optimum is
    unique.
    """
    params = params or OracleParams()
    inst = p1.instance
    hops = inst.hops
    choices = [inst.candidates(r, h) for r, h in hops]
    total = math.prod(len(c) for c in choices)
    if total > params.max_assignments:
        raise ValueError(f"{total} assignments exceed the oracle limit of {params.max_assignments}")
    w = p1.weights
    scored = []
    for combo in itertools.product(*choices):
        cur = MappingState(dict(zip(hops, combo)), p1.interval)
        if not _links_ok(p1, cur):
            continue
        objs = _delta(inst, p1.prev, cur)
        discrete = w.alpha2 * objs.n_migrations + w.alpha3 * objs.extra_edges
        cont = _continuous(p1, cur.assign, params)
        if cont is None:
            continue
        scored.append((discrete + cont[0], cur, cont[1]))
    if not scored:
        return OracleResult(math.inf, None, [], total)
    best = min(scored, key=lambda t: t[0])
    ties = [s[1] for s in scored if s[0] <= best[0] + tie_tol]
    return OracleResult(best[0], _solution(p1, best[1], best[2], params), ties, total)


def enumerate_optimum(p1: ProblemP1, max_assignments: int = 1_000_000) -> Solution | None:
    """Global optimum of ``p1`` by enumeration; ``None`` if infeasible."""
    return oracle_search(p1, OracleParams(max_assignments=max_assignments)).solution


def _solution(p1: ProblemP1, cur: MappingState, eta: float, params: OracleParams) -> Solution:
    split = _Split(p1, cur.assign)
    u = split.best(eta, params)[2]
    mu_h = split.rates(eta, u[None, :])[0]
    d_h = 1.0 / (mu_h - split.lam + split.eps)
    hops = sorted(cur.assign)
    mu, d = {}, {}
    for r, h, i in p1.slots:
        mu[(r, h, i)], d[(r, h, i)] = 0.0, 1.0 / p1.instance.epsilon
    for k, (r, h) in enumerate(hops):
        slot = (r, h, cur.assign[(r, h)])
        mu[slot], d[slot] = float(mu_h[k]), float(d_h[k])
    e2e = split.member @ d_h
    delta = {
        s: float(max(e2e[k] - split.sfc_dl[k], 0.0))
        for k, s in enumerate(split.sfc_ids)
        if s in p1.margin_sfcs
    }
    return make_solution(p1, cur, mu, d, eta, delta)
