"""Turn a solved MIQCP point into an exact-delay solution of the original problem.

The conic model only asks ``d * (mu - x*lambda + eps) >= 1``. At an optimum
that product can sit strictly above 1 on hops whose delay is not binding, so
the M/M/1 equality is restored here without changing the objective:

* with a load weight (``alpha1 > 0``) the rates are kept and each delay is
  recomputed as ``1 / (mu - lambda + eps)``, which can only shrink it;
* without one the delays are kept and each rate is lowered to
  ``1/d + lambda - eps``; the load is then recomputed and must not grow.

Unused slots are normalised to ``mu = 0`` and ``d = 1/eps``. The operation is
idempotent.
"""

from __future__ import annotations

import numpy as np

from .bnb import MiqcpSolution
from .formulation import MiqcpModel, ProblemP1, Solution, make_solution
from .model import MappingState

ETA_SLACK = 1e-9
# Accepted MIQCP residual on input points; well above solver noise, well
# below anything that would indicate a wrong model.
INPUT_TOL = 1e-6


class PostprocessError(RuntimeError):
    """Post-processing would change the objective or break a constraint."""


def solution_from_values(
    p1: ProblemP1, model: MiqcpModel, values: np.ndarray, status: str = "optimal", gap: float = 0.0
) -> Solution:
    """Read mapping, rates, delays, load and margins off a model point."""
    meta = model.meta
    slots = meta["slots"]
    xs = np.round(values[meta["x"]])
    assign = {}
    for (r, h, i), xv in zip(slots, xs):
        if xv == 1.0:
            if (r, h) in assign:
                raise PostprocessError(f"hop ({r},{h}) mapped twice")
            assign[(r, h)] = i
    cur = MappingState(assign, p1.interval)
    mu = {s: float(v) for s, v in zip(slots, values[meta["mu"]])}
    d = {s: float(v) for s, v in zip(slots, values[meta["d"]])}
    delta = {r: max(0.0, float(values[k])) for r, k in meta["delta"].items()}
    return make_solution(p1, cur, mu, d, float(values[meta["eta"]]), delta, status, gap)


def postprocess_optimum(miqcp_sol: MiqcpSolution, p1: ProblemP1) -> Solution:
    """Map a branch-and-bound result to an exact-delay solution of ``p1``.

    The search status and gap carry over; ``feasible-capped`` outputs keep
    their gap annotation.
    """
    if miqcp_sol.values is None:
        raise PostprocessError(f"no incumbent to post-process (status {miqcp_sol.status})")
    res = miqcp_sol.model.residuals(miqcp_sol.values)
    worst = max(res.values())
    if worst > INPUT_TOL:
        raise PostprocessError(f"input point violates the model: {res}")
    raw = solution_from_values(p1, miqcp_sol.model, miqcp_sol.values, miqcp_sol.status, miqcp_sol.gap)
    return postprocess(p1, raw)


def postprocess(p1: ProblemP1, sol: Solution) -> Solution:
    """Enforce the delay equality on every slot; see the module docstring."""
    inst = p1.instance
    eps = inst.epsilon
    adjust_delay = p1.weights.alpha1 > 0
    mu, d = {}, {}
    for s in p1.slots:
        r, h, i = s
        if sol.cur.assign[(r, h)] != i:
            mu[s], d[s] = 0.0, 1.0 / eps
            continue
        lam = p1.rates[r]
        m, dd = sol.mu[s], sol.d[s]
        if adjust_delay:
            d[s], mu[s] = 1.0 / (m - lam + eps), m
        else:
            mu[s], d[s] = 1.0 / dd + lam - eps, dd
    eta = sol.eta
    if not adjust_delay:
        eta = _max_utilization(p1, mu)
        if eta > sol.eta + ETA_SLACK:
            raise PostprocessError(f"recomputed load {eta!r} exceeds solver load {sol.eta!r}")
    return make_solution(p1, sol.cur, mu, d, eta, sol.delta, sol.status, sol.gap)


def _max_utilization(p1: ProblemP1, mu) -> float:
    inst = p1.instance
    used: dict[str, float] = {}
    for (r, h, i), m in mu.items():
        used[i] = used.get(i, 0.0) + inst.sfc(r).density[i] * m
    return max((u / inst.vnfi(i).capacity_cycles for i, u in used.items()), default=0.0)
