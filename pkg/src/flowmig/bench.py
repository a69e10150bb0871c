"""Timing budgets for desk-scale runs.

Budgets carry a 2x headroom flag: a case is ``ok`` under budget, ``warn``
between one and two budgets, ``over`` beyond that. Nothing here checks
answers; the test suite does that.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

from .bnb import BnbParams
from .convex import ConeProgram, solve_cone
from .experiments import PRESETS
from .formulation import Weights, build_p1, transform_to_miqcp
from .pipeline import solve_interval
from .topology import dedicated_chain_instance, generate_paper_topology, generate_tiny_instance


@dataclass
class BenchCase:
    suite: str
    name: str
    wall_s: float
    budget_s: float
    nodes: int = 0
    status: str = ""
    gap: float = 0.0  # relative to the incumbent objective

    @property
    def flag(self) -> str:
        if self.wall_s <= self.budget_s:
            return "ok"
        return "warn" if self.wall_s <= 2 * self.budget_s else "over"


@dataclass
class BenchReport:
    cases: list[BenchCase] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.flag == "ok" for c in self.cases)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["suite", "case", "wall_s", "budget_s", "flag", "nodes", "status", "gap"])
        for c in self.cases:
            w.writerow([c.suite, c.name, f"{c.wall_s:.4f}", c.budget_s, c.flag, c.nodes, c.status, f"{c.gap:.3g}"])
        return buf.getvalue()

    def render(self) -> str:
        return "".join(
            f"{c.suite:6} {c.name:28} {c.wall_s:9.3f}s / {c.budget_s:g}s  {c.flag:5} {c.status}\n"
            for c in self.cases
        )


def _cone(report: BenchReport) -> None:
    inst, prev = dedicated_chain_instance()
    p1 = build_p1(inst, prev, {"1": 700.0}, Weights(0.4, 0.4, 0.2))
    prog = ConeProgram.from_model(transform_to_miqcp(p1).with_fixed_mapping(prev))
    solve_cone(prog)  # first call pays import and setup costs
    t0 = time.perf_counter()
    sol = solve_cone(prog)
    report.cases.append(BenchCase("cone", "one-sfc-fixed-mapping", time.perf_counter() - t0, 0.05,
                                  status=sol.status))


def _tiny(report: BenchReport) -> None:
    t0 = time.perf_counter()
    nodes = 0
    for seed in range(25):
        inst, prev, rates = generate_tiny_instance(seed)
        res = solve_interval(inst, prev, rates, PRESETS["HFM"].weights)
        nodes += res.search.stats.nodes
    report.cases.append(BenchCase("tiny", "25-instances-exact", time.perf_counter() - t0, 60.0, nodes, "done"))


def _mesh(report: BenchReport, time_cap_s: float) -> None:
    inst, prev = generate_paper_topology(0)
    rates = {"1": 700.0, "2": 200.0, "3": 700.0}
    for name in ("LBFM", "HFM", "MOFM"):
        t0 = time.perf_counter()
        res = solve_interval(inst, prev, rates, PRESETS[name].weights, BnbParams(time_cap_s=time_cap_s))
        wall = time.perf_counter() - t0
        gap = res.search.gap
        rel = gap / max(abs(res.search.objective), 1e-12) if res.solution else float("inf")
        status = res.status if res.status == "optimal" else f"{res.status} rel-gap={rel:.3g}"
        report.cases.append(BenchCase("mesh", f"{name}-700-200-700", wall, time_cap_s,
                                      res.search.stats.nodes, status, rel))


def run_bench(suite: str = "cone", time_cap_s: float = 120.0) -> BenchReport:
    """Run one suite (``cone``, ``tiny``, ``mesh`` or ``all``) and time it."""
    report = BenchReport()
    if suite in ("cone", "all"):
        _cone(report)
    if suite in ("tiny", "all"):
        _tiny(report)
    if suite in ("mesh", "all"):
        _mesh(report, time_cap_s)
    if suite not in ("cone", "tiny", "mesh", "all"):
        raise ValueError(f"unknown bench suite {suite!r}")
    return report
