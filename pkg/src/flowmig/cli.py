"""Command-line front end.

Exit codes: 0 success, 1 unreadable input, 2 invalid instance or mapping,
3 infeasible problem, 4 search capped without a certificate (only with
``--require-optimal``), 5 simulation disagrees with the delay model.

Data files are deterministic for identical inputs; run metadata (version,
seed, wall time) goes to a ``<file>.meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from .bnb import BnbParams
from .experiments import (
    MARGIN_WEIGHT,
    PRESETS,
    SweepSpec,
    max_feasible_rate,
    preset,
    records_to_csv,
    records_to_plot_json,
    run_margin_experiment,
    run_sweep,
    summarize,
)
from .formulation import Weights
from .model import InstanceError, instance_to_dict, load_instance, load_mapping, traffic_from_doc
from .pipeline import binding_families, solve_interval
from .queuesim import Allocation, SimConfig, compare_to_model, simulate
from .topology import dedicated_chain_instance, generate_paper_topology, generate_tiny_instance

EXIT_PARSE, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_CAPPED, EXIT_SIM_MISMATCH = 1, 2, 3, 4, 5


def _version() -> str:
    try:
        return version("flowmig")
    except PackageNotFoundError:  # pragma: no cover - running from a checkout
        return "0+unknown"


def _write(path: str | None, text: str, meta: dict | None = None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    Path(path).write_text(text)
    if meta is not None:
        doc = {"tool": "flowmig", "version": _version(), **meta}
        Path(path + ".meta.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InstanceError([f"cannot read {path}: {exc.strerror}"], kind="parse") from exc


def _parse_rates(text: str | None, path: str | None) -> dict[str, float]:
    if path:
        return traffic_from_doc(json.loads(_read(path))).at(0)
    if not text:
        return {}
    out = {}
    for part in text.split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise InstanceError([f"bad rate {part!r}; expected SFC=packets_per_second"], kind="parse")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise InstanceError([f"bad rate value {val!r} for SFC {key.strip()!r}"], kind="parse") from None
    return out


def _weights(args) -> Weights:
    if args.weights:
        vals = [float(v) for v in args.weights.split(",")]
        if len(vals) not in (3, 4):
            raise InstanceError(["--weights takes a1,a2,a3[,a4]"], kind="parse")
        return Weights(*vals)
    w = preset(args.preset).weights
    if getattr(args, "soft_delay", False):
        w = replace(w, alpha4=args.alpha4)
    return w


def _params(args) -> BnbParams:
    return BnbParams(
        abs_gap=args.gap, time_cap_s=args.time_cap, node_cap=args.node_cap, seed=args.seed,
        log_every=args.log_every,
    )


def _load(args):
    inst = load_instance(_read(args.instance))
    prev = load_mapping(_read(args.prev), inst) if getattr(args, "prev", None) else None
    return inst, prev


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    inst = load_instance(_read(args.instance))
    print(f"ok: {len(inst.vnfis)} VNFIs, {len(inst.edges)} logical edges, {len(inst.sfcs)} SFCs, "
          f"{len(inst.hops)} hops")
    if args.prev:
        load_mapping(_read(args.prev), inst)
        print("ok: mapping is valid for the instance")
    return 0


def cmd_solve(args) -> int:
    inst, prev = _load(args)
    rates = _parse_rates(args.rates, args.rates_file)
    weights = _weights(args)
    margins = args.margin_sfcs.split(",") if args.margin_sfcs else None
    params = _params(args)
    t0 = time.perf_counter()
    res = solve_interval(inst, prev, rates, weights, params, soft_delay=args.soft_delay, margin_sfcs=margins)
    wall = time.perf_counter() - t0
    sol = res.solution
    if res.status == "infeasible":
        fams = binding_families(inst, prev, rates, weights, params, args.soft_delay, margins)
        print(f"infeasible: no mapping satisfies the constraints; binding families: {', '.join(fams)}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    if sol is None:
        print(f"capped: no feasible mapping found within the search limits (bound {res.search.bound:.9g})",
              file=sys.stderr)
        return EXIT_CAPPED
    doc = sol.to_doc()
    doc["rates"] = dict(sorted(rates.items()))
    doc["weights"] = {k: getattr(weights, k) for k in ("alpha1", "alpha2", "alpha3", "alpha4")}
    _write(args.out, json.dumps(doc, sort_keys=True, indent=2) + "\n",
           {"seed": args.seed, "wall_s": round(wall, 3), "nodes": res.search.stats.nodes})
    o = sol.objective
    print(f"status      {sol.status}")
    print(f"gap         {sol.gap:.3g}")
    print(f"eta         {sol.eta:.6f}")
    print(f"migrations  {sol.migrations}")
    print(f"extra edges {sol.extra_edges}")
    print(f"objective   {o.total:.9g} (load {o.load:.9g}, migration {o.migration:.9g}, "
          f"extra edges {o.extra_edge:.9g}, margin {o.margin:.9g})")
    if sol.delta:
        print("margins     " + ", ".join(f"{r}={v * 1e3:.6f} ms" for r, v in sorted(sol.delta.items())))
    if args.require_optimal and sol.status != "optimal":
        return EXIT_CAPPED
    return 0


def _sweep_spec(args, margins=None) -> SweepSpec:
    return SweepSpec(
        fixed_rates=_parse_rates(args.fixed, None),
        swept=tuple(args.swept.split(",")),
        start=args.start,
        stop=args.stop,
        step=args.step,
        strategy=preset(args.preset),
        params=_params(args),
        prev_mode=args.prev_mode,
        margin_sfcs=margins,
        margin_weight=getattr(args, "alpha4", MARGIN_WEIGHT),
        allow_migration=not getattr(args, "no_migration", False),
    )


def _emit_records(args, records, t0) -> int:
    meta = {"seed": args.seed, "wall_s": round(time.perf_counter() - t0, 3),
            "point_ms": [round(r.wall_ms, 1) for r in records], "summary": summarize(records)}
    _write(args.out, records_to_csv(records, timing=args.timing), meta)
    if args.plot_json:
        _write(args.plot_json, records_to_plot_json(records))
    s = summarize(records)
    print(f"points {s['points']}: optimal {s['optimal']}, capped {s['capped']}, infeasible {s['infeasible']}",
          file=sys.stderr)
    if args.require_optimal and s["capped"]:
        return EXIT_CAPPED
    return 0


def cmd_sweep(args) -> int:
    inst, prev = _load(args)
    t0 = time.perf_counter()
    return _emit_records(args, run_sweep(inst, prev, _sweep_spec(args)), t0)


def cmd_margin(args) -> int:
    inst, prev = _load(args)
    t0 = time.perf_counter()
    spec = _sweep_spec(args, frozenset(args.margin_sfcs.split(",")))
    return _emit_records(args, run_margin_experiment(inst, prev, spec), t0)


def cmd_boundary(args) -> int:
    inst, prev = _load(args)
    hard = args.hard_sfcs.split(",") if args.hard_sfcs else None
    value = max_feasible_rate(
        inst, prev, args.sfc.split(","), _parse_rates(args.fixed, None), allow_migration=not args.no_migration,
        hard_delay_sfcs=hard, bracket=(args.low, args.high), resolution=args.resolution, params=_params(args),
    )
    print(f"{value:g}")
    return 0


def cmd_simulate(args) -> int:
    inst = load_instance(_read(args.instance))
    doc = json.loads(_read(args.solution))
    rates = _parse_rates(args.rates, args.rates_file) or {k: float(v) for k, v in doc.get("rates", {}).items()}
    missing = [r for r in inst.sfc_ids if r not in rates]
    if missing:
        raise InstanceError([f"no rate for SFC {r!r}" for r in missing])
    alloc = Allocation.from_doc(doc)
    stats = simulate(inst, alloc, rates, SimConfig(args.packets, args.warmup, args.seed))
    report = compare_to_model(inst, stats, alloc, rates, args.threshold)
    _write(args.out, stats.to_csv(), {"seed": args.seed, "packets": args.packets, "warmup": args.warmup})
    sys.stderr.write(report.render())
    return 0 if report.passed else EXIT_SIM_MISMATCH


def cmd_gen_topology(args) -> int:
    if args.kind == "mesh":
        inst, prev = generate_paper_topology(args.seed)
    elif args.kind == "tiny":
        inst, prev, _ = generate_tiny_instance(args.seed)
    else:
        inst, prev = dedicated_chain_instance()
    _write(args.out, json.dumps(instance_to_dict(inst), sort_keys=True, indent=1) + "\n", {"seed": args.seed})
    if args.prev_out:
        doc = {"interval": prev.interval, "assign": prev.to_doc()}
        _write(args.prev_out, json.dumps(doc, sort_keys=True, indent=1) + "\n", {"seed": args.seed})
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench

    report = run_bench(args.suite, time_cap_s=args.time_cap)
    _write(args.out, report.to_csv())
    sys.stderr.write(report.render())
    return 0 if report.ok or not args.strict else 1


# ---------------------------------------------------------------- parser


def _search_flags(p) -> None:
    p.add_argument("--gap", type=float, default=1e-6, help="absolute optimality gap target")
    p.add_argument("--time-cap", type=float, default=120.0, help="wall-clock cap per solve, seconds")
    p.add_argument("--node-cap", type=int, default=200_000, help="node cap per solve")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=200, help="progress line every N nodes (with -v)")
    p.add_argument("--require-optimal", action="store_true", help="exit 4 if any solve is capped")


def _sweep_flags(p) -> None:
    p.add_argument("--instance", required=True)
    p.add_argument("--prev", required=True, help="initial mapping document")
    p.add_argument("--preset", default="HFM", choices=sorted(PRESETS))
    p.add_argument("--fixed", default="1=700,2=200", help="fixed rates, e.g. 1=700,2=200")
    p.add_argument("--swept", default="3", help="comma-separated SFC ids that share the swept rate")
    p.add_argument("--start", type=float, default=200.0)
    p.add_argument("--stop", type=float, default=780.0)
    p.add_argument("--step", type=float, default=20.0)
    p.add_argument("--prev-mode", default="chained", choices=["initial", "chained"])
    p.add_argument("--out", default="-")
    p.add_argument("--plot-json", help="also write plot data grouped by strategy")
    p.add_argument("--timing", action="store_true", help="fill the ms column (makes output run-dependent)")
    _search_flags(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowmig", description="Delay-aware SFC flow migration optimizer")
    ap.add_argument("-v", "--verbose", action="store_true", help="log search progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an instance (and optionally a mapping)")
    p.add_argument("instance")
    p.add_argument("--prev")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve one interval")
    p.add_argument("--instance", required=True)
    p.add_argument("--prev", required=True)
    p.add_argument("--rates", help="e.g. 1=700,2=200,3=700")
    p.add_argument("--rates-file", help="JSON object of SFC -> rate")
    p.add_argument("--preset", default="HFM", choices=sorted(PRESETS))
    p.add_argument("--weights", help="explicit a1,a2,a3[,a4]; overrides --preset")
    p.add_argument("--soft-delay", action="store_true")
    p.add_argument("--margin-sfcs", help="SFCs allowed a deadline margin (default: all, with --soft-delay)")
    p.add_argument("--alpha4", type=float, default=MARGIN_WEIGHT, help="margin weight per second")
    p.add_argument("--out", default="-")
    _search_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="one strategy over a rate sweep (CSV)")
    _sweep_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("margin", help="rate sweep with deadline margins (CSV)")
    _sweep_flags(p)
    p.set_defaults(fixed="1=200,2=200", stop=980.0)
    p.add_argument("--margin-sfcs", default="3")
    p.add_argument("--alpha4", type=float, default=MARGIN_WEIGHT, help="margin weight per second")
    p.add_argument("--no-migration", action="store_true", help="pin the mapping to --prev")
    p.set_defaults(func=cmd_margin)

    p = sub.add_parser("boundary", help="largest feasible rate for one SFC")
    p.add_argument("--instance", required=True)
    p.add_argument("--prev", required=True)
    p.add_argument("--sfc", default="3", help="SFC id, or comma-separated ids sharing the probed rate")
    p.add_argument("--fixed", default="1=200,2=200")
    p.add_argument("--hard-sfcs", help="SFCs with hard deadlines (default: all)")
    p.add_argument("--no-migration", action="store_true")
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=1000.0)
    p.add_argument("--resolution", type=float, default=1.0)
    _search_flags(p)
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("simulate", help="queue simulation of a solve output")
    p.add_argument("--instance", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--rates", help="override the rates stored in the solution document")
    p.add_argument("--rates-file")
    p.add_argument("--packets", type=int, default=1_000_000)
    p.add_argument("--warmup", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.03)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-topology", help="write a generated instance and initial mapping")
    p.add_argument("--kind", default="mesh", choices=["mesh", "tiny", "chain"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.add_argument("--prev-out")
    p.set_defaults(func=cmd_gen_topology)

    p = sub.add_parser("bench", help="timing budgets")
    p.add_argument("--suite", default="cone", choices=["cone", "tiny", "mesh", "all"])
    p.add_argument("--time-cap", type=float, default=120.0)
    p.add_argument("--strict", action="store_true", help="exit 1 when a budget is missed")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    try:
        return args.func(args)
    except InstanceError as exc:
        for msg in exc.problems:
            print(msg if exc.kind == "parse" else f"invalid: {msg}", file=sys.stderr)
        return EXIT_PARSE if exc.kind == "parse" else EXIT_INVALID
    except json.JSONDecodeError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
