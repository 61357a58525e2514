"""Command-line entry point: ``vpon <command> --config scenario.json --out DIR``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from .errors import InfeasibleError, LayoutError, ParameterError, ScenarioError
from .latency import LatencyModel, region_table
from .optimizer import optimize_slices
from .parallel import parallel_map
from .scenario import Scenario
from .traffic import Split
from .sim import SimEvaluator, validate

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("vpon")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(round(v, 6))
    return v


def _load_tag(load: float) -> str:
    return f"{load:g}"


# -- feasibility --
def _feasibility_job(args):
    sc, load = args
    table = region_table(load, sc.max71, sc.max72, sc.channel, sc.ladders, sc.feasibility_distance_km, sc.profiles)
    return load, table


def cmd_feasibility(sc: Scenario, out: Path) -> int:
    results = parallel_map(_feasibility_job, [(sc, load) for load in sorted(set(sc.loads))])
    rows = []
    for load, table in results:
        feasible = 0
        for (a, b), total in sorted(table.items()):
            ok = total <= sc.threshold_us
            feasible += ok
            rows.append((load, a, b, total, ok))
        print(f"load {load:g}: {feasible} feasible mixes")
    _write_csv(out / "feasibility.csv", ["load", "n71", "n72", "latency_us", "feasible"], rows)
    return EXIT_OK


# -- optimize --
def _optimize_job(args):
    sc, seed, load, iters = args
    layout = sc.build_layout(seed)
    try:
        sol = optimize_slices(
            layout, load, sc.threshold_us, iters, sc.channel, sc.ladders, w=sc.w, costs=sc.costs
        )
        return seed, load, iters, layout, sol, None
    except InfeasibleError as exc:
        return seed, load, iters, layout, None, exc


SLICE_HEADER = ["slice_id", "n71", "n72", "load", "wait_us", "prop_us", "total_us", "rho"]


def _slice_rows(layout, sol, sc: Scenario, load: float):
    model = LatencyModel(sc.channel, sc.ladders, load)
    for v in sol.active_trees:
        rus = [layout.ru(r) for r in sol.slices[v]]
        rep = model.report(rus, [layout.ru_to_tree(r, v) for r in sol.slices[v]])
        n71 = sum(ru.split == Split.SPLIT_71 for ru in rus)
        yield v, n71, len(rus) - n71, load, rep.wait, rep.propagation, rep.total, rep.utilization


def cmd_optimize(sc: Scenario, out: Path) -> int:
    jobs = [(sc, s, l, i) for s in sc.seeds for l in sorted(set(sc.loads)) for i in sc.max_iterations]
    edges = []
    infeasible = []
    for seed, load, iters, layout, sol, err in parallel_map(_optimize_job, jobs):
        tag = f"s{seed}_l{_load_tag(load)}_i{iters}"
        layout.save(out / f"layout_s{seed}.json")
        if err is not None:
            report = {
                "status": "infeasible",
                "seed": seed,
                "load": load,
                "max_iterations": iters,
                "reason": str(err),
                "iterations": err.iterations,
                "cuts": err.cuts,
            }
            infeasible.append(report)
            diag = [(d.iteration, d.lower_bound, d.violations, d.cuts, d.incumbent) for d in err.diagnostics]
            print(f"seed {seed} load {load:g} iters {iters}: infeasible ({err})")
        else:
            (out / f"solution_{tag}.json").write_text(json.dumps(sol.to_dict(), indent=2))
            _write_csv(out / f"slices_{tag}.csv", SLICE_HEADER, _slice_rows(layout, sol, sc, load))
            diag = [(d["iteration"], d["lb"], d["violations"], d["cuts"], d["incumbent"]) for d in sol.diagnostics_rows()]
            for ru, mec in sol.edges():
                edges.append((seed, load, iters, ru, mec, layout.ru_to_tree(ru, mec)))
            print(
                f"seed {seed} load {load:g} iters {iters}: {sol.mec_count} MECs, "
                f"{sol.iterations} iterations, {sol.cuts} cuts, {sol.wall_ms:.1f} ms"
            )
        _write_csv(out / f"diagnostics_{tag}.csv", ["iteration", "lb", "violations", "cuts", "incumbent"], diag)
    _write_csv(out / "edges.csv", ["seed", "load", "max_iterations", "ru", "mec", "distance_km"], edges)
    if infeasible:
        (out / "infeasible.json").write_text(json.dumps(infeasible, indent=2))
        return EXIT_INFEASIBLE
    return EXIT_OK


# -- validate --
def cmd_validate(sc: Scenario, out: Path) -> int:
    rows = validate(
        sc.validation_grid(),
        sc.loads,
        sc.sim,
        sc.ladders,
        sc.threshold_us,
        sc.tolerance,
        sc.validate_distance_km,
        sc.profiles,
    )
    _write_csv(
        out / "validation.csv",
        ["n71", "n72", "load", "sim_mean_us", "analytic_us", "rel_err", "feasible_sim", "feasible_analytic"],
        [tuple(r.as_csv().values()) for r in rows],
    )
    checked = [r for r in rows if r.rho <= sc.max_rho and not r.overloaded]
    flagged = [r for r in checked if not r.within_tol]
    worst = max((r.rel_err for r in checked), default=0.0)
    print(
        f"{len(rows)} cells, {len(checked)} with rho <= {sc.max_rho:g}; "
        f"max rel_err {worst:.4f}; {len(flagged)} above tolerance {sc.tolerance:g}"
    )
    return EXIT_OK


# -- benchmark --
def _timed_optimize(layout, sc: Scenario, load: float, iters: int, evaluator=None):
    start = time.perf_counter()
    try:
        sol = optimize_slices(
            layout, load, sc.threshold_us, iters, sc.channel, sc.ladders,
            w=sc.w, costs=sc.costs, evaluator=evaluator,
        )
        count = sol.mec_count
    except InfeasibleError:
        count = math.inf
    return (time.perf_counter() - start) * 1e3, count


def cmd_benchmark(sc: Scenario, out: Path) -> int:
    # Timings run sequentially so they do not compete for cores.
    layout = sc.build_layout(sc.seeds[0])
    rows = []
    for load in sorted(set(sc.loads)):
        for iters in sc.bench_iterations:
            wall, count = _timed_optimize(layout, sc, load, iters)
            rows.append((load, iters, wall, count))
            print(f"load {load:g} iters {iters}: {wall:.1f} ms, {count} MECs")
    _write_csv(out / "benchmark.csv", ["load", "max_iterations", "wall_ms", "mec_count"], rows)
    if sc.sim_in_loop:
        sim_rows = []
        sim_cfg = replace(sc.sim, duration=sc.sim_duration, warmup=None)
        for load, iters, wall, count in rows:
            evaluator = SimEvaluator(layout, load, sim_cfg, sc.ladders)
            sim_wall, sim_count = _timed_optimize(layout, sc, load, iters, evaluator)
            sim_rows.append((load, iters, sim_wall, sim_count))
            print(
                f"load {load:g} iters {iters}: simulation in the loop {sim_wall:.1f} ms, "
                f"{sim_count} MECs, speedup {sim_wall / wall:.1f}x"
            )
        _write_csv(out / "benchmark_sim.csv", ["load", "max_iterations", "wall_ms", "mec_count"], sim_rows)
    return EXIT_OK


def cmd_gen_layout(sc: Scenario, out: Path) -> int:
    for seed in sc.seeds:
        layout = sc.build_layout(seed)
        name = "layout.json" if len(sc.seeds) == 1 else f"layout_s{seed}.json"
        layout.save(out / name)
        print(f"seed {seed}: {len(layout.macros)} trees, {len(layout.smalls)} RUs -> {out / name}")
    return EXIT_OK


COMMANDS = {
    "feasibility": cmd_feasibility,
    "optimize": cmd_optimize,
    "validate": cmd_validate,
    "benchmark": cmd_benchmark,
    "gen-layout": cmd_gen_layout,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpon", description="Latency-aware vPON slice planning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="scenario JSON (defaults apply when omitted)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, help="override the scenario seeds with a single seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        sc = Scenario.load(args.config) if args.config else Scenario.from_dict({})
        if args.seed is not None:
            sc = sc.with_seed(args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](sc, args.out)
    except (ScenarioError, ParameterError, LayoutError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
