"""Slice planning: minimise active MEC nodes under a per-slice latency bound.

The latency bound is not linear in the assignment, so it is kept out of
the integer program.  Instead the program is solved, every resulting slice
is checked with a latency evaluator, and each violating slice membership is
excluded with a no-good cut before re-solving.  If too many rounds pass
without success at one MEC-count lower bound, the bound is raised.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import InfeasibleError, ModelError, OverloadError, ParameterError, TopologyError
from .ilp import EQ, GE, LE, BinaryLinearProgram, BnbResult, solve_bnb
from .latency import ChannelConfig, LatencyModel, SliceLatencyReport
from .layout import Layout, neighbor_sets, ring_order, slice_ring
from .traffic import RateLadder, Split, default_ladders
from .tsp import RingOrder

log = logging.getLogger(__name__)

Evaluator = Callable[[int, tuple], float]


@dataclass(frozen=True)
class Costs:
    """Per-tree MEC capacity cost and per-wavelength OLT cost."""

    cap: float | Mapping[int, float] = 1.0
    olt: float | Mapping[int, float] = 0.0

    def coefficient(self, tree: int, wavelengths: int) -> float:
        cap = self.cap.get(tree, 1.0) if isinstance(self.cap, Mapping) else self.cap
        olt = self.olt.get(tree, 0.0) if isinstance(self.olt, Mapping) else self.olt
        return float(cap) + wavelengths * float(olt)


@dataclass
class SliceProgram(BinaryLinearProgram):
    alpha: dict[int, int] = field(default_factory=dict)
    x: dict[tuple[int, int], int] = field(default_factory=dict)
    candidates: dict[int, list[int]] = field(default_factory=dict)
    lower_bound: int = 1
    cut_sets: dict[int, list[tuple[frozenset, int]]] = field(default_factory=dict)

    def set_lower_bound(self, lb: int) -> None:
        self.lower_bound = int(lb)
        self.rows[self.cardinality_row].rhs = float(lb)

    def decode(self, values) -> tuple[list[int], dict[int, list[int]]]:
        """Active trees (alpha = 1) and tree -> assigned RU ids."""
        active = sorted(v for v, j in self.alpha.items() if values[j])
        slices: dict[int, list[int]] = {}
        for (r, v), j in self.x.items():
            if values[j]:
                slices.setdefault(v, []).append(r)
        return active, {v: sorted(rs) for v, rs in sorted(slices.items())}


def build_model(
    layout: Layout,
    neighbors: Mapping[int, Sequence[int]],
    costs: Costs | None = None,
    lower_bound: int = 1,
    wavelengths: int = 1,
) -> SliceProgram:
    """Assignment/linking/completeness/neighbor-restricted slice program.

    Each RU may only join a slice rooted at one of the trees listed in
    ``neighbors`` for its own tree; that restriction is built into the
    variable set rather than written as rows.
    """
    if not layout.smalls:
        raise ModelError("layout has no RUs")
    if lower_bound < 1:
        raise ModelError(f"lower_bound must be >= 1, got {lower_bound}")
    costs = costs or Costs()
    prog = SliceProgram()
    n_ru = len(layout.smalls)
    trees = sorted(layout.tree_ids, key=lambda t: (-len(layout.tree_members[t]), t))
    for v in trees:
        prog.alpha[v] = prog.add_var(f"alpha[{v}]", costs.coefficient(v, wavelengths))
        prog.branch_first[prog.alpha[v]] = 1
    prog.branch_order.extend(prog.alpha[v] for v in trees)

    for ru in sorted(layout.smalls, key=lambda r: r.id):
        cands = list(neighbors.get(ru.tree_id, ()))
        if not cands:
            raise ModelError(f"RU {ru.id} has no candidate trees")
        prog.candidates[ru.id] = cands
        for v in cands:
            j = prog.add_var(f"x[{ru.id},{v}]")
            prog.x[(ru.id, v)] = j
            prog.branch_order.append(j)
            prog.branch_first[j] = 1

    for r, cands in prog.candidates.items():
        prog.add_row({prog.x[(r, v)]: 1 for v in cands}, EQ, 1, f"assign[{r}]")
    for v in layout.tree_ids:
        coefs = {j: 1.0 for (r, t), j in prog.x.items() if t == v}
        coefs[prog.alpha[v]] = -float(n_ru)
        prog.add_row(coefs, LE, 0, f"link[{v}]")
    prog.add_row({j: 1 for j in prog.x.values()}, EQ, n_ru, "complete")
    prog.cardinality_row = prog.add_row({j: 1 for j in prog.alpha.values()}, GE, lower_bound, "min_mec")
    prog.lower_bound = lower_bound
    return prog


def add_nogood_cut(program: SliceProgram, tree: int, members: Iterable[int]) -> SliceProgram:
    """Forbid slice ``tree`` from containing all of ``members`` while active."""
    members = sorted(set(members))
    if not members:
        raise ParameterError("a no-good cut needs at least one member")
    try:
        coefs = {program.x[(r, tree)]: 1.0 for r in members}
    except KeyError as exc:
        raise ParameterError(f"RU {exc.args[0][0]} cannot be assigned to tree {tree}") from None
    coefs[program.alpha[tree]] = -float(len(members) - 1)
    row = program.add_row(coefs, LE, 0, f"cut[{tree}:{','.join(map(str, members))}]")
    program.n_cuts += 1
    # A cut on a subset implies every earlier cut on a superset for the same tree.
    new = frozenset(members)
    pool = program.cut_sets.setdefault(tree, [])
    for old, old_row in pool:
        if new < old:
            program.redundant.add(old_row)
    pool.append((new, row))
    return program


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    lower_bound: int
    violations: int
    cuts: int
    incumbent: float


@dataclass
class SliceSolution:
    active_trees: list[int]
    slices: dict[int, list[int]]
    latency_us: dict[int, float]
    reports: dict[int, SliceLatencyReport]
    objective: float
    iterations: int
    cuts: int
    wall_ms: float
    lower_bound: int
    diagnostics: list[IterationRecord] = field(default_factory=list)
    rings: dict[int, RingOrder] = field(default_factory=dict)
    mec_ring: RingOrder | None = None

    @property
    def mec_count(self) -> int:
        return len(self.active_trees)

    def assignment(self) -> dict[int, int]:
        return {r: v for v, rs in self.slices.items() for r in rs}

    def edges(self) -> list[tuple[int, int]]:
        """(RU id, MEC tree id) links, sorted by RU."""
        return sorted(self.assignment().items())

    def to_dict(self) -> dict:
        return {
            "active_trees": list(self.active_trees),
            "slices": {str(v): list(rs) for v, rs in self.slices.items()},
            "latency_us": {str(v): _json_float(t) for v, t in self.latency_us.items()},
            "objective": self.objective,
            "iterations": self.iterations,
            "cuts": self.cuts,
            "wall_ms": self.wall_ms,
        }

    def diagnostics_rows(self) -> list[dict]:
        return [
            {"iteration": d.iteration, "lb": d.lower_bound, "violations": d.violations, "cuts": d.cuts, "incumbent": d.incumbent}
            for d in self.diagnostics
        ]


def _json_float(x: float):
    return x if math.isfinite(x) else None


def diff_solutions(old: SliceSolution, new: SliceSolution) -> dict:
    """MEC openings/closings and RU moves between two plans (migration view)."""
    a, b = old.assignment(), new.assignment()
    return {
        "opened": sorted(set(new.active_trees) - set(old.active_trees)),
        "closed": sorted(set(old.active_trees) - set(new.active_trees)),
        "moved": {r: (a.get(r), b.get(r)) for r in sorted(set(a) | set(b)) if a.get(r) != b.get(r)},
    }


class AnalyticEvaluator:
    """Slice latency from the analytical model, cached per (tree, members)."""

    def __init__(self, layout: Layout, model: LatencyModel, neighbors: Mapping[int, Sequence[int]] | None = None):
        self.layout = layout
        self.model = model
        self.neighbors = neighbors
        self.reports: dict[tuple, SliceLatencyReport | None] = {}
        self.calls = 0

    def report(self, tree: int, members: Sequence[int]) -> SliceLatencyReport | None:
        key = (tree, tuple(sorted(members)))
        if key in self.reports:
            return self.reports[key]
        self.calls += 1
        rep = layout_slice_latency(self.layout, tree, key[1], self.model, self.neighbors)
        self.reports[key] = rep
        return rep

    def __call__(self, tree: int, members: Sequence[int]) -> float:
        rep = self.report(tree, members)
        return math.inf if rep is None else rep.total


def layout_slice_latency(
    layout: Layout,
    tree: int,
    ru_ids: Sequence[int],
    model: LatencyModel,
    neighbors: Mapping[int, Sequence[int]] | None = None,
) -> SliceLatencyReport | None:
    """Analytical report for RUs ``ru_ids`` served by the MEC at ``tree``.

    Returns ``None`` when the slice overloads its channel.
    """
    rus = [layout.ru(r) for r in ru_ids]
    if neighbors is not None:
        for ru in rus:
            if tree not in neighbors.get(ru.tree_id, ()):
                raise TopologyError(f"RU {ru.id} (tree {ru.tree_id}) cannot reach MEC tree {tree}")
    distances = [layout.ru_to_tree(r, tree) for r in ru_ids]
    try:
        return model.report(rus, distances)
    except OverloadError:
        return None


def optimize_slices(
    layout: Layout,
    load_scale: float,
    threshold: float = 100.0,
    max_iterations: int = 10,
    cfg: ChannelConfig | None = None,
    ladders: Mapping[Split, RateLadder] | None = None,
    *,
    w: int = 3,
    costs: Costs | None = None,
    evaluator: Evaluator | None = None,
    node_limit: int | None = None,
    minimal_cuts: bool = False,
) -> SliceSolution:
    """Fewest MEC nodes such that every slice meets ``threshold`` microseconds.

    ``evaluator(tree, members) -> latency_us`` replaces the analytical model
    when given (e.g. a simulator).  With ``minimal_cuts`` each violating
    slice is first shrunk to a minimal still-violating subset, so one cut
    also excludes every other slice containing that subset; this is valid
    only for evaluators whose latency never drops when members are added.
    Raises :class:`InfeasibleError` when the
    program runs out of candidate configurations.
    """
    if max_iterations < 1:
        raise ParameterError(f"max_iterations must be >= 1, got {max_iterations}")
    start = time.perf_counter()
    cfg = cfg or ChannelConfig()
    ladders = ladders or default_ladders()
    neighbors = neighbor_sets(layout, w)
    analytic = AnalyticEvaluator(layout, LatencyModel(cfg, ladders, load_scale), neighbors)
    evaluate = evaluator or analytic

    program = build_model(layout, neighbors, costs, 1, cfg.wavelengths)
    diagnostics: list[IterationRecord] = []
    latency_cache: dict[tuple, float] = {}

    def solve() -> BnbResult:
        res = solve_bnb(program, node_limit)
        if res.status == "node_limit":
            raise InfeasibleError("branch-and-bound node limit reached", diagnostics, total, program.n_cuts)
        return res

    def cached(v, members):
        key = (v, tuple(members))
        if key not in latency_cache:
            latency_cache[key] = evaluate(v, key[1])
        return latency_cache[key]

    def check(values):
        _, slices = program.decode(values)
        latencies, bad = {}, []
        for v, members in slices.items():
            latencies[v] = cached(v, members)
            if not latencies[v] <= threshold:
                bad.append(v)
        return slices, latencies, bad

    total = 0
    res = solve()
    if not res.ok:
        raise InfeasibleError("slice program is infeasible", diagnostics, 0, 0)
    lower = int(sum(res.values[j] for j in program.alpha.values()))
    program.set_lower_bound(lower)
    slices, latencies, bad = check(res.values)
    diagnostics.append(IterationRecord(0, lower, len(bad), 0, res.objective))

    iteration_id = 0
    while bad:
        if iteration_id >= max_iterations:
            lower += 1
            program.set_lower_bound(lower)
            iteration_id = 0
            log.debug("raising MEC lower bound to %d after %d cuts", lower, program.n_cuts)
        else:
            iteration_id += 1
        for v in bad:
            members = shrink_violation(v, slices[v], cached, threshold) if minimal_cuts else slices[v]
            add_nogood_cut(program, v, members)
        total += 1
        res = solve()
        if not res.ok:
            diagnostics.append(IterationRecord(total, lower, len(bad), program.n_cuts, math.inf))
            raise InfeasibleError(
                f"no feasible slice configuration (lower bound {lower}, {program.n_cuts} cuts)",
                diagnostics,
                total,
                program.n_cuts,
            )
        slices, latencies, bad = check(res.values)
        diagnostics.append(IterationRecord(total, lower, len(bad), program.n_cuts, res.objective))

    active = sorted(slices)
    objective = sum(program.objective[program.alpha[v]] for v in active)
    reports = {v: analytic.report(v, slices[v]) for v in active}
    rings = {v: slice_ring(layout, v, slices[v]) for v in active}
    mec_ring = ring_order([layout.macro(v).position for v in active])
    return SliceSolution(
        active_trees=active,
        slices=slices,
        latency_us=latencies,
        reports=reports,
        objective=objective,
        iterations=total,
        cuts=program.n_cuts,
        wall_ms=(time.perf_counter() - start) * 1e3,
        lower_bound=lower,
        diagnostics=diagnostics,
        rings=rings,
        mec_ring=mec_ring,
    )


def shrink_violation(tree: int, members: Sequence[int], evaluate: Evaluator, threshold: float) -> list[int]:
    """Drop members one at a time (last first) while the slice still violates."""
    keep = sorted(members)
    for r in sorted(members, reverse=True):
        trial = [m for m in keep if m != r]
        if trial and not evaluate(tree, tuple(trial)) <= threshold:
            keep = trial
    return keep


def brute_force_min_mec(
    layout: Layout,
    neighbors: Mapping[int, Sequence[int]],
    evaluate: Evaluator,
    threshold: float,
    prune: bool = False,
) -> tuple[int | None, dict[int, list[int]] | None]:
    """Exhaustive search over neighbor-respecting assignments (small inputs).

    Returns the fewest non-empty slices meeting ``threshold`` and one
    witness partition, or ``(None, None)`` when nothing is feasible.  With
    ``prune`` a partial slice that already violates the threshold is
    abandoned, which is exact only when latency never drops as members are
    added (true of the analytical model).
    """
    rus = sorted(layout.ru_ids)
    options = [neighbors[layout.ru(r).tree_id] for r in rus]
    cache: dict[tuple, bool] = {}
    best: list = [None, None]

    def ok(v, members) -> bool:
        key = (v, tuple(members))
        if key not in cache:
            cache[key] = evaluate(v, key[1]) <= threshold
        return cache[key]

    slices: dict[int, list[int]] = {}

    def dfs(i: int):
        if best[0] is not None and len(slices) >= best[0]:
            return
        if i == len(rus):
            if prune or all(ok(v, m) for v, m in slices.items()):
                best[0], best[1] = len(slices), {v: list(m) for v, m in sorted(slices.items())}
            return
        for v in options[i]:
            members = slices.setdefault(v, [])
            members.append(rus[i])
            if not prune or ok(v, members):
                dfs(i + 1)
            members.pop()
            if not members:
                del slices[v]

    dfs(0)
    return best[0], best[1]
