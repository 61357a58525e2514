"""End-to-end acceptance checks, one test group per criterion.

Each group is tagged with ``criterion`` so the terminal summary prints a
single PASS/FAIL line per criterion.
"""

import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from vpon.errors import InfeasibleError, OverloadError
from vpon.latency import (
    ChannelConfig,
    LatencyModel,
    convolve,
    feasibility_region,
    kingman_wait,
    slice_aggregate_pmf,
    slice_latency,
)
from vpon.layout import generate_layout, neighbor_sets
from vpon.optimizer import AnalyticEvaluator, brute_force_min_mec, optimize_slices
from vpon.sim import SimConfig, SimEvaluator, simulate_slice, validate
from vpon.traffic import RuProfile, Split, default_ladders, erlang_occupancy, ru_size_pmf
from vpon.tsp import brute_force_tour, distance_matrix, held_karp, heuristic_tour, ring_order

CFG = ChannelConfig()
LADDERS = default_ladders()
THRESHOLD = 100.0
DESK_CYCLES = 100_000


def crit(number, title):
    return pytest.mark.criterion(number, title)


def nearest_trees(layout, ru_id, w):
    """Recomputed from raw coordinates, independent of the layout helpers."""
    own = layout.macro(layout.ru(ru_id).tree_id).position
    ranked = sorted(layout.tree_ids, key=lambda t: (math.dist(own, layout.macro(t).position), t))
    return ranked[:w]


# -- 1: analytics vs simulation --
C1 = crit(1, "simulated mean total latency within 15% of analytic for rho <= 0.85")


@C1
def test_simulation_agrees_with_analytics(record_property):
    grid = [(a, b) for a in range(9) for b in range(9) if 1 <= a + b <= 8]
    loads = [round(0.1 * i, 1) for i in range(1, 9)]
    start = time.perf_counter()
    rows = validate(grid, loads, SimConfig(duration=DESK_CYCLES, seed=0))
    elapsed = time.perf_counter() - start
    checked = [r for r in rows if r.rho <= 0.85]
    worst = max(checked, key=lambda r: r.rel_err)
    record_property(
        "detail",
        f"{len(checked)}/{len(rows)} cells checked, max rel_err {worst.rel_err:.4f} "
        f"at ({worst.n71},{worst.n72},{worst.load}), {elapsed:.0f} s",
    )
    assert len(rows) == len(grid) * len(loads)
    assert not any(r.overloaded for r in checked)
    bad = [(r.n71, r.n72, r.load, round(r.rel_err, 4)) for r in checked if r.rel_err > 0.15]
    assert not bad
    assert elapsed < 300


# -- 2: feasibility region monotonicity --
C2 = crit(2, "feasibility region shrinks with load and is downward closed")
REGION_LOADS = [round(0.1 * i, 1) for i in range(1, 11)]


@pytest.fixture(scope="module")
def regions():
    return {load: feasibility_region(load, THRESHOLD, 30, 30, CFG, LADDERS) for load in REGION_LOADS}


@C2
def test_region_nested_across_loads(regions, record_property):
    record_property("detail", "sizes " + ", ".join(f"{l}:{len(regions[l])}" for l in REGION_LOADS))
    for low, high in zip(REGION_LOADS, REGION_LOADS[1:]):
        assert regions[high] <= regions[low]


@C2
@pytest.mark.parametrize("load", REGION_LOADS)
def test_region_downward_closed(regions, load):
    region = regions[load]
    for a, b in region:
        for c, d in itertools.product(range(a + 1), range(b + 1)):
            if (c, d) != (0, 0):
                assert (c, d) in region


# -- 3: optimizer soundness --
C3 = crit(3, "returned slices partition the RUs, respect neighbours and meet the threshold")


def verify_plan(lay, sol, load, w, seed):
    members = [r for rs in sol.slices.values() for r in rs]
    assert sorted(members) == sorted(lay.ru_ids) and len(set(members)) == len(members)
    assert set(sol.active_trees) == set(sol.slices)
    worst_sim = 0.0
    for v, rs in sol.slices.items():
        for r in rs:
            assert v in nearest_trees(lay, r, w)
        rus = [lay.ru(r) for r in rs]
        dists = [math.dist(lay.ru(r).position, lay.macro(v).position) * lay.detour for r in rs]
        assert slice_latency(rus, dists, load, CFG, LADDERS).total <= THRESHOLD
        stats = simulate_slice(rus, dists, load, SimConfig(duration=DESK_CYCLES, seed=seed))
        assert not stats.overloaded
        assert stats.mean_total <= THRESHOLD * 1.15
        worst_sim = max(worst_sim, stats.mean_total)
    return worst_sim


@C3
def test_returned_plans_reverified(record_property):
    w, returned, notes = 3, 0, []
    for seed, load in itertools.product(range(4), (0.3, 0.5)):
        lay = generate_layout(seed, 4, 3, (0, 0, 2, 2))
        try:
            sol = optimize_slices(lay, load, THRESHOLD, 70, w=w)
        except InfeasibleError as exc:
            assert exc.diagnostics
            notes.append(f"s{seed}/l{load}: no plan in budget")
            continue
        worst = verify_plan(lay, sol, load, w, seed)
        returned += 1
        notes.append(f"s{seed}/l{load}: {sol.mec_count} MECs, worst sim {worst:.1f} us")
    record_property("detail", "; ".join(notes))
    assert returned >= 6


# -- 4: optimality on small instances --
C4 = crit(4, "MEC count equals brute force on instances with <= 10 RUs and <= 3 trees")


def small_instances():
    for seed in range(8):
        lay = generate_layout(seed, 3, 3, (0, 0, 2, 2))
        if len(lay.smalls) <= 10:
            yield seed, lay


@C4
def test_matches_brute_force(record_property):
    start = time.perf_counter()
    checked = 0
    for seed, lay in small_instances():
        for load in (0.3, 0.5, 0.8):
            nb = neighbor_sets(lay, 3)
            ev = AnalyticEvaluator(lay, LatencyModel(CFG, LADDERS, load), nb)
            best, _ = brute_force_min_mec(lay, nb, ev, THRESHOLD)
            if best is None:
                with pytest.raises(InfeasibleError):
                    optimize_slices(lay, load, THRESHOLD, 10**6, w=3)
            else:
                assert optimize_slices(lay, load, THRESHOLD, 10**6, w=3).mec_count == best, (seed, load)
            checked += 1
    elapsed = time.perf_counter() - start
    record_property("detail", f"{checked} instances, {elapsed:.1f} s")
    assert checked >= 10
    assert elapsed < 60


# -- 5: iteration-quality dominance --
C5 = crit(5, "70 iterations never worse than 10, strictly better somewhere")


@C5
def test_more_iterations_dominate(record_property):
    counts = {}
    for seed in range(1, 6):
        lay = generate_layout(seed, 4, 3, (0, 0, 2, 2))
        counts[seed] = tuple(optimize_slices(lay, 0.5, THRESHOLD, it, w=3).mec_count for it in (10, 70))
    record_property("detail", ", ".join(f"s{s}:{a}->{b}" for s, (a, b) in counts.items()))
    assert all(b <= a for a, b in counts.values())
    assert any(b < a for a, b in counts.values())


# -- 6: analytic vs simulation-in-the-loop speed --
C6 = crit(6, "analytic optimization >= 10x faster than simulation in the loop, same MEC count")


@C6
def test_analytic_speedup(record_property):
    lay = generate_layout(1, 4, 3, (0, 0, 2, 2))
    load, iters = 0.3, 70
    start = time.perf_counter()
    fast = optimize_slices(lay, load, THRESHOLD, iters, w=3)
    t_fast = time.perf_counter() - start
    sim_eval = SimEvaluator(lay, load, SimConfig(duration=DESK_CYCLES, seed=1))
    start = time.perf_counter()
    slow = optimize_slices(lay, load, THRESHOLD, iters, w=3, evaluator=sim_eval)
    t_slow = time.perf_counter() - start
    speedup = t_slow / t_fast
    record_property(
        "detail", f"{fast.mec_count} vs {slow.mec_count} MECs, {t_fast:.2f} s vs {t_slow:.2f} s, {speedup:.0f}x"
    )
    assert fast.mec_count == slow.mec_count
    assert speedup >= 10


# -- 7: queueing math --
C7 = crit(7, "pmf normalisation, convolution additivity, Kingman monotonicity, Erlang closed form")


def erlang_exact(offered: Fraction, m: int) -> list[Fraction]:
    terms = [offered**k / math.factorial(k) for k in range(m + 1)]
    total = sum(terms)
    return [t / total for t in terms]


@C7
@pytest.mark.parametrize("m", range(1, 9))
@pytest.mark.parametrize("offered", [Fraction(1, 3), Fraction(1), Fraction(5, 2), Fraction(7)])
def test_erlang_closed_form(m, offered):
    p = erlang_occupancy(float(offered) * 0.2, 0.2, m)
    exact = erlang_exact(offered, m)
    assert np.max(np.abs(p - np.array([float(x) for x in exact]))) <= 1e-12


@C7
@pytest.mark.parametrize("load", [0.0, 0.1, 0.35, 0.6, 0.9, 1.0])
def test_pmfs_normalised(load):
    for split in Split:
        ru = RuProfile(0, split)
        occ = erlang_occupancy(ru.gamma * load, ru.nu, ru.m)
        assert abs(occ.sum() - 1) <= 1e-9
        pmf = ru_size_pmf(ru, LADDERS[split], load, CFG.gc)
        assert abs(pmf.probs.sum() - 1) <= 1e-9
    model = LatencyModel(CFG, LADDERS, load)
    agg = slice_aggregate_pmf([model.size_pmf(RuProfile(i, s)) for i, s in enumerate([Split.SPLIT_71] * 3 + [Split.SPLIT_72] * 4)])
    assert abs(agg.probs.sum() - 1) <= 1e-9


@C7
@pytest.mark.parametrize("load", [0.1, 0.4, 0.8])
def test_convolution_additive(load):
    model = LatencyModel(CFG, LADDERS, load)
    parts = [model.size_pmf(RuProfile(0, s)) for s in (Split.SPLIT_71, Split.SPLIT_72, Split.SPLIT_71)]
    acc = parts[0]
    for nxt in parts[1:]:
        joined = convolve(acc, nxt)
        assert joined.mean() == pytest.approx(acc.mean() + nxt.mean(), rel=1e-9, abs=1e-9)
        assert joined.var() == pytest.approx(acc.var() + nxt.var(), rel=1e-9, abs=1e-9)
        acc = joined


@C7
def test_kingman_monotone_grid():
    lams = np.linspace(1000, 8000, 8)
    means = np.linspace(5e-6, 100e-6, 8)
    vars_ = np.linspace(0, 2e-9, 8)
    table = np.full((8, 8, 8), np.inf)
    for (i, lam), (j, mu), (k, v) in itertools.product(enumerate(lams), enumerate(means), enumerate(vars_)):
        try:
            table[i, j, k] = kingman_wait(lam, 0.0, mu, v)
        except OverloadError:
            assert lam * mu >= 1
    for axis in range(3):
        assert np.all(np.diff(table, axis=axis) >= 0)


# -- 8: ring ordering --
C8 = crit(8, "heuristic tour within 5% of Held-Karp, exact tours match brute force")


@C8
def test_heuristic_near_optimal(record_property):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 13))
        dist = distance_matrix(rng.uniform(0, 10, size=(n, 2)))
        gap = heuristic_tour(dist)[0] / held_karp(dist)[0] - 1
        worst = max(worst, gap)
    record_property("detail", f"worst gap {worst:.4%}")
    assert worst <= 0.05


@C8
@pytest.mark.parametrize("n", range(3, 9))
def test_exact_tour_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        pts = rng.uniform(0, 10, size=(n, 2))
        assert ring_order(pts).tour_length == pytest.approx(brute_force_tour(distance_matrix(pts))[0], abs=1e-9)
