import math
from dataclasses import replace

import numpy as np
import pytest

from vpon.errors import ParameterError
from vpon.latency import ChannelConfig, LatencyModel, feasibility_region, homogeneous_slice
from vpon.sim import SimConfig, SimEvaluator, _progression_quantiles, simulate_slice, validate, validate_cell
from vpon.layout import generate_layout
from vpon.traffic import RateLadder, RuProfile, Split, default_ladders

LADDERS = default_ladders()
GC_US = 125.0
SEG_US = 0.24


def fixed_ladders(rate):
    """Every split emits the same deterministic burst each cycle."""
    return {s: RateLadder((100,), (rate,)) for s in Split}


def analytic(rus, dist, load, ladders=LADDERS, cfg=ChannelConfig()):
    return LatencyModel(cfg, ladders, load).report(rus, dist)


class TestConfig:
    def test_default_warmup(self):
        assert SimConfig(duration=1000).warmup == 100

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"duration": 10, "warmup": 10},
            {"warmup": -1},
            {"arrival_mode": "bursty"},
            {"rate_mode": "markov"},
            {"delivery": "late"},
            {"engine": "gpu"},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ParameterError):
            SimConfig(**kwargs)

    def test_argument_checks(self):
        with pytest.raises(ParameterError):
            simulate_slice([], [], 0.3)
        with pytest.raises(ParameterError):
            simulate_slice(homogeneous_slice(2, 0), [0.0], 0.3)


class TestHandComputed:
    def test_zero_load_is_alignment_plus_service(self):
        stats = simulate_slice(homogeneous_slice(1, 0), [0.0], 0.0, SimConfig(duration=2000))
        assert abs(stats.mean_wait - GC_US / 2) < GC_US
        assert stats.mean_wait == pytest.approx(GC_US / 2 + 15 * SEG_US, abs=1e-9)

    def test_deterministic_ten_segment_bursts(self):
        # 960 Mb/s for 125 us is 10 segments; each burst takes 2.4 us on the channel.
        rus = [RuProfile(0, Split.SPLIT_71)]
        stats = simulate_slice(rus, [0.0], 0.5, SimConfig(duration=1000), fixed_ladders(0.96e9))
        assert stats.mean_wait == pytest.approx(62.5 + 2.4, abs=1e-9)
        assert stats.utilization == pytest.approx(2.4 / 125, rel=1e-9)
        assert stats.samples == 900 * 10

    def test_deterministic_gap_to_analytic_within_one_cycle(self):
        ladders = fixed_ladders(0.96e9)
        rus = homogeneous_slice(3, 2)
        stats = simulate_slice(rus, [0.0] * 5, 0.5, SimConfig(duration=500), ladders)
        rep = analytic(rus, [0.0] * 5, 0.5, ladders)
        assert abs(stats.mean_wait - rep.wait) <= GC_US

    def test_propagation_adds_worst_distance(self):
        rus = homogeneous_slice(2, 0)
        near = simulate_slice(rus, [0.0, 0.0], 0.3, SimConfig(duration=2000, seed=3))
        # The far RU is granted last, so its 10 us of fiber is fully exposed.
        far_last = simulate_slice(rus, [1.0, 2.0], 0.3, SimConfig(duration=2000, seed=3))
        assert far_last.mean_wait == near.mean_wait
        assert far_last.mean_total - near.mean_total == pytest.approx(10.0, abs=1e-6)
        # Granted first, part of its flight overlaps the other RU's burst.
        far_first = simulate_slice(rus, [2.0, 1.0], 0.3, SimConfig(duration=2000, seed=3))
        assert 5.0 <= far_first.mean_total - near.mean_total <= 10.0


class TestAgreement:
    def test_eight_ru_mixed_slice_at_thirty_percent(self):
        rus = homogeneous_slice(4, 4)
        dist = [0.5, 1.0, 1.5, 2.0, 0.5, 1.0, 1.5, 2.0]
        stats = simulate_slice(rus, dist, 0.3, SimConfig(duration=100_000, seed=1))
        rep = analytic(rus, dist, 0.3)
        assert abs(stats.mean_total - rep.total) / rep.total <= 0.15

    def test_utilization_matches_rho(self):
        rus = homogeneous_slice(3, 5)
        stats = simulate_slice(rus, [0.0] * 8, 0.5, SimConfig(duration=100_000, seed=2))
        rho = analytic(rus, [0.0] * 8, 0.5).utilization
        assert abs(stats.utilization - rho) / rho <= 0.02


class TestInvariants:
    def test_same_seed_identical(self):
        rus = homogeneous_slice(2, 3)
        a = simulate_slice(rus, [1.0] * 5, 0.4, SimConfig(duration=5000, seed=9))
        b = simulate_slice(rus, [1.0] * 5, 0.4, SimConfig(duration=5000, seed=9))
        c = simulate_slice(rus, [1.0] * 5, 0.4, SimConfig(duration=5000, seed=10))
        assert a == b
        assert a != c

    @pytest.mark.parametrize("n71, n72, load", [(1, 0, 0.1), (2, 2, 0.5), (5, 3, 0.8), (0, 8, 0.3)])
    def test_percentile_order(self, n71, n72, load):
        stats = simulate_slice(homogeneous_slice(n71, n72), [0.0] * (n71 + n72), load, SimConfig(duration=5000))
        assert stats.p99_wait >= stats.p95_wait >= stats.mean_wait >= 0
        assert stats.samples > 0

    def test_work_conservation_when_backlogged(self):
        # 57.6 Gb/s needs 600 segments per cycle, more than the 520.8 a cycle can carry.
        rus = [RuProfile(0, Split.SPLIT_71)]
        n = 1000
        stats = simulate_slice(rus, [0.0], 0.5, SimConfig(duration=n, max_queue=10**9), fixed_ladders(57.6e9))
        capacity = n * GC_US / SEG_US
        assert stats.served_segments <= capacity + 1e-9
        assert stats.served_segments == math.floor(capacity + 1e-9)

    def test_work_conservation_light_load(self):
        rus = homogeneous_slice(3, 3)
        n = 3000
        stats = simulate_slice(rus, [0.0] * 6, 0.3, SimConfig(duration=n))
        assert stats.served_segments <= n * GC_US / SEG_US

    def test_overload_flagged(self):
        stats = simulate_slice(homogeneous_slice(30, 0), [0.0] * 30, 0.8, SimConfig(duration=20_000))
        assert stats.overloaded
        assert math.isinf(stats.mean_total)

    def test_overload_threshold_is_configurable(self):
        rus = homogeneous_slice(6, 0)
        stats = simulate_slice(rus, [0.0] * 6, 0.3, SimConfig(duration=2000, max_queue=10))
        assert stats.overloaded


class TestEngines:
    @pytest.mark.parametrize("delivery", ["joint", "segment"])
    @pytest.mark.parametrize("arrival_mode", ["batch", "poisson"])
    def test_event_engine_matches_vector_engine(self, delivery, arrival_mode):
        rus = homogeneous_slice(2, 1)
        cfg = SimConfig(duration=400, seed=4, delivery=delivery, arrival_mode=arrival_mode)
        fast = simulate_slice(rus, [1.0, 2.0, 0.5], 0.8, cfg)
        slow = simulate_slice(rus, [1.0, 2.0, 0.5], 0.8, replace(cfg, engine="event"))
        for name in ("mean_wait", "p95_wait", "p99_wait", "mean_total", "utilization"):
            assert getattr(slow, name) == pytest.approx(getattr(fast, name), rel=1e-9)
        assert slow.samples == fast.samples
        assert slow.served_segments == fast.served_segments

    def test_littles_law(self):
        rus = homogeneous_slice(2, 1)
        stats = simulate_slice(rus, [0.0] * 3, 0.5, SimConfig(duration=2000, seed=5, engine="event"))
        assert stats.mean_queue == pytest.approx(stats.arrival_rate * stats.mean_wait, rel=0.10)

    def test_segment_delivery_is_earlier(self):
        rus = homogeneous_slice(3, 3)
        joint = simulate_slice(rus, [0.0] * 6, 0.5, SimConfig(duration=5000))
        own = simulate_slice(rus, [0.0] * 6, 0.5, SimConfig(duration=5000, delivery="segment"))
        assert own.mean_wait <= joint.mean_wait

    def test_birth_death_mode_runs_deterministically(self):
        rus = homogeneous_slice(2, 2)
        cfg = SimConfig(duration=5000, seed=1, rate_mode="birth_death")
        a = simulate_slice(rus, [0.0] * 4, 0.5, cfg)
        assert a == simulate_slice(rus, [0.0] * 4, 0.5, cfg)
        assert a.mean_wait > GC_US / 2


class TestQuantiles:
    def test_progressions_exact(self):
        a = np.array([1.0, 5.0, 2.0])
        b = np.array([0.5, -1.0, 0.0])
        x = np.array([3, 2, 4])
        values = np.sort(np.concatenate([ai + np.arange(xi) * bi for ai, bi, xi in zip(a, b, x)]))
        got = _progression_quantiles(a, b, x, (0.5, 0.95), np.random.default_rng(0))
        want = [np.quantile(values, q, method="inverted_cdf") for q in (0.5, 0.95)]
        assert got == pytest.approx(want)

    def test_sampled_quantiles_close(self, monkeypatch):
        import vpon.sim as sim

        rng = np.random.default_rng(1)
        a, b, x = rng.uniform(0, 100, 2000), rng.uniform(-1, 1, 2000), rng.integers(1, 50, 2000)
        exact = _progression_quantiles(a, b, x, (0.95, 0.99), rng)
        monkeypatch.setattr(sim, "EXACT_QUANTILE_LIMIT", 10)
        monkeypatch.setattr(sim, "QUANTILE_SAMPLES", 200_000)
        approx = _progression_quantiles(a, b, x, (0.95, 0.99), np.random.default_rng(2))
        assert approx == pytest.approx(exact, rel=0.01)


class TestValidate:
    def test_single_trivial_cell(self):
        rows = validate([(1, 0)], [0.1], SimConfig(duration=5000))
        assert len(rows) == 1
        assert rows[0].rel_err < 0.15 and rows[0].within_tol
        assert list(rows[0].as_csv()) == [
            "n71", "n72", "load", "sim_mean_us", "analytic_us", "rel_err", "feasible_sim", "feasible_analytic",
        ]

    def test_rows_sorted_and_overload_marked(self):
        rows = validate([(30, 0), (1, 1)], [0.8, 0.1], SimConfig(duration=3000))
        assert [(r.n71, r.n72, r.load) for r in rows] == [(1, 1, 0.1), (1, 1, 0.8), (30, 0, 0.1), (30, 0, 0.8)]
        worst = rows[-1]
        assert worst.overloaded and math.isinf(worst.analytic_us) and not worst.within_tol

    def test_empty_grid(self):
        with pytest.raises(ParameterError):
            validate([], [0.1])

    def test_boundary_cells(self):
        load = 0.3
        region = feasibility_region(load, 100.0, 12, 12, ChannelConfig(), LADDERS)
        edge = [(a, b) for a, b in region if (a + 1, b) not in region or (a, b + 1) not in region]
        rows = [validate_cell(a, b, load, SimConfig(duration=20_000)) for a, b in sorted(edge)]
        assert rows
        for row in rows:
            assert row.feasible_analytic
            assert row.sim_mean_us <= 100.0 * 1.15

    def test_load_column_monotone(self):
        loads = [0.1, 0.3, 0.5, 0.7]
        rus = homogeneous_slice(4, 4)
        means, errs = [], []
        for load in loads:
            runs = [simulate_slice(rus, [0.0] * 8, load, SimConfig(duration=10_000, seed=s)).mean_total for s in range(4)]
            means.append(np.mean(runs))
            errs.append(np.std(runs, ddof=1) / 2)
        for i in range(len(loads) - 1):
            assert means[i + 1] >= means[i] - 3 * math.hypot(errs[i], errs[i + 1])


def test_sim_evaluator_on_layout():
    lay = generate_layout(1, 2, 2, (0, 0, 1, 1))
    ev = SimEvaluator(lay, 0.3, SimConfig(duration=2000))
    tree = lay.tree_ids[0]
    members = lay.tree_members[tree] or lay.ru_ids[:1]
    assert 60 < ev(tree, members) < 200
    assert ev.calls == 1
