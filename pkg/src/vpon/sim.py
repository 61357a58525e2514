"""Discrete-event simulation of coordinated-DBA upstream TDMA in one slice.

Timeline of one grant cycle ``c`` (batch arrivals):

* during ``[c*gc, (c+1)*gc)`` every RU generates its eCPRI segments for the
  cycle, evenly spread over the interval, into its ONU queue;
* at ``t_c = (c+1)*gc`` the ONUs report and the OLT grants them back to back
  in fixed round-robin order on the slice's wavelength, starting as soon as
  the channel is free;
* with ``delivery="joint"`` a segment leaves the system when the whole
  slice's burst of that cycle has been received (joint uplink processing at
  the DU); with ``delivery="segment"`` when its own transmission ends.

Two engines produce the same statistics from the same random draws: a
vectorised one (numpy, used by default) and an event-driven reference that
walks a heap of events segment by segment (slow; for cross-checks).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError
from .latency import US, ChannelConfig, LatencyModel, homogeneous_slice
from .traffic import RateLadder, RuProfile, Split, default_ladders, erlang_occupancy, segments_per_cycle

MAX_QUEUE_SEGMENTS = 10**6
EXACT_QUANTILE_LIMIT = 2_000_000
QUANTILE_SAMPLES = 1_000_000


@dataclass(frozen=True)
class SimConfig:
    duration: int = 100_000  # grant cycles
    seed: int = 0
    warmup: int | None = None  # cycles; default 10 % of duration
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    arrival_mode: str = "batch"  # "batch" | "poisson"
    rate_mode: str = "iid"  # "iid" | "birth_death"
    delivery: str = "joint"  # "joint" | "segment"
    engine: str = "vector"  # "vector" | "event"
    max_queue: int = MAX_QUEUE_SEGMENTS

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.duration // 10)
        if not (self.duration > self.warmup >= 0):
            raise ParameterError(f"need duration > warmup >= 0, got {self.duration}, {self.warmup}")
        for name, allowed in (
            ("arrival_mode", ("batch", "poisson")),
            ("rate_mode", ("iid", "birth_death")),
            ("delivery", ("joint", "segment")),
            ("engine", ("vector", "event")),
        ):
            if getattr(self, name) not in allowed:
                raise ParameterError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class SimStats:
    """Per-segment latency statistics in microseconds."""

    mean_wait: float
    p95_wait: float
    p99_wait: float
    mean_total: float
    utilization: float
    samples: int
    served_segments: int = 0
    overloaded: bool = False
    mean_queue: float = math.nan  # time-average segments in system (event engine only)
    arrival_rate: float = math.nan  # segments per microsecond

    @classmethod
    def overload(cls, utilization: float, samples: int, served: int) -> "SimStats":
        inf = math.inf
        return cls(inf, inf, inf, inf, utilization, samples, served, True)


@dataclass
class _Draws:
    sizes: np.ndarray  # [cycle, ru] segments
    epochs: np.ndarray  # [cycle] report/grant instants (s)
    windows: np.ndarray  # [cycle] length of the generation interval (s)
    prop: np.ndarray  # [ru] one-way propagation (s)
    quantile_rng: np.random.Generator


def _size_levels(ru: RuProfile, model: LatencyModel) -> tuple[np.ndarray, np.ndarray]:
    """Segment count of every ladder level and the iid probabilities."""
    pmf = model.size_pmf(ru)
    k = np.flatnonzero(pmf.probs > 0)
    return k, pmf.probs[k] / pmf.probs[k].sum()


def _birth_death_sizes(ru, model, load_scale, epochs, rng) -> np.ndarray:
    """Segments per cycle from the RU's simulated user-count process."""
    ladder = model.ladder_for(ru)
    gamma = ru.gamma * load_scale
    occ = erlang_occupancy(gamma, ru.nu, ru.m)
    state = int(rng.choice(ru.m + 1, p=occ))
    horizon = float(epochs[-1])
    times, states = [0.0], [state]
    t = 0.0
    while True:
        up = gamma if state < ru.m else 0.0
        down = state * ru.nu
        rate = up + down
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > horizon:
            break
        state += 1 if rng.random() * rate < up else -1
        times.append(t)
        states.append(state)
    # State in force at the start of each generation interval.
    starts = np.concatenate(([0.0], epochs[:-1]))
    users = np.asarray(states)[np.searchsorted(times, starts, side="right") - 1]
    seg_by_level = np.array(
        [segments_per_cycle(rate, model.cfg.gc, model.cfg.segment) for rate in ladder.rates]
    )
    return seg_by_level[ladder.level_of(users)]


def _draw(rus, distances_km, load_scale, cfg: SimConfig, ladders) -> _Draws:
    ch = cfg.channel
    root = np.random.SeedSequence(cfg.seed)
    size_ss, arrival_ss, q_ss = root.spawn(3)
    model = LatencyModel(ch, ladders, load_scale)
    n = cfg.duration
    arrival_rng = np.random.default_rng(arrival_ss)
    if cfg.arrival_mode == "batch":
        windows = np.full(n, ch.gc)
    else:
        windows = arrival_rng.exponential(ch.gc, n)
    epochs = np.cumsum(windows)
    sizes = np.empty((n, len(rus)), dtype=np.int64)
    for j, (ru, ss) in enumerate(zip(rus, size_ss.spawn(len(rus)))):
        rng = np.random.default_rng(ss)
        if cfg.rate_mode == "iid":
            levels, probs = _size_levels(ru, model)
            sizes[:, j] = levels[np.searchsorted(np.cumsum(probs), rng.random(n), side="right").clip(max=len(levels) - 1)]
        else:
            sizes[:, j] = _birth_death_sizes(ru, model, load_scale, epochs, rng)
    prop = np.asarray(distances_km, dtype=float) * ch.fiber_delay * US
    return _Draws(sizes, epochs, windows, prop, np.random.default_rng(q_ss))


def _count_le(a: np.ndarray, b: np.ndarray, x: np.ndarray, t: float) -> np.ndarray:
    """How many i in [0, x) satisfy a + i*b <= t (elementwise, b may be any sign)."""
    out = np.zeros_like(x)
    pos, neg, flat = b > 0, b < 0, b == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        # b > 0: i <= (t - a) / b
        k = np.floor((t - a[pos]) / b[pos]) + 1
        out[pos] = np.clip(k, 0, x[pos])
        # b < 0: i >= (t - a) / b
        k = np.ceil((t - a[neg]) / b[neg])
        out[neg] = x[neg] - np.clip(k, 0, x[neg])
    out[flat] = np.where(a[flat] <= t, x[flat], 0)
    return out


def _progression_quantiles(a, b, x, qs, rng) -> list[float]:
    """Quantiles (inverted CDF) of the multiset {a_k + i*b_k : 0 <= i < x_k}."""
    total = int(x.sum())
    if total <= EXACT_QUANTILE_LIMIT:
        idx = np.repeat(np.arange(x.size), x)
        offsets = np.arange(total) - np.repeat(np.cumsum(x) - x, x)
        values = np.sort(a[idx] + offsets * b[idx])
    else:
        picks = rng.integers(0, total, QUANTILE_SAMPLES)
        ends = np.cumsum(x)
        k = np.searchsorted(ends, picks, side="right")
        i = picks - (ends[k] - x[k])
        values = np.sort(a[k] + i * b[k])
    return [float(np.quantile(values, q, method="inverted_cdf")) for q in qs]


def _vector_engine(d: _Draws, cfg: SimConfig) -> SimStats:
    ch = cfg.channel
    s = ch.segment_time
    sizes = d.sizes
    burst = sizes.sum(axis=1)
    service = burst * s
    # Work-conserving FIFO over cycles: end_c = max_k<=c (t_k + sum_{i=k..c} S_i).
    csum = np.cumsum(service)
    end = csum + np.maximum.accumulate(d.epochs - (csum - service))
    start = end - service
    backlog = (end - d.epochs) / s
    w = cfg.warmup
    horizon_end = d.epochs[-1] + (ch.gc if cfg.arrival_mode == "batch" else 0.0)
    served = int(np.clip(np.floor((horizon_end - start) / s + 1e-9), 0, burst).sum())
    busy = service[w:].sum()
    span = d.epochs[-1] - d.epochs[w - 1] if w > 0 else d.epochs[-1]
    utilization = float(busy / span)
    weights = burst[w:]
    samples = int(weights.sum())
    if backlog.max() > cfg.max_queue:
        return SimStats.overload(utilization, samples, served)

    windows = d.windows[w:]
    sz = sizes[w:]
    tx_end = start[w:, None] + s * np.cumsum(sz, axis=1)
    if cfg.delivery == "joint":
        done = end[w:] - d.epochs[w:]
        arrive = (tx_end + d.prop[None, :]).max(axis=1) - d.epochs[w:]
        mean_wait = float(np.dot(weights, done) / samples + np.dot(weights, windows) / samples / 2)
        mean_total = mean_wait + float(np.dot(weights, arrive - done) / samples)
        # Segment i of RU j waits window*(1-(i+.5)/x) for the report, then `done`.
        xs = sz.ravel()
        win = np.repeat(windows, sz.shape[1])
        a = np.repeat(done, sz.shape[1]) + win * (1 - 0.5 / np.maximum(xs, 1))
        b = -win / np.maximum(xs, 1)
    else:
        # Segment i of RU j leaves at tx_start_j + (i+1)s, enqueued at epoch - window*(1-(i+.5)/x).
        tx_start = tx_end - s * sz
        lead = tx_start - d.epochs[w:, None]
        xs = sz.ravel()
        win = np.repeat(windows, sz.shape[1])
        x_safe = np.maximum(xs, 1)
        a = lead.ravel() + s + win * (1 - 0.5 / x_safe)
        b = s - win / x_safe
        seg_mean = a + b * (xs - 1) / 2
        mean_wait = float(np.dot(xs, seg_mean) / samples)
        mean_total = mean_wait + float(np.dot(sz, d.prop).sum() / samples)
    p95, p99 = _progression_quantiles(a, b, xs, (0.95, 0.99), d.quantile_rng)
    return SimStats(
        mean_wait=mean_wait / US,
        p95_wait=p95 / US,
        p99_wait=p99 / US,
        mean_total=mean_total / US,
        utilization=utilization,
        samples=samples,
        served_segments=served,
        arrival_rate=float(samples / span * US),
    )


def _event_engine(d: _Draws, cfg: SimConfig) -> SimStats:
    """Reference implementation: one heap event per segment arrival and departure."""
    ch = cfg.channel
    s = ch.segment_time
    n_cycles, n_ru = d.sizes.shape
    ARRIVE, GRANT, TX_END = 0, 1, 2
    events: list[tuple] = []
    for c in range(n_cycles):
        t_c = d.epochs[c]
        heapq.heappush(events, (t_c, GRANT, c, -1, -1))
        for j in range(n_ru):
            x = int(d.sizes[c, j])
            for i in range(x):
                t = t_c - d.windows[c] * (1 - (i + 0.5) / x)
                heapq.heappush(events, (t, ARRIVE, c, j, i))

    w = cfg.warmup
    window_start = d.epochs[w - 1] if w > 0 else 0.0
    window_end = d.epochs[-1]
    queues: list[list[tuple[float, int]]] = [[] for _ in range(n_ru)]
    pending: dict[int, list[tuple[float, int]]] = {}
    left: dict[int, int] = {}
    last_arrival: dict[int, float] = {}
    channel_free = 0.0
    in_system = 0
    last_t = window_start
    area = 0.0
    waits: list[float] = []
    totals: list[float] = []
    busy = 0.0
    served = 0
    horizon_end = d.epochs[-1] + (ch.gc if cfg.arrival_mode == "batch" else 0.0)
    max_backlog = 0

    def advance(t):
        nonlocal last_t, area
        lo, hi = max(last_t, window_start), min(t, window_end)
        if hi > lo:
            area += in_system * (hi - lo)
        last_t = max(last_t, t)

    def record(c, enq, t_out, t_arrive):
        if c >= w:
            waits.append(t_out - enq)
            totals.append(t_arrive - enq)

    while events:
        t, kind, c, j, i = heapq.heappop(events)
        advance(t)
        if kind == ARRIVE:
            queues[j].append((t, c))
            in_system += 1
        elif kind == GRANT:
            # Each ONU is granted the segments it reported for cycle c, in RU order.
            cursor = max(t, channel_free)
            max_backlog = max(max_backlog, (cursor - t) / s + sum(len(q) for q in queues))
            if max_backlog > cfg.max_queue:
                break
            left[c] = 0
            for jj in range(n_ru):
                q = queues[jj]
                while q and q[0][1] <= c:
                    enq, cc = q.pop(0)
                    cursor += s
                    heapq.heappush(events, (cursor, TX_END, c, jj, enq))
                    left[c] += 1
                    if c >= w:
                        busy += s
            channel_free = cursor
            if left[c] == 0:
                left.pop(c)
        else:
            enq = i
            if t <= horizon_end + 1e-12:
                served += 1
            arrive = t + d.prop[j]
            if cfg.delivery == "segment":
                in_system -= 1
                record(c, enq, t, arrive)
            else:
                pending.setdefault(c, []).append((enq, j))
                last_arrival[c] = max(last_arrival.get(c, 0.0), arrive)
                left[c] -= 1
                if left[c] == 0:
                    for enq_k, _ in pending.pop(c):
                        record(c, enq_k, t, last_arrival[c])
                    in_system -= sum(d.sizes[c])
                    left.pop(c)
                    last_arrival.pop(c)

    span = window_end - window_start
    samples = int(d.sizes[w:].sum())
    utilization = float(busy / span)
    if max_backlog > cfg.max_queue:
        return SimStats.overload(utilization, samples, served)
    waits_a = np.asarray(waits)
    q = lambda p: float(np.quantile(waits_a, p, method="inverted_cdf")) / US  # noqa: E731
    return SimStats(
        mean_wait=float(waits_a.mean()) / US,
        p95_wait=q(0.95),
        p99_wait=q(0.99),
        mean_total=float(np.mean(totals)) / US,
        utilization=utilization,
        samples=len(waits),
        served_segments=served,
        mean_queue=float(area / span),
        arrival_rate=float(samples / span * US),
    )


def simulate_slice(
    slice_rus: Sequence[RuProfile],
    distances_km: Sequence[float],
    load_scale: float,
    cfg: SimConfig | None = None,
    ladders: Mapping[Split, RateLadder] | None = None,
) -> SimStats:
    """Simulate one slice and return per-segment latency statistics (us)."""
    if not slice_rus:
        raise ParameterError("cannot simulate an empty slice")
    if len(distances_km) != len(slice_rus):
        raise ParameterError("need one MEC distance per RU")
    cfg = cfg or SimConfig()
    ladders = ladders or default_ladders()
    draws = _draw(slice_rus, distances_km, load_scale, cfg, ladders)
    if cfg.engine == "event":
        return _event_engine(draws, cfg)
    return _vector_engine(draws, cfg)


@dataclass(frozen=True)
class ValidationRow:
    n71: int
    n72: int
    load: float
    sim_mean_us: float
    analytic_us: float
    rel_err: float
    feasible_sim: bool
    feasible_analytic: bool
    rho: float
    within_tol: bool
    overloaded: bool = False

    def as_csv(self) -> dict:
        return {
            "n71": self.n71,
            "n72": self.n72,
            "load": self.load,
            "sim_mean_us": self.sim_mean_us,
            "analytic_us": self.analytic_us,
            "rel_err": self.rel_err,
            "feasible_sim": int(self.feasible_sim),
            "feasible_analytic": int(self.feasible_analytic),
        }


def cell_seed(seed: int, n71: int, n72: int, load: float) -> int:
    """Stable per-cell seed so grid cells are independent of evaluation order."""
    ss = np.random.SeedSequence([seed, n71, n72, int(round(load * 1e6))])
    return int(ss.generate_state(1)[0])


def validate_cell(
    n71: int,
    n72: int,
    load: float,
    sim: SimConfig,
    ladders: Mapping[Split, RateLadder] | None = None,
    threshold: float = 100.0,
    tolerance: float = 0.15,
    distance_km: float = 0.0,
    profiles: Mapping[Split, RuProfile] | None = None,
) -> ValidationRow:
    ladders = ladders or default_ladders()
    rus = homogeneous_slice(n71, n72, profiles)
    distances = [distance_km] * len(rus)
    model = LatencyModel(sim.channel, ladders, load)
    from .errors import OverloadError

    try:
        rep = model.report(rus, distances)
        analytic, rho = rep.total, rep.utilization
    except OverloadError as exc:
        analytic, rho = math.inf, exc.rho
    stats = simulate_slice(rus, distances, load, replace(sim, seed=cell_seed(sim.seed, n71, n72, load)), ladders)
    if stats.overloaded or not math.isfinite(analytic):
        rel = math.inf
    else:
        rel = abs(stats.mean_total - analytic) / analytic
    return ValidationRow(
        n71,
        n72,
        load,
        stats.mean_total,
        analytic,
        rel,
        stats.mean_total <= threshold,
        analytic <= threshold,
        rho,
        rel <= tolerance,
        stats.overloaded,
    )


def validate(
    grid: Sequence[tuple[int, int]],
    loads: Sequence[float],
    sim: SimConfig | None = None,
    ladders: Mapping[Split, RateLadder] | None = None,
    threshold: float = 100.0,
    tolerance: float = 0.15,
    distance_km: float = 0.0,
    profiles: Mapping[Split, RuProfile] | None = None,
    workers: int | None = None,
) -> list[ValidationRow]:
    """Simulated vs analytical latency for every (n71, n72, load) cell.

    Rows come back sorted by (n71, n72, load) whatever the worker count.
    """
    from .parallel import parallel_map

    if not grid:
        raise ParameterError("validation grid is empty")
    sim = sim or SimConfig()
    cells = sorted({(a, b, float(l)) for a, b in grid for l in loads})
    jobs = [(a, b, l, sim, ladders, threshold, tolerance, distance_km, profiles) for a, b, l in cells]
    return parallel_map(_validate_job, jobs, workers)


def _validate_job(args) -> ValidationRow:
    return validate_cell(*args)


class SimEvaluator:
    """Slice latency from simulation, for running the optimizer with the simulator in the loop."""

    def __init__(self, layout, load_scale: float, sim: SimConfig, ladders=None):
        self.layout = layout
        self.load_scale = load_scale
        self.sim = sim
        self.ladders = ladders or default_ladders()
        self.calls = 0

    def __call__(self, tree: int, members: Sequence[int]) -> float:
        self.calls += 1
        rus = [self.layout.ru(r) for r in members]
        distances = [self.layout.ru_to_tree(r, tree) for r in members]
        stats = simulate_slice(rus, distances, self.load_scale, self.sim, self.ladders)
        return math.inf if stats.overloaded else stats.mean_total
