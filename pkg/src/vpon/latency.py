"""Analytical upstream latency of a vPON slice.

The per-grant-cycle burst of the whole slice is treated as the customer of
a G/G/1 queue.  Its size distribution is the convolution of the member RUs'
size distributions; service time is bytes over line rate; the mean sojourn
is bounded with Kingman's heavy-traffic formula.  Fiber propagation to the
MEC node and the mean half-cycle wait for the next grant are added on top.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import OverloadError, ParameterError
from .traffic import RateLadder, RuProfile, SizePmf, Split, ru_size_pmf

US = 1e-6


@dataclass(frozen=True)
class ChannelConfig:
    """One upstream wavelength channel and the grant discipline on it.

    ``gc`` is in seconds, ``fiber_delay`` in microseconds per km.
    """

    line_rate: float = 50e9
    gc: float = 125e-6
    wavelengths: int = 4
    fiber_delay: float = 5.0
    segment: int = 1500
    framing: bool = True

    def __post_init__(self):
        for name in ("line_rate", "gc", "wavelengths", "fiber_delay", "segment"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ParameterError(f"channel {name} must be a positive number, got {value!r}")

    @property
    def segment_time(self) -> float:
        """Seconds to transmit one segment."""
        return 8 * self.segment / self.line_rate

    @property
    def framing_s(self) -> float:
        return self.gc / 2 if self.framing else 0.0


@dataclass(frozen=True)
class SliceLatencyReport:
    """Latency breakdown for one slice; times in microseconds."""

    wait: float
    service_mean: float
    service_var: float  # us^2
    utilization: float
    propagation: float
    framing: float
    total: float

    @classmethod
    def overloaded(cls, rho: float, propagation: float, framing: float) -> "SliceLatencyReport":
        inf = math.inf
        return cls(inf, inf, inf, rho, propagation, framing, inf)

    @property
    def feasible_load(self) -> bool:
        return self.utilization < 1


def convolve(p: SizePmf, q: SizePmf) -> SizePmf:
    """Distribution of the sum of two independent segment counts."""
    if p.segment != q.segment:
        raise ParameterError(f"segment sizes differ: {p.segment} vs {q.segment}")
    out = np.convolve(p.probs, q.probs)
    return SizePmf(out / out.sum(), p.segment)


def slice_aggregate_pmf(rus: Sequence[SizePmf]) -> SizePmf:
    """Left fold of :func:`convolve` over the slice's RUs; no truncation."""
    if not rus:
        raise ParameterError("cannot aggregate an empty slice")
    return functools.reduce(convolve, rus)


def service_moments(agg: SizePmf, cfg: ChannelConfig) -> tuple[float, float, float]:
    """Mean and variance (seconds) of the burst service time, and utilization."""
    if agg.segment != cfg.segment:
        raise ParameterError(f"pmf segment {agg.segment} B does not match channel {cfg.segment} B")
    x = agg.support * (8.0 * agg.segment / cfg.line_rate)
    mean = float(np.dot(agg.probs, x))
    var = max(float(np.dot(agg.probs, x * x)) - mean * mean, 0.0)
    return mean, var, mean / cfg.gc


def kingman_wait(lam: float, sigma_a2: float, service_mean: float, service_var: float) -> float:
    """Kingman upper bound on the mean sojourn of a G/G/1 queue.

    ``service_mean + lam * (sigma_a2 + service_var) / (2 * (1 - rho))`` with
    ``rho = lam * service_mean``; raises :class:`OverloadError` when rho >= 1.
    """
    if lam < 0 or sigma_a2 < 0 or service_mean < 0 or service_var < 0:
        raise ParameterError("rates, means and variances must be non-negative")
    rho = lam * service_mean
    if rho >= 1:
        raise OverloadError(rho)
    return service_mean + lam * (sigma_a2 + service_var) / (2.0 * (1.0 - rho))


class LatencyModel:
    """Slice latency evaluator with cached per-RU size distributions.

    Parameters mirror the module-level functions; ``sigma_a2`` is the
    variance of burst inter-arrival times (0 for a fixed grant cycle).
    """

    def __init__(
        self,
        cfg: ChannelConfig,
        ladders: Mapping[Split, RateLadder],
        load_scale: float,
        sigma_a2: float = 0.0,
        arrival_rate: float | None = None,
    ):
        self.cfg = cfg
        self.ladders = {Split.parse(k): v for k, v in ladders.items()}
        self.load_scale = load_scale
        self.sigma_a2 = sigma_a2
        self.arrival_rate = 1.0 / cfg.gc if arrival_rate is None else arrival_rate
        self._pmfs: dict[tuple, SizePmf] = {}

    def ladder_for(self, ru: RuProfile) -> RateLadder:
        ladder = self.ladders[ru.split]
        if ladder.m != ru.m:
            # Same thresholds shape, rescaled to this RU's capacity.
            ladder = RateLadder(
                tuple(max(1, round(f * ru.m / ladder.m)) for f in ladder.thresholds), ladder.rates
            )
        return ladder

    def size_pmf(self, ru: RuProfile) -> SizePmf:
        key = ru.traffic_key
        pmf = self._pmfs.get(key)
        if pmf is None:
            pmf = ru_size_pmf(ru, self.ladder_for(ru), self.load_scale, self.cfg.gc, self.cfg.segment)
            self._pmfs[key] = pmf
        return pmf

    def report(self, rus: Sequence[RuProfile], distances_km: Iterable[float]) -> SliceLatencyReport:
        if not rus:
            raise ParameterError("slice must contain at least one RU")
        distances = list(distances_km)
        if len(distances) != len(rus):
            raise ParameterError("need one MEC distance per RU")
        propagation = max(distances) * self.cfg.fiber_delay
        framing = self.cfg.framing_s / US
        agg = slice_aggregate_pmf([self.size_pmf(ru) for ru in rus])
        mean, var, _ = service_moments(agg, self.cfg)
        rho = self.arrival_rate * mean
        try:
            wait = kingman_wait(self.arrival_rate, self.sigma_a2, mean, var)
        except OverloadError:
            raise OverloadError(rho) from None
        wait_us = wait / US
        return SliceLatencyReport(
            wait=wait_us,
            service_mean=mean / US,
            service_var=var / US**2,
            utilization=rho,
            propagation=propagation,
            framing=framing,
            total=wait_us + propagation + framing,
        )

    def total_or_inf(self, rus: Sequence[RuProfile], distances_km: Iterable[float]) -> float:
        try:
            return self.report(rus, distances_km).total
        except OverloadError:
            return math.inf


def slice_latency(
    slice_rus: Sequence[RuProfile],
    distances_km: Iterable[float],
    load_scale: float,
    cfg: ChannelConfig,
    ladders: Mapping[Split, RateLadder],
    sigma_a2: float = 0.0,
) -> SliceLatencyReport:
    """End-to-end upstream latency of one slice (microseconds).

    ``distances_km`` holds each RU's fiber distance to the slice's MEC node;
    the farthest one sets the propagation term.
    """
    return LatencyModel(cfg, ladders, load_scale, sigma_a2).report(slice_rus, distances_km)


def homogeneous_slice(
    n71: int,
    n72: int,
    profiles: Mapping[Split, RuProfile] | None = None,
) -> list[RuProfile]:
    """``n71`` split-7.1 RUs followed by ``n72`` split-7.2 RUs cloned from templates."""
    profiles = profiles or {s: RuProfile(0, s) for s in Split}
    out = []
    for split, count in ((Split.SPLIT_71, n71), (Split.SPLIT_72, n72)):
        base = profiles[split]
        for _ in range(count):
            out.append(RuProfile(len(out), split, base.m, base.gamma, base.nu, base.position, base.tree_id))
    return out


def mix_latency(
    n71: int,
    n72: int,
    model: LatencyModel,
    distance_km: float = 0.0,
    profiles: Mapping[Split, RuProfile] | None = None,
) -> SliceLatencyReport:
    rus = homogeneous_slice(n71, n72, profiles)
    return model.report(rus, [distance_km] * len(rus))


def feasibility_region(
    load_scale: float,
    threshold: float,
    max71: int,
    max72: int,
    cfg: ChannelConfig,
    ladders: Mapping[Split, RateLadder],
    distance_km: float = 0.0,
    profiles: Mapping[Split, RuProfile] | None = None,
) -> set[tuple[int, int]]:
    """All ``(n71, n72)`` mixes whose slice latency is within ``threshold`` us.

    The empty mix is never reported.
    """
    table = region_table(load_scale, max71, max72, cfg, ladders, distance_km, profiles)
    return {(a, b) for (a, b), total in table.items() if total <= threshold}


def region_table(
    load_scale: float,
    max71: int,
    max72: int,
    cfg: ChannelConfig,
    ladders: Mapping[Split, RateLadder],
    distance_km: float = 0.0,
    profiles: Mapping[Split, RuProfile] | None = None,
) -> dict[tuple[int, int], float]:
    """Total latency (us, ``inf`` if overloaded) for every non-empty mix in the grid."""
    model = LatencyModel(cfg, ladders, load_scale)
    profiles = profiles or {s: RuProfile(0, s) for s in Split}
    p71 = model.size_pmf(profiles[Split.SPLIT_71])
    p72 = model.size_pmf(profiles[Split.SPLIT_72])
    lam = model.arrival_rate
    propagation = distance_km * cfg.fiber_delay
    framing = cfg.framing_s / US

    # Powers p71^{*a}, built incrementally; index 0 is the point mass at zero.
    pow71 = [SizePmf.delta(0, cfg.segment)]
    for _ in range(max71):
        pow71.append(convolve(pow71[-1], p71))
    table = {}
    for a in range(max71 + 1):
        agg = pow71[a]
        for b in range(max72 + 1):
            if b > 0:
                agg = convolve(agg, p72)
            if a == 0 and b == 0:
                continue
            mean, var, _ = service_moments(agg, cfg)
            try:
                wait = kingman_wait(lam, model.sigma_a2, mean, var)
            except OverloadError:
                table[(a, b)] = math.inf
                continue
            table[(a, b)] = wait / US + propagation + framing
    return table
