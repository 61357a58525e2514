"""Per-RU user occupancy and the variable-rate eCPRI fronthaul it produces.

Each radio unit is an Erlang loss system (M/M/m/m): users arrive at rate
``gamma``, leave at rate ``nu`` each, and at most ``m`` are connected.  The
number of connected users selects a step on a rate ladder, and the rate is
turned into a count of eCPRI segments per grant cycle.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError

PMF_ATOL = 1e-9


class Split(str, enum.Enum):
    """Low-layer functional split of an RU."""

    SPLIT_71 = "7.1"
    SPLIT_72 = "7.2"

    @classmethod
    def parse(cls, value) -> "Split":
        if isinstance(value, Split):
            return value
        text = str(value).strip().lower().replace("split", "").replace("_", ".").strip("-. ")
        for member in cls:
            if text == member.value:
                return member
        raise ParameterError(f"unknown functional split {value!r}; expected '7.1' or '7.2'")


# Fronthaul rate range for 100 MHz, 4 antennas, 4 MIMO layers (bits/s).
RATE_RANGE = {
    Split.SPLIT_71: (1.378e9, 7.384e9),
    Split.SPLIT_72: (273.98e6, 2.92e9),
}

DEFAULT_M = 100
DEFAULT_NU = 1.0 / 90.0  # mean call holding time 90 s
DEFAULT_LEVELS = 4


@dataclass(frozen=True)
class RuProfile:
    """One radio unit.

    ``gamma`` is the call arrival rate at 100 % load; the planning load
    fraction multiplies it.
    """

    id: int
    split: Split
    m: int = DEFAULT_M
    gamma: float = DEFAULT_M * DEFAULT_NU
    nu: float = DEFAULT_NU
    position: tuple[float, float] = (0.0, 0.0)
    tree_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", Split.parse(self.split))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"RU {self.id}: m must be a positive integer, got {self.m}")
        if not self.gamma >= 0:
            raise ParameterError(f"RU {self.id}: gamma must be >= 0, got {self.gamma}")
        if not self.nu > 0:
            raise ParameterError(f"RU {self.id}: nu must be > 0, got {self.nu}")
        if not all(math.isfinite(c) for c in self.position):
            raise ParameterError(f"RU {self.id}: position must be finite, got {self.position}")

    @property
    def traffic_key(self) -> tuple:
        """Fields that determine the RU's size distribution."""
        return (self.split, self.m, self.gamma, self.nu)


@dataclass(frozen=True)
class RateLadder:
    """User-count thresholds ``F_1 < ... < F_n = m`` and their rates (bits/s).

    Level ``i`` covers user counts in ``(F_{i-1}, F_i]`` with ``F_0 = 0`` and
    the first level also holding the idle state 0.
    """

    thresholds: tuple[int, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        thresholds = tuple(int(f) for f in self.thresholds)
        rates = tuple(float(d) for d in self.rates)
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "rates", rates)
        if not thresholds or len(thresholds) != len(rates):
            raise ParameterError("ladder needs n >= 1 thresholds and exactly n rates")
        if thresholds[0] < 1 or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ParameterError(f"thresholds must be positive and strictly increasing: {thresholds}")
        if rates[0] <= 0 or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ParameterError(f"rates must be positive and strictly increasing: {rates}")

    @property
    def m(self) -> int:
        return self.thresholds[-1]

    @property
    def levels(self) -> int:
        return len(self.rates)

    def level_of(self, users: np.ndarray | int) -> np.ndarray:
        """Ladder level index for each user count."""
        return np.searchsorted(np.asarray(self.thresholds), users, side="left")


def default_ladder(split, m: int = DEFAULT_M, levels: int = DEFAULT_LEVELS) -> RateLadder:
    """Equally spaced user thresholds with rates interpolated over the split's range."""
    split = Split.parse(split)
    if levels < 1 or levels > m:
        raise ParameterError(f"need 1 <= levels <= m, got levels={levels}, m={m}")
    thresholds = [round(m * (i + 1) / levels) for i in range(levels)]
    lo, hi = RATE_RANGE[split]
    rates = [lo] if levels == 1 else list(np.linspace(lo, hi, levels))
    return RateLadder(tuple(thresholds), tuple(rates))


def default_ladders(m: int = DEFAULT_M, levels: int = DEFAULT_LEVELS) -> dict[Split, RateLadder]:
    return {s: default_ladder(s, m, levels) for s in Split}


@dataclass(frozen=True)
class RatePmf:
    """Probability of each fronthaul rate (bits/s)."""

    rates: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        _check_pmf(np.asarray(self.probs, dtype=float))

    @property
    def entries(self) -> dict[float, float]:
        return dict(zip(self.rates, self.probs))

    def mean(self) -> float:
        return float(np.dot(self.rates, self.probs))


@dataclass(frozen=True, eq=False)
class SizePmf:
    """Distribution of eCPRI segments per grant cycle.

    ``probs[k]`` is the probability of ``k`` segments of ``segment`` bytes.
    """

    probs: np.ndarray
    segment: int = 1500
    _mean: float = field(init=False, repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ParameterError("size pmf must be a non-empty 1-D array")
        if self.segment <= 0:
            raise ParameterError(f"segment size must be positive, got {self.segment}")
        _check_pmf(probs)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_mean", float(np.dot(np.arange(probs.size), probs)))

    @classmethod
    def from_entries(cls, entries: Mapping[int, float], segment: int = 1500) -> "SizePmf":
        if not entries:
            raise ParameterError("size pmf needs at least one entry")
        if min(entries) < 0:
            raise ParameterError("segment counts must be non-negative")
        probs = np.zeros(max(entries) + 1)
        for k, p in entries.items():
            probs[int(k)] += p
        return cls(probs, segment)

    @classmethod
    def delta(cls, k: int, segment: int = 1500) -> "SizePmf":
        return cls.from_entries({k: 1.0}, segment)

    @property
    def entries(self) -> dict[int, float]:
        return {int(k): float(p) for k, p in enumerate(self.probs) if p > 0}

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.probs.size)

    def mean(self) -> float:
        return self._mean

    def var(self) -> float:
        k = self.support
        return float(np.dot(k * k, self.probs) - self._mean**2)

    def __eq__(self, other):
        if not isinstance(other, SizePmf):
            return NotImplemented
        return self.segment == other.segment and np.array_equal(
            np.trim_zeros(self.probs, "b"), np.trim_zeros(other.probs, "b")
        )

    __hash__ = None


def _check_pmf(probs: np.ndarray):
    if np.any(probs < -PMF_ATOL) or np.any(probs > 1 + PMF_ATOL):
        raise ParameterError("probabilities must lie in [0, 1]")
    total = float(probs.sum())
    if abs(total - 1.0) > PMF_ATOL:
        raise ParameterError(f"probabilities must sum to 1, got {total!r}")


def erlang_occupancy(gamma: float, nu: float, m: int) -> np.ndarray:
    """Stationary distribution of connected users in an M/M/m/m system.

    Returns ``p`` with ``p[k] = p_0 (gamma/nu)^k / k!`` for ``k = 0..m``.
    The ratio recursion ``p_k = p_{k-1} * A / k`` runs in log space so large
    ``m`` and ``A`` neither overflow nor underflow before normalisation.
    """
    if not nu > 0:
        raise ParameterError(f"nu must be > 0, got {nu}")
    if not gamma >= 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    if int(m) != m or m < 1:
        raise ParameterError(f"m must be a positive integer, got {m}")
    m = int(m)
    offered = gamma / nu
    p = np.zeros(m + 1)
    if offered == 0:
        p[0] = 1.0
        return p
    k = np.arange(1, m + 1)
    logp = np.concatenate(([0.0], np.cumsum(math.log(offered) - np.log(k))))
    logp -= logp.max()
    p = np.exp(logp)
    return p / p.sum()


def rate_probabilities(occupancy: Sequence[float], ladder: RateLadder) -> RatePmf:
    """Collapse a user-count distribution onto the rate ladder's levels."""
    occupancy = np.asarray(occupancy, dtype=float)
    m = occupancy.size - 1
    if m != ladder.m:
        raise ParameterError(f"ladder tops out at F_n={ladder.m} but occupancy covers 0..{m}")
    _check_pmf(occupancy)
    edges = np.concatenate(([0], np.asarray(ladder.thresholds) + 1))
    cumulative = np.concatenate(([0.0], np.cumsum(occupancy)))
    probs = cumulative[edges[1:]] - cumulative[edges[:-1]]
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    return RatePmf(ladder.rates, tuple(float(p) for p in probs))


def segments_per_cycle(rate: float, gc: float, segment: int) -> int:
    """eCPRI segments needed to carry ``rate`` bits/s for one grant cycle."""
    # Round before ceil so float noise on exact multiples does not add a segment.
    return int(math.ceil(round(rate * gc / (8 * segment), 9)))


def ru_size_pmf(
    profile: RuProfile,
    ladder: RateLadder,
    load_scale: float,
    gc: float,
    segment: int = 1500,
) -> SizePmf:
    """Segments per grant cycle emitted by one RU at a load fraction."""
    if not gc > 0:
        raise ParameterError(f"grant cycle must be > 0, got {gc}")
    if not segment > 0:
        raise ParameterError(f"segment size must be > 0, got {segment}")
    if not 0 <= load_scale <= 1:
        raise ParameterError(f"load_scale must be in [0, 1], got {load_scale}")
    if ladder.m != profile.m:
        raise ParameterError(f"RU {profile.id}: ladder F_n={ladder.m} does not match m={profile.m}")
    occupancy = erlang_occupancy(profile.gamma * load_scale, profile.nu, profile.m)
    rate_pmf = rate_probabilities(occupancy, ladder)
    entries: dict[int, float] = {}
    for rate, p in zip(rate_pmf.rates, rate_pmf.probs):
        x = segments_per_cycle(rate, gc, segment)
        entries[x] = entries.get(x, 0.0) + p
    return SizePmf.from_entries(entries, segment)
