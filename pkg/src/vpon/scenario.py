"""JSON scenario documents driving the command-line experiments.

Every section is optional.  Unknown keys are rejected with an error that
names the full key path, so typos never silently fall back to defaults.

Example::

    {
      "layout": {"generate": {"n_macro": 4, "smalls_per_macro": 3, "area": [0, 0, 3, 3]}},
      "channel": {"line_rate": 50e9, "gc": 125e-6},
      "threshold_us": 100,
      "loads": [0.1, 0.3],
      "w": 3,
      "max_iterations": [10, 70],
      "seeds": [0, 1]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import LayoutError, ParameterError, ScenarioError
from .latency import ChannelConfig
from .layout import DEFAULT_DETOUR, Layout, generate_layout
from .optimizer import Costs
from .sim import SimConfig
from .traffic import RateLadder, RuProfile, Split, default_ladder

TOP_KEYS = {
    "layout", "detour", "ladders", "profiles", "channel", "threshold_us", "loads", "w",
    "max_iterations", "seeds", "costs", "feasibility", "validate", "benchmark",
}
GENERATE_KEYS = {"n_macro", "smalls_per_macro", "area", "share_71", "min_separation"}
INLINE_KEYS = {"area", "macros", "smalls"}
MACRO_KEYS = {"id", "x", "y"}
SMALL_KEYS = {"id", "x", "y", "split", "m", "tree", "gamma", "nu"}
LADDER_KEYS = {"thresholds", "rates"}
PROFILE_KEYS = {"m", "gamma", "nu"}
CHANNEL_KEYS = {"line_rate", "gc", "wavelengths", "fiber_delay", "segment", "framing"}
COST_KEYS = {"cap", "olt"}
FEAS_KEYS = {"max71", "max72", "distance_km"}
VALIDATE_KEYS = {
    "grid", "max_rus", "duration", "warmup", "tolerance", "distance_km",
    "arrival_mode", "rate_mode", "delivery", "max_rho",
}
BENCH_KEYS = {"iterations", "sim_in_loop", "sim_duration"}


def _check_keys(doc: Any, allowed: set[str], where: str) -> Mapping:
    if not isinstance(doc, Mapping):
        raise ScenarioError(f"{where or 'scenario'} must be a JSON object")
    for key in doc:
        if key not in allowed:
            path = f"{where}.{key}" if where else key
            raise ScenarioError(f"unknown key {path!r}")
    return doc


def _as_list(value, where: str) -> list:
    if isinstance(value, (list, tuple)):
        if not value:
            raise ScenarioError(f"{where!r} must not be empty")
        return list(value)
    return [value]


@dataclass
class Scenario:
    layout_spec: dict = field(default_factory=lambda: {"generate": {}})
    detour: float = DEFAULT_DETOUR
    ladders: dict[Split, RateLadder] = field(default_factory=dict)
    profiles: dict[Split, RuProfile] = field(default_factory=dict)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    threshold_us: float = 100.0
    loads: list[float] = field(default_factory=lambda: [0.3])
    w: int = 3
    max_iterations: list[int] = field(default_factory=lambda: [10])
    seeds: list[int] = field(default_factory=lambda: [0])
    costs: Costs = field(default_factory=Costs)
    max71: int = 10
    max72: int = 10
    feasibility_distance_km: float = 0.0
    grid: list[tuple[int, int]] | None = None
    max_rus: int = 8
    sim: SimConfig = field(default_factory=SimConfig)
    tolerance: float = 0.15
    validate_distance_km: float = 0.0
    max_rho: float = 0.85
    bench_iterations: list[int] = field(default_factory=lambda: [10, 70])
    sim_in_loop: bool = False
    sim_duration: int = 100_000

    # -- loading --
    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: Path | None = None) -> "Scenario":
        _check_keys(doc, TOP_KEYS, "")
        sc = cls()
        sc.base_dir = base_dir
        try:
            sc._load(doc)
        except ScenarioError:
            raise
        except (ParameterError, LayoutError, TypeError, ValueError) as exc:
            raise ScenarioError(str(exc)) from None
        return sc

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc, path.parent)

    def _load(self, doc: Mapping):
        if "layout" in doc:
            spec = _check_keys(doc["layout"], {"generate", "inline", "file"}, "layout")
            if len(spec) != 1:
                raise ScenarioError("layout needs exactly one of 'generate', 'inline', 'file'")
            if "generate" in spec:
                _check_keys(spec["generate"], GENERATE_KEYS, "layout.generate")
            if "inline" in spec:
                inline = _check_keys(spec["inline"], INLINE_KEYS, "layout.inline")
                for i, m in enumerate(inline.get("macros", [])):
                    _check_keys(m, MACRO_KEYS, f"layout.inline.macros[{i}]")
                for i, s in enumerate(inline.get("smalls", [])):
                    _check_keys(s, SMALL_KEYS, f"layout.inline.smalls[{i}]")
            self.layout_spec = dict(spec)
        self.detour = float(doc.get("detour", self.detour))
        for key, value in _check_keys(doc.get("profiles", {}), {s.value for s in Split}, "profiles").items():
            p = _check_keys(value, PROFILE_KEYS, f"profiles.{key}")
            split = Split.parse(key)
            m = int(p.get("m", RuProfile(0, split).m))
            nu = float(p.get("nu", RuProfile(0, split).nu))
            self.profiles[split] = RuProfile(0, split, m, float(p.get("gamma", m * nu)), nu)
        for split in Split:
            self.profiles.setdefault(split, RuProfile(0, split))
        for key, value in _check_keys(doc.get("ladders", {}), {s.value for s in Split}, "ladders").items():
            lad = _check_keys(value, LADDER_KEYS, f"ladders.{key}")
            self.ladders[Split.parse(key)] = RateLadder(tuple(lad["thresholds"]), tuple(lad["rates"]))
        for split in Split:
            self.ladders.setdefault(split, default_ladder(split, self.profiles[split].m))
        self.channel = ChannelConfig(**_check_keys(doc.get("channel", {}), CHANNEL_KEYS, "channel"))
        self.threshold_us = float(doc.get("threshold_us", self.threshold_us))
        self.loads = [float(x) for x in _as_list(doc.get("loads", self.loads), "loads")]
        for load in self.loads:
            if not 0 <= load <= 1:
                raise ScenarioError(f"loads must lie in [0, 1], got {load}")
        self.w = int(doc.get("w", self.w))
        if self.w < 1:
            raise ScenarioError(f"w must be >= 1, got {self.w}")
        self.max_iterations = [int(x) for x in _as_list(doc.get("max_iterations", self.max_iterations), "max_iterations")]
        if min(self.max_iterations) < 1:
            raise ScenarioError("max_iterations must be >= 1")
        self.seeds = [int(x) for x in _as_list(doc.get("seeds", self.seeds), "seeds")]
        costs = _check_keys(doc.get("costs", {}), COST_KEYS, "costs")
        self.costs = Costs(**{k: _cost_value(v) for k, v in costs.items()})

        feas = _check_keys(doc.get("feasibility", {}), FEAS_KEYS, "feasibility")
        self.max71 = int(feas.get("max71", self.max71))
        self.max72 = int(feas.get("max72", self.max72))
        self.feasibility_distance_km = float(feas.get("distance_km", 0.0))

        val = _check_keys(doc.get("validate", {}), VALIDATE_KEYS, "validate")
        if "grid" in val:
            self.grid = [(int(a), int(b)) for a, b in val["grid"]]
        self.max_rus = int(val.get("max_rus", self.max_rus))
        self.tolerance = float(val.get("tolerance", self.tolerance))
        self.validate_distance_km = float(val.get("distance_km", 0.0))
        self.max_rho = float(val.get("max_rho", self.max_rho))
        self.sim = SimConfig(
            duration=int(val.get("duration", 100_000)),
            seed=self.seeds[0],
            warmup=val.get("warmup"),
            channel=self.channel,
            arrival_mode=val.get("arrival_mode", "batch"),
            rate_mode=val.get("rate_mode", "iid"),
            delivery=val.get("delivery", "joint"),
        )

        bench = _check_keys(doc.get("benchmark", {}), BENCH_KEYS, "benchmark")
        self.bench_iterations = [int(x) for x in _as_list(bench.get("iterations", self.bench_iterations), "benchmark.iterations")]
        self.sim_in_loop = bool(bench.get("sim_in_loop", False))
        self.sim_duration = int(bench.get("sim_duration", self.sim_duration))

    def with_seed(self, seed: int) -> "Scenario":
        from dataclasses import replace

        out = replace(self, seeds=[int(seed)], sim=replace(self.sim, seed=int(seed)))
        out.base_dir = getattr(self, "base_dir", None)
        return out

    # -- derived objects --
    def validation_grid(self) -> list[tuple[int, int]]:
        if self.grid is not None:
            return list(self.grid)
        return [(a, n - a) for n in range(1, self.max_rus + 1) for a in range(n + 1)]

    def build_layout(self, seed: int) -> Layout:
        spec = self.layout_spec
        if "inline" in spec:
            return Layout.from_dict(spec["inline"], self.detour, self.profiles)
        if "file" in spec:
            path = Path(spec["file"])
            if not path.is_absolute() and getattr(self, "base_dir", None):
                path = self.base_dir / path
            try:
                return Layout.load(path, self.detour, self.profiles)
            except OSError as exc:
                raise ScenarioError(f"cannot read layout {path}: {exc.strerror}") from None
        gen = spec.get("generate", {})
        try:
            return generate_layout(
                seed,
                int(gen.get("n_macro", 4)),
                float(gen.get("smalls_per_macro", 3)),
                tuple(gen.get("area", (0.0, 0.0, 4.0, 4.0))),
                share_71=float(gen.get("share_71", 0.5)),
                min_separation=gen.get("min_separation"),
                detour=self.detour,
                profiles=self.profiles,
            )
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"layout.generate: {exc}") from None


def _cost_value(v):
    if isinstance(v, Mapping):
        return {int(k): float(c) for k, c in v.items()}
    return float(v)
