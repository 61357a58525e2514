"""Synthetic macro/small-cell geometry and level-1 PON tree structure.

Macro cells host the candidate MEC nodes (one per level-1 PON tree).  Small
cells carry the RUs and join the tree of their nearest macro, i.e. the
macro whose Voronoi cell contains them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LayoutError
from .traffic import RuProfile, Split
from .tsp import RingOrder, ring_order

DEFAULT_DETOUR = 1.4
MAX_PLACEMENT_RETRIES = 1000


@dataclass(frozen=True)
class Macro:
    id: int
    x: float
    y: float

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


def fiber_km(p, q, detour: float = DEFAULT_DETOUR) -> float:
    """Fiber length between two points: Euclidean distance times the detour factor."""
    return detour * math.hypot(p[0] - q[0], p[1] - q[1])


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


class Layout:
    """Macro sites, RUs, tree membership and fiber distance tables (km).

    Trees are identified by their macro's id; RUs by ``RuProfile.id``.
    """

    def __init__(
        self,
        macros: Sequence[Macro],
        smalls: Sequence[RuProfile],
        area: Sequence[float],
        detour: float = DEFAULT_DETOUR,
    ):
        if not macros:
            raise LayoutError("layout needs at least one macro site")
        self.macros = tuple(macros)
        self.smalls = tuple(smalls)
        self.area = tuple(float(v) for v in area)
        self.detour = float(detour)
        self._tree_index = {m.id: i for i, m in enumerate(self.macros)}
        self._ru_index = {r.id: i for i, r in enumerate(self.smalls)}
        if len(self._tree_index) != len(self.macros):
            raise LayoutError("duplicate macro ids")
        if len(self._ru_index) != len(self.smalls):
            raise LayoutError("duplicate small-cell ids")
        self.tree_members: dict[int, list[int]] = {m.id: [] for m in self.macros}
        for ru in self.smalls:
            if ru.tree_id not in self.tree_members:
                raise LayoutError(f"RU {ru.id} references unknown tree {ru.tree_id}")
            self.tree_members[ru.tree_id].append(ru.id)

        macro_xy = np.array([m.position for m in self.macros], dtype=float)
        ru_xy = np.array([r.position for r in self.smalls], dtype=float).reshape(-1, 2)
        self.tree_distances = self.detour * _pairwise(macro_xy, macro_xy)
        self.ru_tree_distances = self.detour * _pairwise(ru_xy, macro_xy)
        self.ru_distances = self.detour * _pairwise(ru_xy, ru_xy)

    @property
    def tree_ids(self) -> list[int]:
        return [m.id for m in self.macros]

    @property
    def ru_ids(self) -> list[int]:
        return [r.id for r in self.smalls]

    def macro(self, tree_id: int) -> Macro:
        try:
            return self.macros[self._tree_index[tree_id]]
        except KeyError:
            raise LayoutError(f"unknown tree {tree_id}") from None

    def ru(self, ru_id: int) -> RuProfile:
        try:
            return self.smalls[self._ru_index[ru_id]]
        except KeyError:
            raise LayoutError(f"unknown RU {ru_id}") from None

    def ru_to_tree(self, ru_id: int, tree_id: int) -> float:
        self.ru(ru_id), self.macro(tree_id)
        return float(self.ru_tree_distances[self._ru_index[ru_id], self._tree_index[tree_id]])

    def position(self, node) -> tuple[float, float]:
        kind, ident = node
        if kind == "macro":
            return self.macro(ident).position
        if kind == "ru":
            return self.ru(ident).position
        raise LayoutError(f"unknown node kind {kind!r}")

    def with_profiles(self, template: Mapping[Split, RuProfile]) -> "Layout":
        """Copy with each RU's traffic parameters taken from the per-split template."""
        smalls = [
            replace(r, m=template[r.split].m, gamma=template[r.split].gamma, nu=template[r.split].nu)
            for r in self.smalls
        ]
        return Layout(self.macros, smalls, self.area, self.detour)

    def to_dict(self) -> dict:
        return {
            "area": list(self.area),
            "macros": [{"id": m.id, "x": m.x, "y": m.y} for m in self.macros],
            "smalls": [
                {"id": r.id, "x": r.position[0], "y": r.position[1], "split": r.split.value, "m": r.m, "tree": r.tree_id}
                for r in self.smalls
            ],
        }

    @classmethod
    def from_dict(
        cls,
        data: Mapping,
        detour: float = DEFAULT_DETOUR,
        profiles: Mapping[Split, RuProfile] | None = None,
    ) -> "Layout":
        """Rebuild a layout; RUs without a ``tree`` key join their nearest macro."""
        try:
            macros = [Macro(int(m["id"]), float(m["x"]), float(m["y"])) for m in data["macros"]]
            area = data.get("area") or _bounding_box(
                [(m.x, m.y) for m in macros] + [(s["x"], s["y"]) for s in data["smalls"]]
            )
            smalls = []
            for s in data["smalls"]:
                split = Split.parse(s["split"])
                base = (profiles or {}).get(split) or RuProfile(0, split)
                m = int(s.get("m", base.m))
                default_gamma = base.gamma if m == base.m else base.gamma * m / base.m
                gamma = float(s.get("gamma", default_gamma))
                nu = float(s.get("nu", base.nu))
                pos = (float(s["x"]), float(s["y"]))
                tree = s.get("tree")
                if tree is None:
                    tree = nearest_macro(pos, macros)
                smalls.append(RuProfile(int(s["id"]), split, m, gamma, nu, pos, int(tree)))
        except KeyError as exc:
            raise LayoutError(f"layout document is missing key {exc.args[0]!r}") from None
        return cls(macros, smalls, area, detour)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path, detour: float = DEFAULT_DETOUR, profiles=None) -> "Layout":
        return cls.from_dict(json.loads(Path(path).read_text()), detour, profiles)

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return (
            self.macros == other.macros
            and self.smalls == other.smalls
            and self.area == other.area
            and self.detour == other.detour
        )

    __hash__ = None

    def __repr__(self):
        return f"Layout(trees={len(self.macros)}, rus={len(self.smalls)}, area={self.area})"


def _bounding_box(points) -> tuple[float, float, float, float]:
    xs, ys = zip(*points)
    return (min(xs), min(ys), max(xs), max(ys))


def nearest_macro(point, macros: Sequence[Macro]) -> int:
    """Id of the closest macro; ties go to the lower id."""
    best = min(macros, key=lambda m: (math.hypot(point[0] - m.x, point[1] - m.y), m.id))
    return best.id


def layout_from_points(
    macro_points: Iterable,
    small_points: Iterable,
    splits: Iterable | None = None,
    area=None,
    detour: float = DEFAULT_DETOUR,
    profiles: Mapping[Split, RuProfile] | None = None,
) -> Layout:
    """Build a layout from explicit coordinates, assigning trees by nearest macro."""
    macros = [Macro(i, float(x), float(y)) for i, (x, y) in enumerate(macro_points)]
    small_points = [tuple(p) for p in small_points]
    splits = list(splits) if splits is not None else [Split.SPLIT_71] * len(small_points)
    doc = {
        "area": area,
        "macros": [{"id": m.id, "x": m.x, "y": m.y} for m in macros],
        "smalls": [{"id": i, "x": p[0], "y": p[1], "split": Split.parse(s).value} for i, (p, s) in enumerate(zip(small_points, splits))],
    }
    return Layout.from_dict(doc, detour, profiles)


def generate_layout(
    seed: int,
    n_macro: int,
    smalls_per_macro_mean: float,
    area: Sequence[float] = (0.0, 0.0, 4.0, 4.0),
    *,
    share_71: float = 0.5,
    min_separation: float | None = None,
    detour: float = DEFAULT_DETOUR,
    profiles: Mapping[Split, RuProfile] | None = None,
) -> Layout:
    """Seeded synthetic layout.

    Macros are drawn uniformly in ``area`` = (x0, y0, x1, y1) subject to a
    minimum pairwise separation (default: half the side of an equal-share
    square).  The number of small cells is Poisson with mean
    ``n_macro * smalls_per_macro_mean`` (at least one); they are scattered
    uniformly and each joins its nearest macro.
    """
    if n_macro < 1:
        raise LayoutError(f"n_macro must be >= 1, got {n_macro}")
    x0, y0, x1, y1 = (float(v) for v in area)
    if not (x1 > x0 and y1 > y0):
        raise LayoutError(f"area must have positive extent, got {tuple(area)}")
    if smalls_per_macro_mean < 0:
        raise LayoutError("smalls_per_macro_mean must be >= 0")
    rng = np.random.default_rng(seed)
    if min_separation is None:
        min_separation = 0.5 * math.sqrt((x1 - x0) * (y1 - y0) / n_macro)

    placed: list[tuple[float, float]] = []
    for i in range(n_macro):
        for _ in range(MAX_PLACEMENT_RETRIES):
            cand = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
            if all(math.hypot(cand[0] - p[0], cand[1] - p[1]) >= min_separation for p in placed):
                placed.append(cand)
                break
        else:
            raise LayoutError(
                f"could not place macro {i} with separation {min_separation:.3f} km "
                f"after {MAX_PLACEMENT_RETRIES} tries"
            )
    macros = [Macro(i, x, y) for i, (x, y) in enumerate(placed)]

    n_small = max(1, int(rng.poisson(n_macro * smalls_per_macro_mean)))
    xs = rng.uniform(x0, x1, n_small)
    ys = rng.uniform(y0, y1, n_small)
    is71 = rng.random(n_small) < share_71
    profiles = profiles or {}
    smalls = []
    for i in range(n_small):
        split = Split.SPLIT_71 if is71[i] else Split.SPLIT_72
        base = profiles.get(split) or RuProfile(0, split)
        pos = (float(xs[i]), float(ys[i]))
        smalls.append(RuProfile(i, split, base.m, base.gamma, base.nu, pos, nearest_macro(pos, macros)))
    return Layout(macros, smalls, (x0, y0, x1, y1), detour)


def fiber_distance(layout: Layout, a, b) -> float:
    """Fiber km between two nodes given as ``("macro", id)`` or ``("ru", id)``."""
    return fiber_km(layout.position(a), layout.position(b), layout.detour)


def k_nearest_trees(layout: Layout, tree: int, w: int) -> list[int]:
    """The ``w`` trees closest to ``tree`` by macro-to-macro fiber distance, self first."""
    if w < 1:
        raise LayoutError(f"w must be >= 1, got {w}")
    i = layout._tree_index.get(tree)
    if i is None:
        raise LayoutError(f"unknown tree {tree}")
    row = layout.tree_distances[i]
    others = sorted(
        (m.id for m in layout.macros if m.id != tree),
        key=lambda t: (row[layout._tree_index[t]], t),
    )
    return ([tree] + others)[:w]


def neighbor_sets(layout: Layout, w: int) -> dict[int, list[int]]:
    return {t: k_nearest_trees(layout, t, w) for t in layout.tree_ids}


def slice_ring(layout: Layout, tree: int, ru_ids: Sequence[int]) -> RingOrder:
    """Ring through the MEC macro and its slice's RUs (index 0 is the macro)."""
    points = [layout.macro(tree).position] + [layout.ru(r).position for r in ru_ids]
    ring = ring_order(points)
    return RingOrder(ring.order, ring.tour_length * layout.detour)
