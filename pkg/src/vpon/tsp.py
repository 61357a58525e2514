"""Shortest closed tour through a set of points (the level-1 ring)."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

EXACT_MAX_NODES = 12


@dataclass(frozen=True)
class RingOrder:
    order: tuple[int, ...]
    tour_length: float


def distance_matrix(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def tour_length(order, dist: np.ndarray) -> float:
    if len(order) < 2:
        return 0.0
    idx = np.asarray(order)
    return float(dist[idx, np.roll(idx, -1)].sum())


def held_karp(dist: np.ndarray) -> tuple[float, list[int]]:
    """Exact minimum tour by dynamic programming over subsets, starting at node 0."""
    n = len(dist)
    if n <= 3:
        order = list(range(n))
        return tour_length(order, dist), order
    # Subsets over nodes 1..n-1; node 0 is the fixed start.
    k = n - 1
    full = (1 << k) - 1
    cost = np.full((1 << k, k), np.inf)
    parent = np.full((1 << k, k), -1, dtype=np.int64)
    for j in range(k):
        cost[1 << j, j] = dist[0, j + 1]
    sub = dist[1:, 1:]
    bits = 1 << np.arange(k)
    for mask in range(1, full + 1):
        row = cost[mask]
        if not np.isfinite(row).any():
            continue
        # Extend every end-point j in mask to every node not yet visited.
        cand = row[:, None] + sub  # [j, nxt]
        best_j = np.argmin(cand, axis=0)
        best = cand[best_j, np.arange(k)]
        free = np.flatnonzero((mask & bits) == 0)
        new = mask | bits[free]
        better = best[free] < cost[new, free]
        free, new = free[better], new[better]
        cost[new, free] = best[free]
        parent[new, free] = best_j[free]
    closing = cost[full] + dist[1:, 0]
    last = int(np.argmin(closing))
    length = float(closing[last])
    path = []
    mask = full
    while last >= 0:
        path.append(last + 1)
        prev = int(parent[mask, last])
        mask ^= 1 << last
        last = prev
    return length, [0] + path[::-1]


def brute_force_tour(dist: np.ndarray) -> tuple[float, list[int]]:
    n = len(dist)
    if n <= 3:
        order = list(range(n))
        return tour_length(order, dist), order
    best = (np.inf, None)
    for perm in itertools.permutations(range(1, n)):
        order = (0,) + perm
        length = tour_length(order, dist)
        if length < best[0]:
            best = (length, list(order))
    return best


def nearest_neighbor_tour(dist: np.ndarray, start: int = 0) -> list[int]:
    n = len(dist)
    unvisited = set(range(n)) - {start}
    tour = [start]
    while unvisited:
        last = tour[-1]
        # min over sorted ids keeps ties deterministic
        nxt = min(sorted(unvisited), key=lambda j: dist[last, j])
        tour.append(nxt)
        unvisited.remove(nxt)
    return tour


def two_opt(tour: list[int], dist: np.ndarray, eps: float = 1e-12) -> list[int]:
    """Apply improving segment reversals until none remains."""
    tour = list(tour)
    n = len(tour)
    if n < 4:
        return tour
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a, b = tour[i], tour[i + 1]
            for j in range(i + 2, n if i > 0 else n - 1):
                c, d = tour[j], tour[(j + 1) % n]
                delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
                if delta < -eps:
                    tour[i + 1 : j + 1] = reversed(tour[i + 1 : j + 1])
                    improved = True
                    a, b = tour[i], tour[i + 1]
    return tour


def is_two_opt_stable(tour, dist: np.ndarray, eps: float = 1e-9) -> bool:
    n = len(tour)
    for i in range(n - 1):
        for j in range(i + 2, n if i > 0 else n - 1):
            a, b, c, d = tour[i], tour[i + 1], tour[j], tour[(j + 1) % n]
            if dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d] < -eps:
                return False
    return True


def heuristic_tour(dist: np.ndarray, starts=None) -> tuple[float, list[int]]:
    """Nearest-neighbour construction polished with 2-opt.

    Tries every start node (or those in ``starts``) and keeps the shortest.
    """
    n = len(dist)
    if n == 0:
        return 0.0, []
    best = (np.inf, None)
    for s in range(n) if starts is None else starts:
        tour = two_opt(nearest_neighbor_tour(dist, s), dist)
        length = tour_length(tour, dist)
        if length < best[0] - 1e-12:
            best = (length, tour)
    length, tour = best
    # Rotate so node 0 leads; the cycle is unchanged.
    k = tour.index(0)
    return length, tour[k:] + tour[:k]


def ring_order(points, exact_max: int = EXACT_MAX_NODES) -> RingOrder:
    """Closed tour through ``points``; exact up to ``exact_max`` nodes."""
    dist = distance_matrix(points)
    n = len(dist)
    if n == 0:
        return RingOrder((), 0.0)
    if n <= exact_max:
        length, order = held_karp(dist)
    else:
        length, order = heuristic_tour(dist)
    return RingOrder(tuple(int(i) for i in order), tour_length(order, dist))
