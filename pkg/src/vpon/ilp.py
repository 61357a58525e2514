"""Pure-binary linear programs and an exact depth-first branch-and-bound.

The solver does no LP relaxation.  It relies on bound propagation over the
linear rows (activity bounds fix free variables or detect conflicts) and on
an objective bound valid for non-negative costs: the cost already committed
plus the cheapest way to satisfy the program's cardinality row, if any.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ModelError, ParameterError

EPS = 1e-9
LE, GE, EQ = "<=", ">=", "=="


@dataclass
class Row:
    coefs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""

    def __post_init__(self):
        if self.sense not in (LE, GE, EQ):
            raise ModelError(f"unknown row sense {self.sense!r}")

    def activity(self, values) -> float:
        return sum(a * values[j] for j, a in self.coefs.items())

    def satisfied(self, values, eps: float = EPS) -> bool:
        act = self.activity(values)
        if self.sense == LE:
            return act <= self.rhs + eps
        if self.sense == GE:
            return act >= self.rhs - eps
        return abs(act - self.rhs) <= eps


@dataclass
class BinaryLinearProgram:
    """Minimise ``objective @ x`` over ``x in {0,1}^n`` subject to ``rows``.

    ``branch_order`` lists variables in the order the search fixes them and
    ``branch_first`` the value tried first for each.  ``cardinality_row``
    (optional) indexes a ``>=`` row with unit coefficients whose variables
    carry the objective; it sharpens the bound.
    """

    names: list[str] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    branch_order: list[int] = field(default_factory=list)
    branch_first: dict[int, int] = field(default_factory=dict)
    cardinality_row: int | None = None
    n_cuts: int = 0
    # Rows implied by others; the solver may skip them.
    redundant: set[int] = field(default_factory=set)

    def add_var(self, name: str, cost: float = 0.0) -> int:
        if cost < 0:
            raise ModelError(f"objective coefficient of {name} must be >= 0")
        self.names.append(name)
        self.objective.append(float(cost))
        return len(self.names) - 1

    def add_row(self, coefs: Mapping[int, float], sense: str, rhs: float, name: str = "") -> int:
        for j in coefs:
            if not 0 <= j < len(self.names):
                raise ModelError(f"row {name!r} references unknown variable {j}")
        self.rows.append(Row({int(j): float(a) for j, a in coefs.items() if a != 0}, sense, float(rhs), name))
        return len(self.rows) - 1

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def evaluate(self, values) -> float:
        return float(np.dot(self.objective, values))

    def feasible(self, values) -> bool:
        return all(row.satisfied(values) for row in self.rows)


@dataclass
class BnbResult:
    status: str  # "optimal" | "infeasible" | "node_limit"
    values: np.ndarray | None
    objective: float
    nodes: int

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class _Search:
    def __init__(self, program: BinaryLinearProgram, node_limit: int | None):
        self.p = program
        n = program.n_vars
        self.node_limit = node_limit
        self.cost = [float(c) for c in program.objective]
        self.val = [-1] * n
        # Per variable: (row, delta_min, delta_max) applied when fixed to 1 / to 0.
        self.on1: list[list[tuple[int, float, float]]] = [[] for _ in range(n)]
        self.on0: list[list[tuple[int, float, float]]] = [[] for _ in range(n)]
        # Rows whose forcing can change when j is fixed to 1 / to 0.
        self.wake1: list[list[int]] = [[] for _ in range(n)]
        self.wake0: list[list[int]] = [[] for _ in range(n)]
        # Row items sorted by |coef| descending so forcing scans can stop early.
        self.row_vars: list[list[tuple[int, float]]] = []
        self.minact: list[float] = []
        self.maxact: list[float] = []
        self.sense: list[str] = []
        self.rhs: list[float] = []
        for r, row in enumerate(program.rows):
            items = sorted(row.coefs.items(), key=lambda item: -abs(item[1]))
            if r in program.redundant:
                items = []
            self.row_vars.append(items)
            for j, a in items:
                # Raising min activity matters to <= rows, lowering max to >= rows.
                raises_min = (self.wake1 if a > 0 else self.wake0)[j]
                lowers_max = (self.wake0 if a > 0 else self.wake1)[j]
                if row.sense != GE:
                    raises_min.append(r)
                if row.sense != LE:
                    lowers_max.append(r)
                if a > 0:
                    self.on1[j].append((r, a, 0.0))
                    self.on0[j].append((r, 0.0, -a))
                else:
                    self.on1[j].append((r, 0.0, a))
                    self.on0[j].append((r, -a, 0.0))
            self.minact.append(sum(a for _, a in items if a < 0))
            self.maxact.append(sum(a for _, a in items if a > 0))
            self.sense.append(row.sense)
            self.rhs.append(row.rhs)
        self.queued = [False] * len(program.rows)
        self.trail: list[tuple[int, int]] = []
        self.fixed_cost = 0.0
        listed = set(program.branch_order)
        self.order = list(program.branch_order) + [j for j in range(n) if j not in listed]
        self.first = [program.branch_first.get(j, 0) for j in range(n)]
        self.card = None
        if program.cardinality_row is not None:
            row = program.rows[program.cardinality_row]
            self.card = (sorted(row.coefs), row.rhs)
        self.nodes = 0
        self.best_obj = np.inf
        self.best_val = None
        self.root_bound = 0.0
        self.stopped = False
        self.limit_hit = False

    # -- variable fixing with undo trail --
    def _assign(self, j: int, v: int):
        self.val[j] = v
        self.trail.append((j, v))
        minact, maxact = self.minact, self.maxact
        if v:
            self.fixed_cost += self.cost[j]
            deltas = self.on1[j]
        else:
            deltas = self.on0[j]
        for r, dlo, dhi in deltas:
            minact[r] += dlo
            maxact[r] += dhi

    def _undo(self, mark: int):
        minact, maxact = self.minact, self.maxact
        while len(self.trail) > mark:
            j, v = self.trail.pop()
            self.val[j] = -1
            if v:
                self.fixed_cost -= self.cost[j]
                deltas = self.on1[j]
            else:
                deltas = self.on0[j]
            for r, dlo, dhi in deltas:
                minact[r] -= dlo
                maxact[r] -= dhi

    def _fix(self, j: int, v: int, queue: list[int]) -> bool:
        cur = self.val[j]
        if cur != -1:
            return cur == v
        self._assign(j, v)
        queued = self.queued
        for r in (self.wake1 if v else self.wake0)[j]:
            if not queued[r]:
                queued[r] = True
                queue.append(r)
        return True

    def _propagate(self, queue: list[int]) -> bool:
        val = self.val
        queued = self.queued
        ok = True
        while queue:
            r = queue.pop()
            queued[r] = False
            if not ok:
                continue
            sense, rhs = self.sense[r], self.rhs[r]
            if sense != GE:
                slack = rhs - self.minact[r]
                if slack < -EPS:
                    ok = False
                    continue
                for j, a in self.row_vars[r]:
                    if val[j] != -1:
                        continue
                    if abs(a) <= slack + EPS:
                        break
                    # Setting j the "expensive" way would overshoot rhs.
                    if not self._fix(j, 0 if a > 0 else 1, queue):
                        ok = False
                        break
                    slack = rhs - self.minact[r]
            if ok and sense != LE:
                slack = self.maxact[r] - rhs
                if slack < -EPS:
                    ok = False
                    continue
                for j, a in self.row_vars[r]:
                    if val[j] != -1:
                        continue
                    if abs(a) <= slack + EPS:
                        break
                    if not self._fix(j, 1 if a > 0 else 0, queue):
                        ok = False
                        break
                    slack = self.maxact[r] - rhs
        return ok

    def _bound(self) -> float:
        bound = self.fixed_cost
        if self.card is not None:
            members, need = self.card
            have = 0
            free_costs = []
            for j in members:
                v = self.val[j]
                if v == 1:
                    have += 1
                elif v == -1:
                    free_costs.append(self.cost[j])
            short = int(np.ceil(need - have - EPS))
            if short > 0:
                free_costs.sort()
                bound += sum(free_costs[:short])
        return bound

    def _dfs(self):
        if self.stopped:
            return
        self.nodes += 1
        if self.node_limit is not None and self.nodes > self.node_limit:
            self.stopped = self.limit_hit = True
            return
        if self._bound() >= self.best_obj - EPS:
            return
        j = next((k for k in self.order if self.val[k] == -1), None)
        if j is None:
            self.best_obj = self.fixed_cost
            self.best_val = np.array(self.val, dtype=np.int8)
            if self.best_obj <= self.root_bound + EPS:
                self.stopped = True
            return
        first = self.first[j]
        for v in (first, 1 - first):
            mark = len(self.trail)
            queue: list[int] = []
            if self._fix(j, v, queue) and self._propagate(queue):
                self._dfs()
            self._undo(mark)
            if self.stopped:
                return

    def run(self) -> BnbResult:
        queue = list(range(len(self.p.rows)))
        self.queued = [True] * len(queue)
        for r, items in enumerate(self.row_vars):
            if not items and not self.p.rows[r].coefs and not self.p.rows[r].satisfied([]):
                return BnbResult("infeasible", None, np.inf, 0)
        if not self._propagate(queue):
            return BnbResult("infeasible", None, np.inf, 1)
        self.root_bound = self._bound()
        self._dfs()
        if self.limit_hit:
            return BnbResult("node_limit", self.best_val, float(self.best_obj), self.nodes)
        if self.best_val is None:
            return BnbResult("infeasible", None, np.inf, self.nodes)
        return BnbResult("optimal", self.best_val, float(self.best_obj), self.nodes)


def solve_bnb(program: BinaryLinearProgram, node_limit: int | None = None) -> BnbResult:
    """Exact minimum of a binary program, or a proof that none exists.

    Deterministic for a fixed ``branch_order``.  ``node_limit`` caps the
    search; hitting it yields status ``"node_limit"``.
    """
    if node_limit is not None and node_limit < 1:
        raise ParameterError("node_limit must be positive")
    return _Search(program, node_limit).run()


def enumerate_optimum(program: BinaryLinearProgram) -> tuple[float, np.ndarray | None]:
    """Brute force over all 2^n assignments (small programs only)."""
    n = program.n_vars
    if n > 24:
        raise ParameterError("too many variables for enumeration")
    best = (np.inf, None)
    for code in range(1 << n):
        values = np.array([(code >> j) & 1 for j in range(n)])
        if program.feasible(values):
            obj = program.evaluate(values)
            if obj < best[0] - EPS:
                best = (obj, values)
    return best
