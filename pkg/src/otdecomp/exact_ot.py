"""Exact discrete optimal transport.

:func:`solve_discrete` is a transportation (network) simplex on the complete
bipartite graph. The basis is a spanning tree over ``n + m`` nodes (rows
``0..n-1``, columns ``n..n+m-1``); dual potentials are read off the final
tree. :func:`solve_1d_convex` and :func:`brute_force_assignment` are
independent oracles.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import (
    DimensionError,
    NumericalFailure,
    SizeCapExceeded,
    TooLarge,
    ValidationError,
)
from .measures import (
    CostSpec,
    DiscreteMeasure,
    cost_matrix,
    marginal_costs,
    merge_duplicates,
)

DEFAULT_SIZE_CAP = 50_000_000


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling: ``rows[k], cols[k]`` carry ``masses[k] > 0``."""

    rows: np.ndarray
    cols: np.ndarray
    masses: np.ndarray
    value: float
    shape: Tuple[int, int]

    @property
    def entries(self) -> List[Tuple[int, int, float]]:
        return [(int(i), int(j), float(m)) for i, j, m in zip(self.rows, self.cols, self.masses)]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.masses)
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.masses, minlength=self.shape[0])

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.masses, minlength=self.shape[1])


@dataclass(frozen=True)
class DualPotentials:
    f: np.ndarray
    g: np.ndarray

    def value(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(np.dot(mu.weights, self.f) + np.dot(nu.weights, self.g))


def plan_from_dense(pi: np.ndarray, C: np.ndarray) -> TransportPlan:
    rows, cols = np.nonzero(pi > 0)
    masses = pi[rows, cols]
    return TransportPlan(rows, cols, masses, float(np.dot(masses, C[rows, cols])), pi.shape)


def plan_cost(plan: TransportPlan, C: np.ndarray) -> float:
    return float(np.dot(plan.masses, C[plan.rows, plan.cols]))


# ---------------------------------------------------------------------------
# Network simplex
# ---------------------------------------------------------------------------

class _Tree:
    """Spanning-tree basis of the transportation problem."""

    def __init__(self, n: int, m: int):
        self.n, self.m = n, m
        self.adj = [set() for _ in range(n + m)]
        self.flow = {}

    def add(self, i: int, j: int, mass: float) -> None:
        self.adj[i].add(self.n + j)
        self.adj[self.n + j].add(i)
        self.flow[(i, j)] = mass

    def remove(self, i: int, j: int) -> None:
        self.adj[i].discard(self.n + j)
        self.adj[self.n + j].discard(i)
        del self.flow[(i, j)]

    def potentials(self, C: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = self.n
        u = np.zeros(n)
        v = np.zeros(self.m)
        seen = np.zeros(n + self.m, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            a = queue.popleft()
            for b in self.adj[a]:
                if seen[b]:
                    continue
                seen[b] = True
                if a < n:
                    v[b - n] = C[a, b - n] - u[a]
                else:
                    u[b] = C[b, a - n] - v[a - n]
                queue.append(b)
        if not seen.all():
            raise NumericalFailure("basis is not a spanning tree")
        return u, v

    def path(self, src: int, dst: int) -> List[int]:
        parent = {src: -1}
        queue = deque([src])
        while queue:
            a = queue.popleft()
            if a == dst:
                break
            for b in self.adj[a]:
                if b not in parent:
                    parent[b] = a
                    queue.append(b)
        if dst not in parent:
            raise NumericalFailure("entering cell does not close a cycle")
        out = [dst]
        while out[-1] != src:
            out.append(parent[out[-1]])
        return out[::-1]


def _initial_basis(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> _Tree:
    """Matrix-minimum starting basis with exactly ``n + m - 1`` cells.

    Every allocation crosses out one row or one column (never both, except
    for the final cell), which yields a spanning tree even under degeneracy.
    """
    n, m = C.shape
    tree = _Tree(n, m)
    supply = a.astype(float).copy()
    demand = b.astype(float).copy()
    row_open = np.ones(n, dtype=bool)
    col_open = np.ones(m, dtype=bool)
    rows_left, cols_left = n, m
    # stable sort keeps the (i, j) lexicographic order among equal costs
    order = np.argsort(C, axis=None, kind="stable")
    for flat in order:
        i, j = divmod(int(flat), m)
        if not (row_open[i] and col_open[j]):
            continue
        if rows_left == 1 and cols_left == 1:
            tree.add(i, j, max(min(supply[i], demand[j]), 0.0))
            break
        if (supply[i] <= demand[j] and rows_left > 1) or cols_left == 1:
            amount = supply[i]
            tree.add(i, j, amount)
            demand[j] = max(demand[j] - amount, 0.0)
            supply[i] = 0.0
            row_open[i] = False
            rows_left -= 1
        else:
            amount = demand[j]
            tree.add(i, j, amount)
            supply[i] = max(supply[i] - amount, 0.0)
            demand[j] = 0.0
            col_open[j] = False
            cols_left -= 1
    if len(tree.flow) != n + m - 1:
        raise NumericalFailure("initial basis has the wrong number of cells")
    return tree


def _network_simplex(a, b, C, tol, max_pivots=None):
    n, m = C.shape
    tree = _initial_basis(a, b, C)
    if max_pivots is None:
        max_pivots = 50 * (n + m) * max(1, int(math.log2(n * m + 1))) + 1000
    bland = False
    degenerate_run = 0
    scan_row = 0
    pivots = 0
    while True:
        u, v = tree.potentials(C)
        reduced = C - u[:, None] - v[None, :]
        negative = reduced < -tol
        if not negative.any():
            return tree, u, v, pivots
        if pivots >= max_pivots:
            raise NumericalFailure(f"no convergence after {pivots} pivots")
        if bland:
            flat = int(np.argmax(negative.ravel()))
            i, j = divmod(flat, m)
        else:
            # first row (cyclically from the last entering row) holding a
            # negative reduced cost; most negative cell within that row
            row_has = negative.any(axis=1)
            rolled = np.roll(row_has, -scan_row)
            i = (scan_row + int(np.argmax(rolled))) % n
            j = int(np.argmin(reduced[i]))
            scan_row = (i + 1) % n
        # cycle: entering (i, j) then the tree path j -> i, signs -,+,-,...
        path = tree.path(n + j, i)
        cells = []
        for k in range(len(path) - 1):
            x, y = path[k], path[k + 1]
            cells.append((y, x - n) if x >= n else (x, y - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(tree.flow[c] for c in minus)
        # lowest (i, j) among the blocking cells leaves
        leave = min(c for c in minus if tree.flow[c] == theta)
        for c in minus:
            tree.flow[c] = tree.flow[c] - theta
        for c in plus:
            tree.flow[c] = tree.flow[c] + theta
        tree.remove(*leave)
        tree.add(i, j, theta)
        pivots += 1
        if theta == 0.0:
            degenerate_run += 1
            if degenerate_run >= n + m:
                bland = True
        else:
            degenerate_run = 0
            bland = False


def solve_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec,
                   size_cap: int = DEFAULT_SIZE_CAP, C: Optional[np.ndarray] = None,
                   ) -> Tuple[TransportPlan, DualPotentials]:
    """Optimal plan and dual potentials for discrete ``mu``, ``nu``.

    Primal and dual values agree to floating-point accuracy; the returned
    plan is a basic solution with at most ``n + m - 1`` entries.
    """
    n, m = mu.size, nu.size
    if n * m > size_cap:
        raise SizeCapExceeded(f"{n}x{m} cost matrix exceeds cap {size_cap}")
    if C is None:
        C = cost_matrix(cost, mu.points, nu.points)
    C = np.asarray(C, dtype=float)
    if C.shape != (n, m):
        raise ValidationError(f"cost matrix shape {C.shape} != {(n, m)}")
    tol = 1e-12 * max(1.0, float(np.abs(C).max()))
    tree, u, v, _ = _network_simplex(mu.weights, nu.weights, C, tol)
    cells = sorted(c for c, mass in tree.flow.items() if mass > 0.0)
    rows = np.array([c[0] for c in cells], dtype=np.int64)
    cols = np.array([c[1] for c in cells], dtype=np.int64)
    masses = np.array([tree.flow[c] for c in cells], dtype=float)
    plan = TransportPlan(rows, cols, masses, float(np.dot(masses, C[rows, cols])), (n, m))
    return plan, DualPotentials(u, v)


def ot_value(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec) -> float:
    """Exact optimal value, choosing the cheapest exact route.

    A single-atom side has only the product coupling; 1-D convex power costs
    use the monotone coupling; equal-size uniform problems are assignment
    problems; everything else goes through the network simplex (after
    merging repeated atoms).
    """
    if mu.size == 1 or nu.size == 1:
        C = cost_matrix(cost, mu.points, nu.points)
        return float(mu.weights @ C @ nu.weights)
    if (cost.kind != "custom_table" and mu.dim == 1 and nu.dim == 1 and cost.p >= 1):
        return solve_1d_convex(mu, nu, cost.p)
    mu_m, nu_m = merge_duplicates(mu), merge_duplicates(nu)
    if mu_m.size == 1 or nu_m.size == 1:
        return ot_value(mu_m, nu_m, cost)
    if (mu_m.size == mu.size and nu_m.size == nu.size and mu.size == nu.size
            and np.all(mu.weights == mu.weights[0]) and np.all(nu.weights == nu.weights[0])):
        return assignment_value(mu, nu, cost)
    return solve_discrete(mu_m, nu_m, cost)[0].value


# ---------------------------------------------------------------------------
# Oracles and special cases
# ---------------------------------------------------------------------------

def solve_1d_convex(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> float:
    """Cost of the monotone (quantile) coupling for ``|x - y|**p``, ``p >= 1``."""
    if mu.dim != 1 or nu.dim != 1:
        raise DimensionError("monotone coupling needs one-dimensional supports")
    if p < 1:
        raise ValidationError("monotone coupling is optimal only for p >= 1")
    ix = np.argsort(mu.points[:, 0], kind="stable")
    iy = np.argsort(nu.points[:, 0], kind="stable")
    x, wx = mu.points[ix, 0], mu.weights[ix]
    y, wy = nu.points[iy, 0], nu.weights[iy]
    cx = np.cumsum(wx)
    cy = np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    # merge the two cumulative grids; each segment pairs one x with one y
    levels = np.union1d(cx, cy)
    lower = np.concatenate(([0.0], levels[:-1]))
    seg = levels - lower
    keep = seg > 0
    levels, seg = levels[keep], seg[keep]
    kx = np.minimum(np.searchsorted(cx, levels, side="left"), len(x) - 1)
    ky = np.minimum(np.searchsorted(cy, levels, side="left"), len(y) - 1)
    return float(np.dot(seg, np.abs(x[kx] - y[ky]) ** p))


def brute_force_assignment(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec) -> float:
    """Minimum over all permutations; uniform weights, ``n = m <= 8``."""
    n = mu.size
    if nu.size != n:
        raise ValidationError("brute-force assignment needs n = m")
    if n > 8:
        raise TooLarge(f"n = {n} > 8 permutations are not enumerated")
    if not (np.allclose(mu.weights, 1.0 / n, atol=1e-12) and np.allclose(nu.weights, 1.0 / n, atol=1e-12)):
        raise ValidationError("brute-force assignment needs uniform weights")
    C = cost_matrix(cost, mu.points, nu.points)
    best = math.inf
    idx = np.arange(n)
    for perm in itertools.permutations(range(n)):
        best = min(best, float(C[idx, list(perm)].sum()))
    return best / n


def assignment_value(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec, C=None) -> float:
    """Exact value for uniform weights and ``n = m`` via linear assignment."""
    from scipy.optimize import linear_sum_assignment

    n = mu.size
    if nu.size != n:
        raise ValidationError("assignment needs n = m")
    if C is None:
        C = cost_matrix(cost, mu.points, nu.points)
    r, c = linear_sum_assignment(C)
    return float(C[r, c].sum() / n)


def normalize_duals(duals: DualPotentials, plan: TransportPlan, mu: DiscreteMeasure,
                    nu: DiscreteMeasure, cost: CostSpec, p_hat: float = 1.0) -> DualPotentials:
    """Shift ``(f + t, g - t)`` so that ``g`` vanishes at a pinning pair.

    The pinning pair ``(x_i0, y_j0)`` is the plan entry minimizing
    ``c_X(x)**p_hat + c_Y(y)**p_hat`` (first such entry in plan order).
    """
    cx = marginal_costs(cost, "X", mu.points)[plan.rows] ** p_hat
    cy = marginal_costs(cost, "Y", nu.points)[plan.cols] ** p_hat
    k = int(np.argmin(cx + cy))
    t = duals.g[plan.cols[k]]
    return DualPotentials(duals.f + t, duals.g - t)

