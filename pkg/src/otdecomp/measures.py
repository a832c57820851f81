"""Discrete measures, reference distributions, samplers and costs."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    InvalidWeights,
    Unsupported,
    ValidationError,
)

WEIGHT_ACCEPT_TOL = 1e-9
WEIGHT_TOL = 1e-12

SeedLike = Union[int, np.random.Generator]


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def experiment_id(name: str) -> int:
    """Stable 32-bit id for an experiment name (used in seed derivation)."""
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the stream ``(seed, *keys)``.

    Streams for different key tuples are independent, so replications can be
    evaluated in any order or on any number of workers.
    """
    if seed < 0 or seed >= 2**64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def _as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(int(seed))


# ---------------------------------------------------------------------------
# Discrete measures
# ---------------------------------------------------------------------------

def _as_points(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
    else:
        rows = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
        if not rows:
            raise ValidationError("points list must be non-empty")
        dims = {r.shape for r in rows}
        if len(dims) != 1 or rows[0].ndim != 1:
            raise DimensionMismatch(f"heterogeneous point dimensions: {sorted(dims)}")
        arr = np.vstack(rows)
    if arr.ndim != 2:
        raise DimensionMismatch("points must form an (n, d) array")
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported probability measure.

    ``points`` has shape ``(n, d)``; ``weights`` has shape ``(n,)`` and sums
    to one. Both arrays are read-only.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] == 0:
            raise ValidationError("measure needs at least one atom")
        if pts.shape[0] != w.shape[0]:
            raise DimensionMismatch(
                f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point coordinates must be finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidWeights("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidWeights(f"weights sum to {w.sum()!r}, expected 1")
        pts = pts.copy()
        w = w.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"DiscreteMeasure(size={self.size}, dim={self.dim})"


def make_discrete(points, weights: Optional[Sequence[float]] = None) -> DiscreteMeasure:
    """Build a measure, renormalizing weights that sum to 1 within 1e-9.

    ``weights=None`` gives uniform weights.
    """
    pts = _as_points(points)
    if weights is None:
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise DimensionMismatch(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidWeights("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_ACCEPT_TOL:
            raise InvalidWeights(f"weights sum to {total!r}, outside 1 +/- {WEIGHT_ACCEPT_TOL}")
        w = w / total
    return DiscreteMeasure(pts, w)


def empirical(points) -> DiscreteMeasure:
    return make_discrete(points, None)


def merge_duplicates(measure: DiscreteMeasure) -> DiscreteMeasure:
    """Collapse identical atoms, summing their weights (exact, order-stable)."""
    uniq, inverse = np.unique(measure.points, axis=0, return_inverse=True)
    w = np.zeros(uniq.shape[0])
    np.add.at(w, inverse.reshape(-1), measure.weights)
    return DiscreteMeasure(uniq, w / w.sum())


def mixture(masses: Sequence[float], components: Sequence[DiscreteMeasure]) -> DiscreteMeasure:
    """Concatenate ``sum_l masses[l] * components[l]`` without merging atoms.

    Atom ``k`` of component ``l`` lands at index ``offset_l + k``; components
    with zero mass keep their atoms (with weight zero) so indices stay stable.
    """
    if len(masses) != len(components):
        raise DimensionMismatch("one mass per component required")
    dims = {c.dim for c in components}
    if len(dims) != 1:
        raise DimensionMismatch("components live in different dimensions")
    pts = np.vstack([c.points for c in components])
    w = np.concatenate([a * c.weights for a, c in zip(masses, components)])
    return make_discrete(pts, w)


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

_COST_KINDS = ("euclidean_power", "absolute_power_1d", "custom_table")


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Ground cost ``c`` with dominating marginal costs ``c_X``, ``c_Y``.

    For the power costs the marginals are ``2**p * |x|**p`` (plus the
    optional offsets). For ``custom_table`` the points of a measure are row
    or column indices into ``table``.
    """

    kind: str
    p: float = 1.0
    table: Optional[np.ndarray] = None
    marginal_x: Optional[np.ndarray] = None
    marginal_y: Optional[np.ndarray] = None
    offset_x: float = 0.0
    offset_y: float = 0.0

    def __post_init__(self):
        if self.kind not in _COST_KINDS:
            raise ValidationError(f"unknown cost kind {self.kind!r}")
        if self.kind != "custom_table" and not self.p > 0:
            raise ValidationError("power costs need p > 0")
        if self.offset_x < 0 or self.offset_y < 0:
            raise ValidationError("marginal offsets must be nonnegative")
        if self.kind == "custom_table":
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 2 or np.any(t < 0) or not np.all(np.isfinite(t)):
                raise ValidationError("custom table must be a finite nonnegative matrix")
            t = t.copy()
            t.setflags(write=False)
            object.__setattr__(self, "table", t)

    def __repr__(self) -> str:
        if self.kind == "custom_table":
            return f"CostSpec(custom_table{self.table.shape})"
        return f"CostSpec({self.kind}, p={self.p})"


def euclidean_power(p: float, offset: float = 0.0) -> CostSpec:
    return CostSpec("euclidean_power", p=float(p), offset_x=offset, offset_y=offset)


def absolute_power_1d(p: float, offset: float = 0.0) -> CostSpec:
    return CostSpec("absolute_power_1d", p=float(p), offset_x=offset, offset_y=offset)


def custom_table(matrix, marginals="rowcol") -> CostSpec:
    """Table cost. ``marginals`` is ``"rowcol"`` (row-max / column-max),
    a pair of arrays, or ``None`` (no marginals available)."""
    t = np.asarray(matrix, dtype=float)
    if marginals is None:
        mx = my = None
    elif isinstance(marginals, str):
        if marginals != "rowcol":
            raise ValidationError(f"unknown marginal rule {marginals!r}")
        mx, my = t.max(axis=1), t.max(axis=0)
    else:
        mx, my = (np.asarray(m, dtype=float) for m in marginals)
        if mx.shape != (t.shape[0],) or my.shape != (t.shape[1],):
            raise DimensionMismatch("explicit marginals must match table shape")
    return CostSpec("custom_table", p=1.0, table=t, marginal_x=mx, marginal_y=my)


def _table_index(value, size: int) -> int:
    v = float(np.asarray(value, dtype=float).reshape(-1)[0])
    i = int(round(v))
    if i != v or i < 0 or i >= size:
        raise IndexOutOfRange(f"table index {v} outside [0, {size})")
    return i


def _table_indices(points: np.ndarray, size: int) -> np.ndarray:
    v = np.asarray(points, dtype=float).reshape(-1)
    idx = np.rint(v).astype(np.int64)
    if np.any(idx != v) or np.any(idx < 0) or np.any(idx >= size):
        raise IndexOutOfRange(f"table indices outside [0, {size})")
    return idx


def _check_dims(cost: CostSpec, dx: int, dy: int) -> None:
    if cost.kind == "absolute_power_1d" and (dx != 1 or dy != 1):
        raise DimensionMismatch("absolute_power_1d needs one-dimensional points")
    if cost.kind == "euclidean_power" and dx != dy:
        raise DimensionMismatch(f"dimension mismatch {dx} vs {dy}")


def eval_cost(cost: CostSpec, x, y) -> float:
    """``c(x, y)`` for single points."""
    if cost.kind == "custom_table":
        return float(cost.table[_table_index(x, cost.table.shape[0]),
                                _table_index(y, cost.table.shape[1])])
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    ya = np.atleast_1d(np.asarray(y, dtype=float))
    _check_dims(cost, xa.size, ya.size)
    return float(np.linalg.norm(xa - ya) ** cost.p)


def cost_matrix(cost: CostSpec, X, Y) -> np.ndarray:
    """Pairwise cost matrix between point arrays (or measures)."""
    if isinstance(X, DiscreteMeasure):
        X = X.points
    if isinstance(Y, DiscreteMeasure):
        Y = Y.points
    X = _as_points(X)
    Y = _as_points(Y)
    if cost.kind == "custom_table":
        i = _table_indices(X, cost.table.shape[0])
        j = _table_indices(Y, cost.table.shape[1])
        return cost.table[np.ix_(i, j)]
    _check_dims(cost, X.shape[1], Y.shape[1])
    if X.shape[1] == 1:
        dist = np.abs(X[:, 0][:, None] - Y[:, 0][None, :])
    else:
        from scipy.spatial.distance import cdist

        dist = cdist(X, Y)
    if cost.p == 1.0:
        return dist
    if cost.p == 2.0:
        return dist * dist
    return dist ** cost.p


def _side(side: str) -> str:
    s = str(side).upper()
    if s not in ("X", "Y"):
        raise ValidationError(f"side must be 'X' or 'Y', got {side!r}")
    return s


def marginal_costs(cost: CostSpec, side: str, points) -> np.ndarray:
    """Vectorized ``c_X`` or ``c_Y`` over an array of points."""
    s = _side(side)
    if isinstance(points, DiscreteMeasure):
        points = points.points
    pts = _as_points(points)
    if cost.kind == "custom_table":
        table_marg = cost.marginal_x if s == "X" else cost.marginal_y
        if table_marg is None:
            raise Unsupported("custom_table cost has no marginal costs configured")
        size = cost.table.shape[0] if s == "X" else cost.table.shape[1]
        return table_marg[_table_indices(pts, size)]
    if cost.kind == "absolute_power_1d" and pts.shape[1] != 1:
        raise DimensionMismatch("absolute_power_1d needs one-dimensional points")
    offset = cost.offset_x if s == "X" else cost.offset_y
    norms = np.linalg.norm(pts, axis=1)
    return (2.0 ** cost.p) * norms ** cost.p + offset


def marginal_cost(cost: CostSpec, side: str, x) -> float:
    if cost.kind == "custom_table":
        return float(marginal_costs(cost, side, [[float(np.asarray(x).reshape(-1)[0])]])[0])
    return float(marginal_costs(cost, side, [np.atleast_1d(np.asarray(x, dtype=float))])[0])


def moment(measure: DiscreteMeasure, cost: CostSpec, side: str, order: float) -> float:
    """``sum_i w_i * c_side(x_i) ** order``."""
    if not order > 0:
        raise ValidationError("moment order must be positive")
    m = marginal_costs(cost, side, measure.points)
    return float(np.dot(measure.weights, m ** order))


# ---------------------------------------------------------------------------
# Reference distributions
# ---------------------------------------------------------------------------

_DIST_KINDS = {
    "uniform_cube": ("d",),
    "uniform_two_point": ("x0", "x1"),
    "point_mass": ("y",),
    "pareto_radial": ("q", "d"),
    "pareto_1d": ("q",),
    "appendix_c_mu": ("alpha",),
    "appendix_c_nu": ("beta",),
}


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _DIST_KINDS:
            raise ValidationError(f"unknown distribution kind {self.kind!r}")
        missing = [k for k in _DIST_KINDS[self.kind] if k not in self.params]
        if missing:
            raise ValidationError(f"{self.kind} needs parameters {missing}")
        p = self.params
        for key in ("q", "alpha", "beta"):
            if key in p and not float(p[key]) > 0:
                raise ValidationError(f"{key} must be positive")
        if "d" in p and (int(p["d"]) != p["d"] or int(p["d"]) < 1):
            raise ValidationError("d must be an integer >= 1")

    @property
    def dim(self) -> int:
        p = self.params
        if "d" in p:
            return int(p["d"])
        if self.kind == "uniform_two_point":
            return np.atleast_1d(np.asarray(p["x0"], dtype=float)).size
        if self.kind == "point_mass":
            return np.atleast_1d(np.asarray(p["y"], dtype=float)).size
        return 1

    def __hash__(self):
        return hash((self.kind, tuple(sorted((k, repr(v)) for k, v in self.params.items()))))


def uniform_cube(d: int) -> DistributionSpec:
    return DistributionSpec("uniform_cube", {"d": int(d)})


def uniform_two_point(x0, x1) -> DistributionSpec:
    return DistributionSpec("uniform_two_point", {"x0": x0, "x1": x1})


def point_mass(y) -> DistributionSpec:
    return DistributionSpec("point_mass", {"y": y})


def pareto_radial(q: float, d: int) -> DistributionSpec:
    return DistributionSpec("pareto_radial", {"q": float(q), "d": int(d)})


def pareto_1d(q: float) -> DistributionSpec:
    return DistributionSpec("pareto_1d", {"q": float(q)})


def appendix_c_mu(alpha: float) -> DistributionSpec:
    return DistributionSpec("appendix_c_mu", {"alpha": float(alpha)})


def appendix_c_nu(beta: float) -> DistributionSpec:
    return DistributionSpec("appendix_c_nu", {"beta": float(beta)})


def draw_points(dist: DistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Raw ``(n, d)`` sample array; the fast path behind :func:`sample`."""
    if n < 1:
        raise ValidationError("sample size must be >= 1")
    k, p = dist.kind, dist.params
    if k == "uniform_cube":
        return rng.random((n, int(p["d"])))
    if k == "point_mass":
        y = np.atleast_1d(np.asarray(p["y"], dtype=float))
        return np.tile(y, (n, 1))
    if k == "uniform_two_point":
        x0 = np.atleast_1d(np.asarray(p["x0"], dtype=float))
        x1 = np.atleast_1d(np.asarray(p["x1"], dtype=float))
        if x0.shape != x1.shape:
            raise DimensionMismatch("two-point support in different dimensions")
        pick = rng.random(n) < 0.5
        return np.where(pick[:, None], x1[None, :], x0[None, :])
    # 1 - U lies in (0, 1], keeping the inverse cdfs finite
    u = 1.0 - rng.random(n)
    if k == "pareto_1d":
        return (u ** (-1.0 / float(p["q"])))[:, None]
    if k == "appendix_c_mu":
        # t = 1 - (1 - U')^(1/alpha) with U' = 1 - u
        return (1.0 - u ** (1.0 / float(p["alpha"])))[:, None]
    if k == "appendix_c_nu":
        return (u ** (-1.0 / float(p["beta"])))[:, None]
    if k == "pareto_radial":
        d = int(p["d"])
        radius = u ** (-1.0 / float(p["q"]))
        g = rng.standard_normal((n, d))
        norms = np.linalg.norm(g, axis=1)
        # a zero normal vector has probability zero; guard anyway
        norms[norms == 0] = 1.0
        return (g / norms[:, None]) * radius[:, None]
    raise ValidationError(f"no sampler for {k!r}")


def sample(dist: DistributionSpec, n: int, seed: SeedLike) -> DiscreteMeasure:
    """Empirical measure of ``n`` i.i.d. draws, uniform weights ``1/n``."""
    return empirical(draw_points(dist, int(n), _as_rng(seed)))


def cdf(dist: DistributionSpec, t):
    """Distribution function for the one-dimensional continuous kinds."""
    t = np.asarray(t, dtype=float)
    k, p = dist.kind, dist.params
    if k == "pareto_1d":
        return np.where(t >= 1.0, 1.0 - np.maximum(t, 1.0) ** (-float(p["q"])), 0.0)
    if k == "appendix_c_mu":
        tt = np.clip(t, 0.0, 1.0)
        return np.where(t >= 0.0, 1.0 - (1.0 - tt) ** float(p["alpha"]), 0.0)
    if k == "appendix_c_nu":
        return np.where(t >= 0.0, 1.0 - np.maximum(t, 1.0) ** (-float(p["beta"])), 0.0)
    raise Unsupported(f"no closed-form cdf for {k!r}")


def quantile(dist: DistributionSpec, u):
    """Inverse distribution function on (0, 1) for the 1-D continuous kinds."""
    u = np.asarray(u, dtype=float)
    k, p = dist.kind, dist.params
    if k == "pareto_1d":
        return (1.0 - u) ** (-1.0 / float(p["q"]))
    if k == "appendix_c_mu":
        return 1.0 - (1.0 - u) ** (1.0 / float(p["alpha"]))
    if k == "appendix_c_nu":
        return (1.0 - u) ** (-1.0 / float(p["beta"]))
    raise Unsupported(f"no closed-form quantile for {k!r}")


def population(dist: DistributionSpec) -> Optional[DiscreteMeasure]:
    """The law itself as a :class:`DiscreteMeasure`, for finitely supported kinds."""
    if dist.kind == "point_mass":
        return make_discrete([np.atleast_1d(np.asarray(dist.params["y"], dtype=float))], [1.0])
    if dist.kind == "uniform_two_point":
        x0 = np.atleast_1d(np.asarray(dist.params["x0"], dtype=float))
        x1 = np.atleast_1d(np.asarray(dist.params["x1"], dtype=float))
        if np.array_equal(x0, x1):
            return make_discrete([x0], [1.0])
        return make_discrete([x0, x1], [0.5, 0.5])
    return None


def pareto_mean(q: float) -> float:
    """Mean ``q/(q-1)`` of the Pareto law with cdf ``1 - t**-q`` on ``[1, inf)``."""
    if q <= 1:
        return math.inf
    return q / (q - 1.0)
