"""Layered decompositions of transport plans and composition bounds.

A plan is split along dyadic bands of the (shifted) marginal cost sum
``c_X(x) + c_Y(y)``; band ``l`` collects the entries with
``2**l <= c_X + c_Y < 2**(l+1)`` and carries radius ``c_l = 2**(l+1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    EnvelopeViolation,
    LayerMismatch,
    MassMismatch,
    OffsetTooSmall,
    ValidationError,
)
from .exact_ot import TransportPlan, plan_from_dense, solve_discrete
from .measures import (
    CostSpec,
    DiscreteMeasure,
    SeedLike,
    _as_rng,
    cost_matrix,
    euclidean_power,
    make_discrete,
    marginal_costs,
    merge_duplicates,
    mixture,
)

TRUNCATION_MASS = 1e-15


@dataclass(frozen=True)
class Layer:
    """One dyadic band of a plan.

    ``rows``, ``cols`` index the parent supports; ``masses`` is the
    conditional sub-plan (sums to one).
    """

    index: int
    mass: float
    radius: float
    rows: np.ndarray
    cols: np.ndarray
    masses: np.ndarray

    def marginal_weights(self, side: str, size: int) -> np.ndarray:
        idx = self.rows if side.upper() == "X" else self.cols
        return np.bincount(idx, weights=self.masses, minlength=size)


@dataclass(frozen=True)
class LayerDecomposition:
    layers: Tuple[Layer, ...]
    offset: float
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    shape: Tuple[int, int]

    @property
    def masses(self) -> np.ndarray:
        return np.array([layer.mass for layer in self.layers])

    @property
    def radii(self) -> np.ndarray:
        return np.array([layer.radius for layer in self.layers])

    @property
    def indices(self) -> List[int]:
        return [layer.index for layer in self.layers]

    def reconstruct(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for layer in self.layers:
            np.add.at(out, (layer.rows, layer.cols), layer.mass * layer.masses)
        return out

    def component(self, k: int, side: str) -> Tuple[DiscreteMeasure, np.ndarray]:
        """Marginal ``mu_l`` (side X) or ``nu_l`` (side Y) of layer ``k``.

        Returns the measure on its positive-weight atoms and the parent
        indices of those atoms.
        """
        base = self.mu if side.upper() == "X" else self.nu
        w = self.layers[k].marginal_weights(side, base.size)
        atoms = np.nonzero(w > 0)[0]
        return make_discrete(base.points[atoms], w[atoms]), atoms

    def sub_plan(self, k: int, cost: Optional[CostSpec] = None) -> Tuple[TransportPlan, DiscreteMeasure, DiscreteMeasure]:
        """Layer ``k``'s conditional plan in the local indexing of its marginals.

        The plan's ``value`` is NaN unless ``cost`` is given.
        """
        layer = self.layers[k]
        mu_l, atoms_x = self.component(k, "X")
        nu_l, atoms_y = self.component(k, "Y")
        rows = np.searchsorted(atoms_x, layer.rows)
        cols = np.searchsorted(atoms_y, layer.cols)
        value = math.nan
        if cost is not None:
            C = cost_matrix(cost, mu_l.points, nu_l.points)
            value = float(np.dot(layer.masses, C[rows, cols]))
        plan = TransportPlan(rows, cols, layer.masses.copy(), value, (mu_l.size, nu_l.size))
        return plan, mu_l, nu_l


def default_offset(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec) -> float:
    """Smallest shift making every support marginal cost at least one."""
    cx = marginal_costs(cost, "X", mu.points)
    cy = marginal_costs(cost, "Y", nu.points)
    return max(0.0, 1.0 - float(min(cx.min(), cy.min())))


def dyadic_index(values) -> np.ndarray:
    """``floor(log2(v))`` computed exactly from the binary exponent."""
    _, exp = np.frexp(np.asarray(values, dtype=float))
    return exp.astype(np.int64) - 1


def layer_decompose(plan: TransportPlan, mu: DiscreteMeasure, nu: DiscreteMeasure,
                    cost: CostSpec, offset: Optional[float] = None) -> LayerDecomposition:
    if plan.shape != (mu.size, nu.size):
        raise ValidationError("plan shape does not match the measures")
    if offset is None:
        offset = default_offset(mu, nu, cost)
    cx = marginal_costs(cost, "X", mu.points) + offset
    cy = marginal_costs(cost, "Y", nu.points) + offset
    pair = cx[plan.rows] + cy[plan.cols]
    if np.any(pair < 1.0):
        raise OffsetTooSmall(f"shifted marginal sum {pair.min()!r} < 1 with offset {offset}")
    level = dyadic_index(pair)
    present = np.unique(level)
    totals = {int(l): float(plan.masses[level == l].sum()) for l in present}
    kept = [l for l in sorted(totals) if totals[l] >= TRUNCATION_MASS]
    if not kept:
        raise ValidationError("plan carries no mass")
    for l in sorted(totals):
        if l in kept:
            continue
        higher = [k for k in kept if k > l]
        target = min(higher) if higher else max(k for k in kept if k < l)
        level[level == l] = target
    layers = []
    for l in kept:
        sel = level == l
        rows = plan.rows[sel]
        cols = plan.cols[sel]
        masses = plan.masses[sel]
        a = float(masses.sum())
        layers.append(Layer(l, a, float(2.0 ** (l + 1)), rows, cols, masses / a))
    return LayerDecomposition(tuple(layers), float(offset), mu, nu, plan.shape)


# ---------------------------------------------------------------------------
# Envelope sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeSequence:
    """Non-increasing positive sequence ``b`` dominating layer masses."""

    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.size == 0 or np.any(b <= 0):
            raise EnvelopeViolation("envelope entries must be positive")
        if np.any(np.diff(b) > 0):
            raise EnvelopeViolation("envelope must be non-increasing")
        object.__setattr__(self, "b", b)

    def check_dominates(self, a) -> None:
        a = np.asarray(a, dtype=float)
        if a.shape != self.b.shape:
            raise EnvelopeViolation("envelope and masses differ in length")
        if np.any(self.b < a):
            k = int(np.argmax(self.b < a))
            raise EnvelopeViolation(f"b[{k}] = {self.b[k]} < a[{k}] = {a[k]}")

    def rho(self, n: int) -> float:
        """Smallest ``rho >= 1`` admitting a pivot for sample size ``n``.

        Splitting the sequence before position ``k``, the head needs
        ``b[k-1] >= 1/(rho n)`` and the tail ``b[k] <= rho/n``; an empty part
        imposes nothing. Beyond the listed entries the sequence is taken to
        continue with arbitrarily small positive values.
        """
        b = self.b
        best = math.inf
        for k in range(b.size + 1):
            need = 1.0
            if k > 0:
                need = max(need, 1.0 / (n * b[k - 1]))
            if k < b.size:
                need = max(need, n * b[k])
            best = min(best, need)
        return best


def canonical_envelope(K: float, exponent: float, levels: Sequence[int]) -> np.ndarray:
    """``b_l = K * 2**(-l * exponent)`` at the given layer indices."""
    return K * 2.0 ** (-np.asarray(levels, dtype=float) * exponent)


def canonical_pivot(K: float, exponent: float, n: int) -> int:
    """``l_n = ceil(log2(K n) / exponent)``."""
    return int(math.ceil(math.log2(K * n) / exponent))


def envelope_constant(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec,
                      exponent: float, offset: float = 0.0) -> float:
    """``K = 4**e * (int c_X**e dmu + int c_Y**e dnu)`` with shifted marginals."""
    cx = marginal_costs(cost, "X", mu.points) + offset
    cy = marginal_costs(cost, "Y", nu.points) + offset
    mx = float(np.dot(mu.weights, cx ** exponent))
    my = float(np.dot(nu.weights, cy ** exponent))
    return 4.0 ** exponent * (mx + my)


# ---------------------------------------------------------------------------
# Composition bound
# ---------------------------------------------------------------------------

def composition_bound(a, b, sub_values, radii) -> float:
    """``sum min(a_l, b_l) T_l + 4 sum |a_l - b_l| c_l``."""
    a, b, T, c = (np.asarray(v, dtype=float) for v in (a, b, sub_values, radii))
    if not (a.shape == b.shape == T.shape == c.shape):
        raise ValidationError("composition bound inputs differ in length")
    if np.any(c <= 0):
        raise ValidationError("radii must be positive")
    return float(np.dot(np.minimum(a, b), T) + 4.0 * np.dot(np.abs(a - b), c))


def composition_plan(a, mus: Sequence[DiscreteMeasure], b, nus: Sequence[DiscreteMeasure],
                     cost: CostSpec, sub_plans: Optional[Sequence[Optional[TransportPlan]]] = None,
                     ) -> Tuple[TransportPlan, DiscreteMeasure, DiscreteMeasure]:
    """Feasible plan between ``sum a_l mu_l`` and ``sum b_l nu_l``.

    Matched mass ``min(a_l, b_l)`` follows the sub-plans; the residual
    marginals are coupled by a normalized product. Missing sub-plans are
    solved exactly. Returns the plan and the two mixture measures (atoms
    concatenated component by component).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = len(mus)
    if a.shape != (L,) or b.shape != (L,) or len(nus) != L:
        raise ValidationError("one mass and one measure per component on each side")
    if np.any(a < 0) or np.any(b < 0):
        raise ValidationError("component masses must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-10:
        raise MassMismatch(f"sum a = {a.sum()!r} but sum b = {b.sum()!r}")
    mu = mixture(a, mus)
    nu = mixture(b, nus)
    off_x = np.concatenate(([0], np.cumsum([m.size for m in mus])))
    off_y = np.concatenate(([0], np.cumsum([m.size for m in nus])))
    pi = np.zeros((mu.size, nu.size))
    for l in range(L):
        w = min(a[l], b[l])
        if w <= 0:
            continue
        sp = None if sub_plans is None else sub_plans[l]
        if sp is None:
            sp = solve_discrete(mus[l], nus[l], cost)[0]
        np.add.at(pi, (off_x[l] + sp.rows, off_y[l] + sp.cols), w * sp.masses)
    gap = np.abs(a - b).sum()
    if gap > 0:
        rx = np.concatenate([max(a[l] - b[l], 0.0) * mus[l].weights for l in range(L)])
        ry = np.concatenate([max(b[l] - a[l], 0.0) * nus[l].weights for l in range(L)])
        pi += (2.0 / gap) * np.outer(rx, ry)
    C = cost_matrix(cost, mu.points, nu.points)
    return plan_from_dense(pi, C), mu, nu


# ---------------------------------------------------------------------------
# Two-stage sampling and the empirical composite bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoStageSample:
    layer_indices: Tuple[int, ...]
    counts: np.ndarray
    layer_points: Tuple[Optional[np.ndarray], ...]
    pooled: DiscreteMeasure

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def layer_measure(self, k: int) -> Optional[DiscreteMeasure]:
        pts = self.layer_points[k]
        return None if pts is None else make_discrete(pts)


def two_stage_sample(decomp: LayerDecomposition, side: str, n: int, seed: SeedLike) -> TwoStageSample:
    """``N ~ Mult(n, a)``, then ``N_l`` i.i.d. draws from each layer marginal."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = _as_rng(seed)
    a = decomp.masses
    counts = rng.multinomial(n, a / a.sum())
    pieces = []
    for k, N in enumerate(counts):
        if N == 0:
            pieces.append(None)
            continue
        comp, _ = decomp.component(k, side)
        cum = np.cumsum(comp.weights)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(int(N)), side="right")
        pieces.append(comp.points[idx])
    pooled = make_discrete(np.vstack([p for p in pieces if p is not None]))
    return TwoStageSample(tuple(decomp.indices), counts, tuple(pieces), pooled)


def empirical_composite_bound(counts_mu, counts_nu, sub_values, radii,
                              layers_mu: Optional[Sequence[int]] = None,
                              layers_nu: Optional[Sequence[int]] = None) -> float:
    """Composition bound with empirical layer frequencies.

    ``sub_values[l]`` is the empirical sub-problem cost; it is ignored (taken
    as zero) whenever ``N_l M_l = 0``.
    """
    N = np.asarray(counts_mu, dtype=float)
    M = np.asarray(counts_nu, dtype=float)
    if layers_mu is not None and layers_nu is not None and list(layers_mu) != list(layers_nu):
        raise LayerMismatch(f"layers {list(layers_mu)} vs {list(layers_nu)}")
    T = np.asarray(sub_values, dtype=float)
    c = np.asarray(radii, dtype=float)
    if not (N.shape == M.shape == T.shape == c.shape):
        raise LayerMismatch("counts, sub-values and radii differ in length")
    fx = N / N.sum()
    fy = M / M.sum()
    T = np.where((N > 0) & (M > 0), T, 0.0)
    return float(np.dot(np.minimum(fx, fy), T) + 4.0 * np.dot(c, np.abs(fx - fy)))


def composite_bound_from_samples(decomp: LayerDecomposition, s_mu: TwoStageSample,
                                 s_nu: TwoStageSample, cost: CostSpec) -> Tuple[float, np.ndarray]:
    """Solve the per-layer empirical problems and evaluate the bound."""
    if s_mu.layer_indices != s_nu.layer_indices or list(s_mu.layer_indices) != decomp.indices:
        raise LayerMismatch("samples were drawn from different layerings")
    values = np.zeros(len(decomp.layers))
    for k in range(len(decomp.layers)):
        mk, nk = s_mu.layer_measure(k), s_nu.layer_measure(k)
        if mk is None or nk is None:
            continue
        values[k] = solve_discrete(merge_duplicates(mk), merge_duplicates(nk), cost)[0].value
    bound = empirical_composite_bound(s_mu.counts, s_nu.counts, values, decomp.radii,
                                      s_mu.layer_indices, s_nu.layer_indices)
    return bound, values


def ipm_composition_check(decomp: LayerDecomposition, sample: TwoStageSample,
                          cost: Optional[CostSpec] = None) -> Tuple[float, float]:
    """Both sides of the composition inequality for the 1-Lipschitz class.

    With the class pinned at the atom ``x0`` of smallest marginal cost, the
    layer radius is the largest distance from ``x0`` on the layer support and
    the class distance is the 1-Wasserstein distance.
    """
    mu = decomp.mu
    w1 = euclidean_power(1.0)
    pin_cost = cost if cost is not None else w1
    x0 = mu.points[int(np.argmin(marginal_costs(pin_cost, "X", mu.points)))]
    lhs = solve_discrete(mu, merge_duplicates(sample.pooled), w1)[0].value
    n = sample.n
    rhs = 0.0
    for k, layer in enumerate(decomp.layers):
        comp, _ = decomp.component(k, "X")
        c_l = float(np.linalg.norm(comp.points - x0, axis=1).max())
        N = int(sample.counts[k])
        if N > 0:
            emp = merge_duplicates(sample.layer_measure(k))
            rhs += layer.mass * solve_discrete(comp, emp, w1)[0].value
        rhs += c_l * abs(layer.mass - N / n)
    return lhs, rhs


def layer_moment_check(decomp: LayerDecomposition, cost: CostSpec, exponent: float) -> Tuple[np.ndarray, np.ndarray]:
    """Layer masses ``a_l`` next to the canonical envelope ``K 2**(-l e)``."""
    K = envelope_constant(decomp.mu, decomp.nu, cost, exponent, decomp.offset)
    return decomp.masses, canonical_envelope(K, exponent, decomp.indices)


__all__ = [
    "Layer",
    "LayerDecomposition",
    "EnvelopeSequence",
    "TwoStageSample",
    "canonical_envelope",
    "canonical_pivot",
    "composite_bound_from_samples",
    "composition_bound",
    "composition_plan",
    "default_offset",
    "dyadic_index",
    "empirical_composite_bound",
    "envelope_constant",
    "ipm_composition_check",
    "layer_decompose",
    "layer_moment_check",
    "two_stage_sample",
]
