"""Dual-potential diagnostics: variance and moment bounds, the scaling check
for rescaled test functions, and a non-integrable-potential example."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .errors import CriterionNotMet, DomainError, HypothesisViolated, QuadratureFailure, ValidationError
from .exact_ot import DualPotentials
from .measures import CostSpec, DiscreteMeasure, SeedLike, _as_rng, moment

QUAD_RTOL = 1e-8
GROWTH_FIT_RANGE = (1e-6, 1e-2)


def _weighted_var(values, weights) -> float:
    values = np.asarray(values, dtype=float)
    mean = float(np.dot(weights, values))
    return float(np.dot(weights, (values - mean) ** 2))


def dual_variance_bound(duals: DualPotentials, mu: DiscreteMeasure, nu: DiscreteMeasure, n: int) -> float:
    """``n**-1/2 * sqrt(Var_mu f + Var_nu g)``."""
    if len(duals.f) != mu.size or len(duals.g) != nu.size:
        raise ValidationError("duals must be defined on the full supports")
    if n < 1:
        raise ValidationError("n must be >= 1")
    var = _weighted_var(duals.f, mu.weights) + _weighted_var(duals.g, nu.weights)
    return math.sqrt(max(var, 0.0) / n)


def dual_moment_check(duals: DualPotentials, mu: DiscreteMeasure, nu: DiscreteMeasure,
                      cost: CostSpec, p: float):
    """``(lhs, rhs)`` with ``lhs = int |f|^p dmu + int |g|^p dnu`` and
    ``rhs = 4 * 8**p * (int c_X^p dmu + int c_Y^p dnu)``.

    The duals are expected to be shift-normalized with exponent ``p``.
    """
    if not p > 0:
        raise ValidationError("p must be positive")
    f = np.abs(np.asarray(duals.f, dtype=float))
    g = np.abs(np.asarray(duals.g, dtype=float))
    lhs = float(np.dot(mu.weights, f ** p) + np.dot(nu.weights, g ** p))
    rhs = 4.0 * 8.0 ** p * (moment(mu, cost, "x", p) + moment(nu, cost, "y", p))
    return lhs, rhs


# --- non-integrable potentials -------------------------------------------------

@dataclass(frozen=True)
class AppendixCInstance:
    """mu with cdf ``1 - (1-t)**alpha`` on (0,1), nu with cdf ``1 - s**-beta`` on
    ``[1, inf)``, cost ``(x - y)**gamma`` for even ``gamma``."""

    alpha: float
    beta: float
    gamma: int
    p: float = 2.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.p > 1):
            raise ValidationError("alpha, beta must be positive and p > 1")
        if int(self.gamma) != self.gamma or self.gamma < 2 or self.gamma % 2:
            raise ValidationError("gamma must be an even integer >= 2")
        if not self.beta > self.gamma:
            raise ValidationError("need beta > gamma for an integrable target cost")
        if math.isclose((self.gamma - 1) * self.alpha, self.beta):
            raise ValidationError("(gamma - 1) * alpha must differ from beta")

    @classmethod
    def preset(cls, p: float) -> "AppendixCInstance":
        if not p > 1:
            raise ValidationError("p must exceed 1")
        gamma = math.ceil((3 * p + 1) / (p - 1) - 1e-12)
        gamma += gamma % 2
        beta = gamma + 1.0
        return cls(alpha=beta / 2.0, beta=beta, gamma=int(gamma), p=p)

    @property
    def ratio(self) -> float:
        return self.alpha / self.beta

    @property
    def growth_exponent(self) -> float:
        """Exponent ``e`` with ``|f(t)| ~ (1-t)**e`` as ``t -> 1``."""
        return -((self.gamma - 1) * self.ratio - 1.0)

    def criterion(self, p: Optional[float] = None):
        p = self.p if p is None else p
        return p + self.alpha, p * (self.gamma - 1) * self.ratio


def appendix_c_transport_map(t, inst: AppendixCInstance):
    """``T(t) = (1-t)**(-alpha/beta)``, the monotone map pushing mu to nu."""
    arr = np.asarray(t, dtype=float)
    if np.any(~(arr > 0)) or np.any(~(arr < 1)):
        raise DomainError("t must lie in (0, 1)")
    out = (1.0 - arr) ** (-inst.ratio)
    return float(out) if out.ndim == 0 else out


def _fprime_s(s: float, inst: AppendixCInstance) -> float:
    # f'(t) dt written in s = -log(1 - t); t - T(t) < 0 and gamma - 1 is odd
    t = -math.expm1(-s)
    return inst.gamma * (t - math.exp(inst.ratio * s)) ** (inst.gamma - 1) * math.exp(-s)


def _quad_checked(fn, a, b, what):
    val, err = integrate.quad(fn, a, b, epsabs=0.0, epsrel=QUAD_RTOL * 1e-2, limit=200)
    if not math.isfinite(val) or err > QUAD_RTOL * max(abs(val), 1e-300):
        raise QuadratureFailure(f"{what}: error estimate {err:.3g} on value {val:.6g}")
    return val


class _Potential:
    """Cumulative evaluation of ``f(t) = int_0^t f'`` with ``f(0) = 0``.

    Values are built by chaining quadratures over unit-length pieces in ``s``,
    so the integrand's growth stays tame on each piece.
    """

    def __init__(self, inst: AppendixCInstance):
        self.inst = inst
        self._anchors = [0.0]

    def _anchor(self, k: int) -> float:
        while len(self._anchors) <= k:
            j = len(self._anchors)
            step = _quad_checked(lambda s: _fprime_s(s, self.inst), j - 1.0, float(j), "potential")
            self._anchors.append(self._anchors[-1] + step)
        return self._anchors[k]

    def at_s(self, s: float) -> float:
        k = int(math.floor(s))
        base = self._anchor(k)
        if s == k:
            return base
        return base + _quad_checked(lambda v: _fprime_s(v, self.inst), float(k), s, "potential")


def appendix_c_potential(t_grid, inst: AppendixCInstance, delta_min: float = 1e-8) -> np.ndarray:
    """The dual potential ``f`` on ``t_grid`` by adaptive quadrature of ``f'``."""
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0) or np.any(t >= 1.0 - delta_min):
        raise DomainError(f"grid must lie in [0, 1 - {delta_min:g})")
    pot = _Potential(inst)
    return np.array([pot.at_s(-math.log1p(-x)) for x in t.ravel()]).reshape(t.shape)


def potential_growth_exponent(inst: AppendixCInstance, points: int = 25,
                              fit_range=GROWTH_FIT_RANGE) -> float:
    """OLS slope of ``log|f(t)|`` on ``log(1-t)`` over ``1-t`` in ``fit_range``."""
    lo, hi = fit_range
    gaps = np.logspace(math.log10(hi), math.log10(lo), points)
    f = appendix_c_potential(1.0 - gaps, inst, delta_min=lo / 10)
    x, y = np.log(gaps), np.log(np.abs(f))
    return float(np.polyfit(x, y, 1)[0])


def appendix_c_divergence_diagnostic(inst: AppendixCInstance, p: Optional[float] = None,
                                     epsilons: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> List[float]:
    """Partial integrals ``int_0^{1-eps} |f|^p dF_mu`` for decreasing ``eps``."""
    p = inst.p if p is None else float(p)
    eps = [float(e) for e in epsilons]
    if any(not 0 < e < 1 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError("epsilons must be strictly decreasing in (0, 1)")
    lhs, rhs = inst.criterion(p)
    if lhs > rhs:
        raise CriterionNotMet(f"p + alpha = {lhs:g} exceeds p (gamma-1) alpha / beta = {rhs:g}")
    pot = _Potential(inst)
    alpha = inst.alpha

    def integrand(s):
        return abs(pot.at_s(s)) ** p * alpha * math.exp(-alpha * s)

    # split at integer s so each outer piece sees a smooth integrand
    out, total, s_prev = [], 0.0, 0.0
    for e in eps:
        s_end = -math.log(e)
        cuts = [s_prev] + [float(k) for k in range(math.floor(s_prev) + 1, math.ceil(s_end))] + [s_end]
        for a, b in zip(cuts, cuts[1:]):
            if b > a:
                total += _quad_checked(integrand, a, b, "divergence integral")
        out.append(total)
        s_prev = s_end
    return out


def appendix_c_pushforward_ks(inst: AppendixCInstance, n: int = 100_000, seed: SeedLike = 0) -> float:
    """KS distance between ``T`` applied to mu-samples and the cdf of nu."""
    u = 1.0 - _as_rng(seed).random(n)
    t = 1.0 - u ** (1.0 / inst.alpha)
    t = t[(t > 0) & (t < 1)]
    mapped = appendix_c_transport_map(t, inst)
    return float(stats.kstest(mapped, lambda s: 1.0 - np.asarray(s) ** (-inst.beta)).statistic)


# --- scaling check ------------------------------------------------------------

@dataclass(frozen=True)
class ScalingCheckSpec:
    p: float
    beta: float
    r: float = 1.0
    d: int = 1
    resolution: int = 41
    order: int = 1
    h1: float = 1e-5
    h2: float = 1e-4
    exclude: float = 1e-3

    def __post_init__(self):
        if not self.p > 0 or self.r < 1 or self.d < 1:
            raise ValidationError("need p > 0, r >= 1, d >= 1")
        if self.order not in (1, 2):
            raise ValidationError("order must be 1 or 2")
        floor = max(1.0, self.p) if self.order == 1 else max(2.0, 2.0 * self.p)
        if not self.beta > floor:
            raise ValidationError(f"beta must exceed {floor:g} for order {self.order}")
        if self.resolution < 3:
            raise ValidationError("resolution must be >= 3")

    @property
    def grad_bound(self) -> float:
        return 2.0 * self.d * self.beta / self.p

    @property
    def second_bound(self) -> float:
        return 5.0 * self.d * self.beta ** 2 / self.p ** 2


class ScalingCheckResult(NamedTuple):
    max_grad: float
    max_second: float
    grad_bound: float
    second_bound: float
    max_value: float

    @property
    def passed(self) -> bool:
        ok = self.max_grad <= self.grad_bound + 1e-3
        if not math.isnan(self.max_second):
            ok = ok and self.max_second <= self.second_bound + 1e-2
        return ok


def _ball_grid(spec: ScalingCheckSpec) -> np.ndarray:
    axis = np.linspace(-1.0, 1.0, spec.resolution)
    pts = np.stack(np.meshgrid(*([axis] * spec.d), indexing="ij"), axis=-1).reshape(-1, spec.d)
    margin = 2.0 * max(spec.h1, spec.h2)
    norms = np.linalg.norm(pts, axis=1)
    return pts[(norms >= spec.exclude) & (norms <= 1.0 - margin)]


def scaled_function(spec: ScalingCheckSpec, f: Callable[[np.ndarray], np.ndarray]):
    """``u -> f(r**(1/p) |u|**(beta/p - 1) u) / r`` (vectorized over rows)."""
    def g(U):
        U = np.atleast_2d(U)
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        scale = np.where(norms > 0, norms ** (spec.beta / spec.p - 1.0), 0.0)
        X = spec.r ** (1.0 / spec.p) * scale * U
        return np.asarray(f(X), dtype=float) / spec.r
    return g


def _check_hypotheses(spec, X, grad, hess):
    norms = np.linalg.norm(X, axis=1)
    tiny = norms > 0
    if grad is not None:
        G = np.abs(np.atleast_2d(grad(X)))
        cap = norms ** (spec.p - 1.0) + spec.r ** (1.0 - 1.0 / spec.p)
        bad = tiny & np.any(G > cap[:, None] * (1 + 1e-9), axis=1)
        if np.any(bad):
            raise HypothesisViolated(f"first-order bound fails at x = {X[bad][0].tolist()}")
    if hess is not None and spec.order == 2:
        H = np.abs(np.asarray(hess(X))).reshape(len(X), -1)
        cap = norms ** (spec.p - 2.0) + spec.r ** (1.0 - 2.0 / spec.p)
        bad = tiny & np.any(H > cap[:, None] * (1 + 1e-9), axis=1)
        if np.any(bad):
            raise HypothesisViolated(f"second-order bound fails at x = {X[bad][0].tolist()}")


def scaled_function_check(spec: ScalingCheckSpec, f: Callable[[np.ndarray], np.ndarray],
                          grad: Optional[Callable] = None, hess: Optional[Callable] = None) -> ScalingCheckResult:
    """Finite-difference derivative sizes of the rescaled function on the unit ball.

    ``f`` maps an ``(N, d)`` array to ``N`` values; ``grad``/``hess`` (optional)
    return the partials of ``f`` and are used to verify the hypotheses on the
    grid before anything is measured. ``max_second`` is NaN for ``order=1``.
    """
    U = _ball_grid(spec)
    g = scaled_function(spec, f)
    if grad is not None or hess is not None:
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        X = spec.r ** (1.0 / spec.p) * norms ** (spec.beta / spec.p - 1.0) * U
        _check_hypotheses(spec, X, grad, hess)
    eye = np.eye(spec.d)
    h = spec.h1
    G = np.stack([(g(U + h * eye[i]) - g(U - h * eye[i])) / (2 * h) for i in range(spec.d)], axis=1)
    max_grad = float(np.max(np.linalg.norm(G, axis=1))) if len(U) else 0.0
    max_second = math.nan
    if spec.order == 2:
        h = spec.h2
        worst = 0.0
        for i in range(spec.d):
            for j in range(i, spec.d):
                ei, ej = h * eye[i], h * eye[j]
                D = (g(U + ei + ej) - g(U + ei - ej) - g(U - ei + ej) + g(U - ei - ej)) / (4 * h * h)
                worst = max(worst, float(np.max(np.abs(D))) if len(U) else 0.0)
        max_second = worst
    max_value = float(np.max(g(U))) if len(U) else 0.0
    return ScalingCheckResult(max_grad, max_second, spec.grad_bound, spec.second_bound, max_value)


def power_norm(p: float):
    """``f(x) = |x|**p / p`` together with its gradient and Hessian."""
    def f(X):
        return np.linalg.norm(X, axis=1) ** p / p

    def grad(X):
        n = np.linalg.norm(X, axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(n > 0, n ** (p - 2.0) * X, 0.0)

    def hess(X):
        n = np.linalg.norm(X, axis=1)[:, None, None]
        d = X.shape[1]
        outer = X[:, :, None] * X[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            H = n ** (p - 2.0) * np.eye(d)[None] + (p - 2.0) * n ** (p - 4.0) * outer
        return np.where(n > 0, H, 0.0)

    return f, grad, hess


__all__ = [
    "AppendixCInstance", "ScalingCheckResult", "ScalingCheckSpec", "appendix_c_divergence_diagnostic",
    "appendix_c_potential", "appendix_c_pushforward_ks", "appendix_c_transport_map",
    "dual_moment_check", "dual_variance_bound", "potential_growth_exponent", "power_norm",
    "scaled_function", "scaled_function_check",
]
