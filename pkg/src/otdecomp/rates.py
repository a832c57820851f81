"""Monte-Carlo convergence-rate experiments and rate predictors."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateFit, NoReference, SizeCapExceeded, ValidationError
from .exact_ot import DEFAULT_SIZE_CAP, ot_value
from .measures import (
    CostSpec,
    DistributionSpec,
    derive_rng,
    draw_points,
    empirical,
    experiment_id,
    make_discrete,
    pareto_1d,
    point_mass,
    population,
)

SETTINGS = ("two_sample_equal", "semi_discrete_point_target", "pareto_tail",
            "one_sample", "two_sample")
REFERENCE_KINDS = ("auto", "analytic", "zero", "large_sample")
LARGE_SAMPLE_FACTOR = 50
_REFERENCE_STREAM = 2**32 - 1


def phi_rate(p: float, d: int, n: int) -> float:
    """Compact-support rate: ``n**-1/2``, ``n**-1/2 log(n+1)`` or ``n**(-p/d)``."""
    if not p > 0 or d < 1 or n < 1:
        raise ValidationError("phi_rate needs p > 0, d >= 1, n >= 1")
    if d < 2 * p:
        return n ** -0.5
    if d == 2 * p:
        return n ** -0.5 * math.log(n + 1)
    return n ** (-p / d)


def predicted_exponent(alpha: float, s: float) -> float:
    """Dominant exponent ``min(alpha, (s-1)/s)`` of the unbounded-rate bound."""
    if not 0 < alpha <= 0.5:
        raise ValidationError("alpha must lie in (0, 1/2]")
    if not 1 < s <= 2:
        raise ValidationError("s must lie in (1, 2]")
    return min(alpha, (s - 1.0) / s)


def fit_loglog_slope(pairs: Sequence[Tuple[float, float]]) -> Tuple[float, float, float]:
    """OLS of ``log(value)`` on ``log(n)``: ``(slope, intercept, stderr)``.

    ``stderr`` is the usual slope standard error (NaN with only two points).
    """
    if len(pairs) < 2:
        raise DegenerateFit("need at least two points")
    n = np.array([p[0] for p in pairs], dtype=float)
    v = np.array([p[1] for p in pairs], dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise DegenerateFit("log-log fit needs positive values")
    x, y = np.log(n), np.log(v)
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0:
        raise DegenerateFit("all n equal")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    if len(pairs) == 2:
        return slope, intercept, math.nan
    resid = y - (intercept + slope * x)
    stderr = math.sqrt(float(np.sum(resid ** 2)) / (len(pairs) - 2) / sxx)
    return slope, intercept, stderr


@dataclass(frozen=True)
class RateExperiment:
    """Configuration of a Monte-Carlo rate study.

    ``setting`` picks the statistic:

    * ``two_sample_equal`` - ``T(mu_n, nu_m)`` with ``mu = nu`` (population value 0);
    * ``semi_discrete_point_target`` / ``pareto_tail`` - ``|T(mu_n, delta_y) - T(mu, delta_y)|``;
    * ``one_sample`` - ``|T(mu_n, nu) - T(mu, nu)|`` for a finitely supported ``nu``;
    * ``two_sample`` - ``|T(mu_n, nu_m) - T(mu, nu)|``.
    """

    name: str
    setting: str
    mu: DistributionSpec
    cost: CostSpec
    n_grid: Tuple[int, ...]
    reps: int
    seed: int = 0
    nu: Optional[DistributionSpec] = None
    m_rule: object = "equal"
    reference: str = "auto"
    reference_value: Optional[float] = None
    n_ref: Optional[int] = None
    size_cap: int = DEFAULT_SIZE_CAP

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.setting not in SETTINGS:
            raise ValidationError(f"unknown setting {self.setting!r}")
        if len(self.n_grid) < 2 or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValidationError("n_grid must be strictly increasing with >= 2 points")
        if self.n_grid[0] < 1:
            raise ValidationError("sample sizes must be >= 1")
        if self.reps < 10:
            raise ValidationError("reps must be >= 10")
        if self.reference not in REFERENCE_KINDS:
            raise ValidationError(f"unknown reference kind {self.reference!r}")
        if self.reference == "analytic" and self.reference_value is None:
            raise ValidationError("analytic reference needs reference_value")
        if self.reference == "zero" and self.setting != "two_sample_equal":
            raise ValidationError("reference=zero is reserved for two_sample_equal studies")
        if self.setting in ("one_sample", "two_sample", "semi_discrete_point_target") and self.nu is None:
            raise ValidationError(f"{self.setting} needs a target distribution nu")
        if self.setting in ("semi_discrete_point_target", "pareto_tail"):
            if self.target_dist.kind != "point_mass":
                raise ValidationError("point-target settings need a point-mass target")
        if self.setting == "one_sample" and population(self.nu) is None:
            raise ValidationError("one_sample needs a finitely supported target")
        if self.m_rule != "equal" and (int(self.m_rule) != self.m_rule or int(self.m_rule) < 1):
            raise ValidationError("m_rule must be 'equal' or a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def target_dist(self) -> DistributionSpec:
        if self.setting == "pareto_tail" and self.nu is None:
            return point_mass(0.0)
        if self.setting == "two_sample_equal":
            return self.mu
        return self.nu

    def m_for(self, n: int) -> int:
        return n if self.m_rule == "equal" else int(self.m_rule)


def pareto_tail(q: float, cost: CostSpec, n_grid, reps, seed=0, name="pareto_tail", **kw) -> RateExperiment:
    return RateExperiment(name, "pareto_tail", pareto_1d(q), cost, tuple(n_grid), reps, seed,
                          nu=point_mass(0.0), **kw)


def two_sample_equal(dist: DistributionSpec, cost: CostSpec, n_grid, reps, seed=0,
                     name="two_sample_equal", **kw) -> RateExperiment:
    kw.setdefault("reference", "zero")
    return RateExperiment(name, "two_sample_equal", dist, cost, tuple(n_grid), reps, seed, **kw)


def point_target(dist: DistributionSpec, y, cost: CostSpec, n_grid, reps, seed=0,
                 name="point_target", **kw) -> RateExperiment:
    return RateExperiment(name, "semi_discrete_point_target", dist, cost, tuple(n_grid), reps,
                          seed, nu=point_mass(y), **kw)


def one_sample(dist: DistributionSpec, target: DistributionSpec, cost: CostSpec, n_grid, reps,
               seed=0, name="one_sample", **kw) -> RateExperiment:
    return RateExperiment(name, "one_sample", dist, cost, tuple(n_grid), reps, seed, nu=target, **kw)


@dataclass(frozen=True)
class RateResult:
    per_n: Tuple[Tuple[int, float, float], ...]
    slope: float
    slope_stderr: float
    intercept: float
    excluded: Tuple[int, ...] = ()
    degenerate: bool = False
    reference: float = 0.0
    predicted_slope: Optional[float] = None

    @property
    def n(self) -> List[int]:
        return [row[0] for row in self.per_n]

    @property
    def mean_abs_dev(self) -> List[float]:
        return [row[1] for row in self.per_n]


def _point_target_closed_form(dist: DistributionSpec, y: np.ndarray, cost: CostSpec) -> Optional[float]:
    pop = population(dist)
    if pop is not None:
        return ot_value(pop, make_discrete([y], [1.0]), cost)
    if dist.kind == "pareto_1d" and cost.kind != "custom_table" and y.size == 1:
        q, p, y0 = float(dist.params["q"]), cost.p, float(y[0])
        if y0 == 0.0 and q > p:
            return q / (q - p)
        if p == 1.0 and y0 <= 1.0 and q > 1:
            return q / (q - 1.0) - y0
    return None


def reference_value(exp: RateExperiment) -> float:
    """Population value ``T(mu, nu)`` the deviations are measured against."""
    if exp.reference == "analytic":
        return float(exp.reference_value)
    if exp.reference == "zero" or (exp.reference == "auto" and exp.setting == "two_sample_equal"):
        return 0.0
    target = exp.target_dist
    if exp.reference == "auto":
        if target.kind == "point_mass":
            y = np.atleast_1d(np.asarray(target.params["y"], dtype=float))
            value = _point_target_closed_form(exp.mu, y, exp.cost)
            if value is not None:
                return value
        else:
            pm, pn = population(exp.mu), population(target)
            if pm is not None and pn is not None:
                return ot_value(pm, pn, exp.cost)
        if exp.n_ref is None:
            raise NoReference(f"no closed form for {exp.setting} and no large-sample size configured")
    if exp.n_ref is None:
        raise NoReference("large_sample reference needs n_ref")
    n_ref = int(exp.n_ref)
    if n_ref < LARGE_SAMPLE_FACTOR * max(exp.n_grid):
        raise ValidationError(f"n_ref must be >= {LARGE_SAMPLE_FACTOR} * max(n_grid)")
    rng = derive_rng(exp.seed, experiment_id(exp.name), _REFERENCE_STREAM)
    mu_ref = empirical(draw_points(exp.mu, n_ref, rng))
    nu_pop = population(target)
    nu_ref = nu_pop if nu_pop is not None else empirical(draw_points(target, n_ref, rng))
    if mu_ref.size * nu_ref.size > exp.size_cap:
        raise SizeCapExceeded("large-sample reference exceeds the solver cap")
    return ot_value(mu_ref, nu_ref, exp.cost)


def predicted_slope(exp: RateExperiment) -> Optional[float]:
    """Predicted log-log slope for the configured setting, or None when no regime applies."""
    dist, cost = exp.mu, exp.cost
    if exp.setting in ("pareto_tail", "semi_discrete_point_target") and dist.kind == "pareto_1d":
        s = float(dist.params["q"]) / cost.p
        return -min(0.5, (s - 1.0) / s) if s > 1 else None
    if exp.setting == "two_sample_equal" and dist.kind == "uniform_cube" and cost.kind == "euclidean_power":
        d, p = int(dist.params["d"]), cost.p
        return -0.5 if d <= 2 * p else -p / d
    if exp.setting == "one_sample" and population(dist) is not None:
        return -0.5
    return None


def _statistic(exp: RateExperiment, n: int, rep: int, exp_key: int, nu_pop) -> float:
    rng = derive_rng(exp.seed, exp_key, n, rep)
    X = draw_points(exp.mu, n, rng)
    target = exp.target_dist
    if target.kind == "point_mass":
        y = np.atleast_1d(np.asarray(target.params["y"], dtype=float))
        if exp.cost.kind == "custom_table":
            return ot_value(empirical(X), make_discrete([y], [1.0]), exp.cost)
        dist = np.linalg.norm(X - y[None, :], axis=1)
        return float(np.mean(dist ** exp.cost.p))
    mu_hat = empirical(X)
    if nu_pop is not None and exp.setting == "one_sample":
        nu = nu_pop
    else:
        m = exp.m_for(n)
        nu = empirical(draw_points(target, m, rng))
    if mu_hat.size * nu.size > exp.size_cap:
        raise SizeCapExceeded(f"{mu_hat.size}x{nu.size} exceeds the solver cap")
    return ot_value(mu_hat, nu, exp.cost)


def _block(args):
    exp, n, reps, exp_key, nu_pop = args
    return np.array([_statistic(exp, n, r, exp_key, nu_pop) for r in reps])


def replicate(exp: RateExperiment, threads: int = 1, chunk: int = 64) -> List[np.ndarray]:
    """Raw per-replication statistics for every grid point (before referencing).

    Replication ``r`` at size ``n`` always uses the stream
    ``(seed, experiment id, n, r)``, so the output does not depend on
    ``threads`` or on scheduling.
    """
    exp_key = experiment_id(exp.name)
    nu_pop = population(exp.target_dist) if exp.setting == "one_sample" else None
    tasks = []
    for n in exp.n_grid:
        for start in range(0, exp.reps, chunk):
            tasks.append((exp, n, range(start, min(start + chunk, exp.reps)), exp_key, nu_pop))
    if threads <= 1:
        blocks = [_block(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(_block, tasks))
    out, k = [], 0
    for n in exp.n_grid:
        parts = []
        for _ in range(0, exp.reps, chunk):
            parts.append(blocks[k])
            k += 1
        out.append(np.concatenate(parts))
    return out


def run_rate_experiment(exp: RateExperiment, threads: int = 1) -> RateResult:
    ref = reference_value(exp)
    raw = replicate(exp, threads=threads)
    per_n = []
    for n, values in zip(exp.n_grid, raw):
        dev = values if exp.setting == "two_sample_equal" else np.abs(values - ref)
        per_n.append((n, float(dev.mean()), float(dev.std(ddof=1) / math.sqrt(exp.reps))))
    excluded = ()
    fit_rows = per_n
    if exp.reps * exp.n_grid[0] < 500 and len(per_n) > 2:
        excluded = (exp.n_grid[0],)
        fit_rows = per_n[1:]
    try:
        slope, intercept, stderr = fit_loglog_slope([(n, v) for n, v, _ in fit_rows])
        degenerate = False
    except DegenerateFit:
        slope = intercept = stderr = math.nan
        degenerate = True
    return RateResult(tuple(per_n), slope, stderr, intercept, excluded, degenerate, ref,
                      predicted_slope(exp))
