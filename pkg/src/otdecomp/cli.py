"""Command-line front end.

Every subcommand reads a flat TOML config (unknown keys are rejected), writes
CSV/JSON artifacts into ``--out`` and returns

    0  success
    1  invalid input or config
    2  a mathematical contract failed (a bound that should hold did not)
    3  internal error

Results depend only on the config and ``seed``; ``--threads`` changes the
schedule, never the bytes written.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import tomli

from . import decomposition as dec
from . import duals_analysis as da
from . import rates, stochastics
from .errors import ConfigError, ContractViolation, ValidationError
from .exact_ot import normalize_duals, solve_discrete
from .measures import (
    CostSpec,
    DiscreteMeasure,
    DistributionSpec,
    absolute_power_1d,
    custom_table,
    derive_rng,
    euclidean_power,
    experiment_id,
    make_discrete,
    merge_duplicates,
    point_mass,
)

CSV_VERSION = 1
COMMANDS = ("solve", "decompose", "rates", "stochastics", "duals", "report")

EXIT_OK, EXIT_INVALID, EXIT_CONTRACT, EXIT_INTERNAL = 0, 1, 2, 3


# --- config -------------------------------------------------------------------

_COST_KEYS = {"cost": str, "p": float, "offset": float, "table": list}
_DIST_PARAM_KEYS = ("d", "q", "x0", "x1", "y", "alpha", "beta")

_SCHEMA: Dict[str, Dict[str, type]] = {
    "solve": {"mu_file": str, "nu_file": str, "normalize_p": float, **_COST_KEYS},
    "decompose": {"mu_file": str, "nu_file": str, "n": int, "m": int, "runs": int, "seed": int,
                  "layer_offset": float, "exponent": float, **_COST_KEYS},
    "rates": {"name": str, "setting": str, "mu": str, "nu": str, "n_grid": list, "reps": int,
              "seed": int, "m_rule": object, "reference": str, "reference_value": float,
              "n_ref": int, "slope_target": float, "slope_tolerance": float,
              **{f"mu_{k}": object for k in _DIST_PARAM_KEYS},
              **{f"nu_{k}": object for k in _DIST_PARAM_KEYS}, **_COST_KEYS},
    "stochastics": {"seed": int, "n_values": list, "p_values": list, "alpha": float, "reps": int,
                    "gamma": float, "pareto_q": list, "pareto_p": float, "pareto_n": list},
    "duals": {"preset_p": float, "alpha": float, "beta": float, "gamma": int, "p": float,
              "epsilons": list, "growth_tolerance": float, "min_growth_factor": float,
              "ks_n": int, "ks_tolerance": float, "seed": int, "scaling_draws": int,
              "scaling_resolution": int},
    "report": {"inputs": list, "title": str},
}


def load_config(path: Optional[str], command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    schema = _SCHEMA[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"{key}: nested tables are not allowed")
        want = schema[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is not object and not isinstance(value, want):
            raise ConfigError(f"{key} must be of type {want.__name__}")
        out[key] = value
    out["_dir"] = str(Path(path).resolve().parent)
    return out


def _resolve(cfg: dict, key: str) -> Path:
    if key not in cfg:
        raise ConfigError(f"missing config key {key!r}")
    path = Path(cfg[key])
    return path if path.is_absolute() else Path(cfg.get("_dir", ".")) / path


def cost_from_config(cfg: dict) -> CostSpec:
    kind = cfg.get("cost", "euclidean")
    p = cfg.get("p", 1.0)
    offset = cfg.get("offset", 0.0)
    if kind == "euclidean":
        return euclidean_power(p, offset)
    if kind == "abs":
        return absolute_power_1d(p, offset)
    if kind == "table":
        if "table" not in cfg:
            raise ConfigError("cost = 'table' needs a 'table' key")
        return custom_table(cfg["table"])
    raise ConfigError(f"unknown cost {kind!r} (expected euclidean, abs or table)")


def dist_from_config(cfg: dict, prefix: str) -> Optional[DistributionSpec]:
    kind = cfg.get(prefix)
    if kind is None:
        return None
    params = {k: cfg[f"{prefix}_{k}"] for k in _DIST_PARAM_KEYS if f"{prefix}_{k}" in cfg}
    return DistributionSpec(kind, params)


def read_measure(path: Path) -> DiscreteMeasure:
    try:
        rec = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"measure file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    missing = {"dim", "points", "weights"} - set(rec)
    if missing:
        raise ConfigError(f"{path}: missing fields {sorted(missing)}")
    dim = int(rec["dim"])
    flat = np.asarray(rec["points"], dtype=float).ravel()
    if dim < 1 or flat.size % dim:
        raise ValidationError(f"{path}: {flat.size} coordinates do not split into dim {dim}")
    return make_discrete(flat.reshape(-1, dim), rec["weights"])


def measure_record(measure: DiscreteMeasure) -> dict:
    return {"dim": measure.dim, "points": measure.points.ravel().tolist(),
            "weights": measure.weights.tolist()}


# --- output -------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, kind: str, header: List[str], rows, meta: Optional[dict] = None) -> None:
    meta_txt = "".join(f" {k}={_fmt(v)}" for k, v in (meta or {}).items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# otdecomp-{kind} v{CSV_VERSION}{meta_txt}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: Path):
    """``(kind, meta, header, rows)`` of a CSV written by :func:`write_csv`."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# otdecomp-"):
        raise ValidationError(f"{path}: not an otdecomp CSV (missing version header)")
    head = lines[0][2:].split()
    kind, version = head[0][len("otdecomp-"):], head[1]
    if version != f"v{CSV_VERSION}":
        raise ValidationError(f"{path}: unsupported CSV version {version}")
    meta = dict(tok.split("=", 1) for tok in head[2:])
    reader = list(csv.reader(lines[1:]))
    return kind, meta, reader[0], reader[1:]


def write_json(path: Path, record: dict) -> None:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.floating, float)):
            v = float(v)
            return v if math.isfinite(v) else None
        if isinstance(v, np.integer):
            return int(v)
        if isinstance(v, np.bool_):
            return bool(v)
        return v
    Path(path).write_text(json.dumps(clean(record), indent=2, sort_keys=True) + "\n")


# --- subcommands --------------------------------------------------------------

def cmd_solve(cfg, args, out: Path) -> int:
    mu, nu = read_measure(_resolve(cfg, "mu_file")), read_measure(_resolve(cfg, "nu_file"))
    cost = cost_from_config(cfg)
    plan, duals = solve_discrete(mu, nu, cost)
    if "normalize_p" in cfg:
        duals = normalize_duals(duals, plan, mu, nu, cost, cfg["normalize_p"])
    write_csv(out / "plan.csv", "plan", ["i", "j", "mass"], plan.entries)
    write_csv(out / "duals.csv", "duals", ["side", "index", "potential"],
              [("x", i, v) for i, v in enumerate(duals.f)] + [("y", j, v) for j, v in enumerate(duals.g)])
    gap = abs(plan.value - duals.value(mu, nu))
    write_json(out / "solve.json", {"value": plan.value, "dual_value": duals.value(mu, nu),
                                    "duality_gap": gap, "support": len(plan.masses)})
    print(f"value = {plan.value!r}")
    if gap > 1e-8 * max(1.0, abs(plan.value)):
        raise ContractViolation(f"duality gap {gap:.3g}")
    return EXIT_OK


def cmd_decompose(cfg, args, out: Path) -> int:
    mu, nu = read_measure(_resolve(cfg, "mu_file")), read_measure(_resolve(cfg, "nu_file"))
    cost = cost_from_config(cfg)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    plan, _ = solve_discrete(mu, nu, cost)
    decomp = dec.layer_decompose(plan, mu, nu, cost, offset=cfg.get("layer_offset"))
    sub_values, mus, nus = [], [], []
    for k in range(len(decomp.layers)):
        sub, mk, nk = decomp.sub_plan(k, cost)
        sub_values.append(sub.value)
        mus.append(mk)
        nus.append(nk)
    a = decomp.masses
    bound = dec.composition_bound(a, a, sub_values, decomp.radii)
    rows = [(l.index, l.mass, l.radius, v) for l, v in zip(decomp.layers, sub_values)]
    write_csv(out / "layers.csv", "layers", ["layer", "mass", "radius", "sub_value"], rows)

    n, m, runs = cfg.get("n", 50), cfg.get("m", cfg.get("n", 50)), cfg.get("runs", 20)
    key = experiment_id("decompose")
    emp_rows, violations = [], 0
    for run in range(runs):
        s_mu = dec.two_stage_sample(decomp, "X", n, derive_rng(seed, key, run, 0))
        s_nu = dec.two_stage_sample(decomp, "Y", m, derive_rng(seed, key, run, 1))
        emp_bound, _ = dec.composite_bound_from_samples(decomp, s_mu, s_nu, cost)
        exact = solve_discrete(merge_duplicates(s_mu.pooled), merge_duplicates(s_nu.pooled), cost)[0].value
        ok = exact <= emp_bound * (1 + 1e-9) + 1e-12
        violations += not ok
        emp_rows.append((run, exact, emp_bound, ok))
    write_csv(out / "composite.csv", "composite", ["run", "exact", "bound", "ok"], emp_rows)
    summary = {"value": plan.value, "layers": decomp.indices, "offset": decomp.offset,
               "composition_bound": bound, "composite_violations": violations, "runs": runs}
    if "exponent" in cfg:
        masses, env = dec.layer_moment_check(decomp, cost, cfg["exponent"])
        summary["envelope_ok"] = bool(np.all(masses <= env * (1 + 1e-12)))
    write_json(out / "decompose.json", summary)
    print(f"value = {plan.value!r}, composition bound = {bound!r}, violations = {violations}/{runs}")
    if plan.value > bound * (1 + 1e-9) + 1e-12:
        raise ContractViolation("composition bound below the exact value")
    if violations or not summary.get("envelope_ok", True):
        raise ContractViolation(f"{violations} empirical composite bound violations")
    return EXIT_OK


def experiment_from_config(cfg: dict, seed: Optional[int]) -> rates.RateExperiment:
    for key in ("setting", "mu", "n_grid", "reps"):
        if key not in cfg:
            raise ConfigError(f"missing config key {key!r}")
    mu = dist_from_config(cfg, "mu")
    nu = dist_from_config(cfg, "nu")
    kw = {k: cfg[k] for k in ("m_rule", "reference", "reference_value", "n_ref") if k in cfg}
    if cfg["setting"] == "pareto_tail" and nu is None:
        nu = point_mass(0.0)
    if cfg["setting"] == "two_sample_equal":
        kw.setdefault("reference", "zero")
    return rates.RateExperiment(
        name=cfg.get("name", cfg["setting"]), setting=cfg["setting"], mu=mu, nu=nu,
        cost=cost_from_config(cfg), n_grid=tuple(cfg["n_grid"]), reps=cfg["reps"],
        seed=seed if seed is not None else cfg.get("seed", 0), **kw)


def cmd_rates(cfg, args, out: Path) -> int:
    exp = experiment_from_config(cfg, args.seed)
    res = rates.run_rate_experiment(exp, threads=args.threads)
    meta = {"name": exp.name, "slope": res.slope, "intercept": res.intercept,
            "predicted": res.predicted_slope if res.predicted_slope is not None else math.nan,
            "excluded": ";".join(str(n) for n in res.excluded) or "none"}
    write_csv(out / "rates.csv", "rates", ["n", "mean_abs_dev", "std_error"], res.per_n, meta)
    target = cfg.get("slope_target", res.predicted_slope)
    tol = cfg.get("slope_tolerance")
    passed = None
    if target is not None and tol is not None and not res.degenerate:
        passed = abs(res.slope - target) <= tol
    write_json(out / "rates_summary.json", {
        "name": exp.name, "setting": exp.setting, "slope": res.slope, "slope_stderr": res.slope_stderr,
        "intercept": res.intercept, "predicted_slope": res.predicted_slope, "slope_target": target,
        "slope_tolerance": tol, "passed": passed, "degenerate": res.degenerate,
        "reference": res.reference, "excluded": list(res.excluded), "seed": exp.seed})
    print(f"{exp.name}: slope = {res.slope:.4f} (target {target}, tolerance {tol})")
    if passed is False:
        raise ContractViolation(f"slope {res.slope:.4f} outside {target} +/- {tol}")
    return EXIT_OK


def cmd_stochastics(cfg, args, out: Path) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    key = experiment_id("stochastics")
    n_values = [int(v) for v in cfg.get("n_values", [10, 100, 1000])]
    p_values = [float(v) for v in cfg.get("p_values", [0.1, 0.5, 0.9])]
    alpha, reps = cfg.get("alpha", 0.5), cfg.get("reps", 10_000)
    rows = []
    for n in n_values:
        for p in p_values:
            rows.append(("inverse_binomial", n, p, stochastics.inverse_binomial_moment_exact(n, p),
                         stochastics.inverse_binomial_bound(n, p), 0.0))
            est = stochastics.truncated_inverse_moment(n, p, alpha, reps, derive_rng(seed, key, 1, n, int(p * 1e6)))
            rows.append(("truncated_inverse", n, p, est.estimate, est.bound, est.stderr))
    gamma = cfg.get("gamma", 0.5)
    for n in n_values:
        a = np.array([0.5, 0.25, 0.125, 0.125])
        env = dec.EnvelopeSequence(np.array([0.5, 0.25, 0.125, 0.125]))
        c = np.array([1.0, 2.0, 4.0, 8.0])
        est = stochastics.multinomial_l1_deviation(a, c, env, gamma, n, reps, derive_rng(seed, key, 2, n))
        rows.append(("multinomial_l1", n, gamma, est.estimate, est.bound, est.stderr))
    pm = cfg.get("pareto_p", 1.5)
    for q in [float(v) for v in cfg.get("pareto_q", [1.8, 2.5])]:
        for n in [int(v) for v in cfg.get("pareto_n", [10, 100])]:
            est = stochastics.sample_mean_deviation_pareto(q, pm, n, min(reps, 2000),
                                                           derive_rng(seed, key, 3, n, int(q * 1e6)))
            rows.append(("pareto_sample_mean", n, q, est.estimate, est.bound, est.stderr))
    table = [r + (r[3] <= r[4] + 3 * r[5],) for r in rows]
    write_csv(out / "stochastics.csv", "stochastics",
              ["check", "n", "param", "estimate", "bound", "stderr", "ok"], table)
    bad = [r for r in table if not r[-1]]
    write_json(out / "stochastics.json", {"checks": len(table), "violations": len(bad)})
    print(f"{len(table)} checks, {len(bad)} violations")
    if bad:
        raise ContractViolation(f"{len(bad)} stochastic bounds failed, first: {bad[0][:3]}")
    return EXIT_OK


def cmd_duals(cfg, args, out: Path) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if "preset_p" in cfg or not {"alpha", "beta", "gamma"} <= set(cfg):
        inst = da.AppendixCInstance.preset(cfg.get("preset_p", 2.0))
    else:
        inst = da.AppendixCInstance(cfg["alpha"], cfg["beta"], cfg["gamma"], cfg.get("p", 2.0))
    p = cfg.get("p", inst.p)
    eps = [float(e) for e in cfg.get("epsilons", [1e-2, 1e-3, 1e-4, 1e-5, 1e-6])]
    partial = da.appendix_c_divergence_diagnostic(inst, p, eps)
    growth = da.potential_growth_exponent(inst)
    ks = da.appendix_c_pushforward_ks(inst, cfg.get("ks_n", 100_000),
                                      derive_rng(seed, experiment_id("duals"), 0))
    write_csv(out / "divergence.csv", "divergence", ["epsilon", "partial_integral"], zip(eps, partial),
              {"alpha": inst.alpha, "beta": inst.beta, "gamma": inst.gamma, "p": p})
    factors = [b / a for a, b, e in zip(partial, partial[1:], eps[1:]) if e <= 1e-4]
    min_factor = cfg.get("min_growth_factor", 1.5)
    growth_tol = cfg.get("growth_tolerance", 0.1)
    ks_tol = cfg.get("ks_tolerance", 0.01)

    rng = derive_rng(seed, experiment_id("duals"), 1)
    scaling_rows = []
    for k in range(cfg.get("scaling_draws", 5)):
        d = int(rng.integers(1, 4))
        sp = float(rng.uniform(0.5, 3.0))
        beta = max(2.0, 2.0 * sp) + float(rng.uniform(0.1, 2.0))
        r = float(rng.uniform(1.0, 5.0))
        spec = da.ScalingCheckSpec(p=sp, beta=beta, r=r, d=d, order=2,
                                   resolution=cfg.get("scaling_resolution", 41 if d < 3 else 21))
        f, grad, hess = da.power_norm(sp)
        res = da.scaled_function_check(spec, f, grad, hess)
        scaling_rows.append((k, d, sp, beta, r, res.max_grad, res.grad_bound, res.max_second,
                             res.second_bound, res.passed))
    write_csv(out / "scaling.csv", "scaling",
              ["draw", "d", "p", "beta", "r", "max_grad", "grad_bound", "max_second", "second_bound", "ok"],
              scaling_rows)
    checks = {
        "criterion": inst.criterion(p),
        "growth_exponent": growth, "growth_target": inst.growth_exponent,
        "growth_ok": abs(growth - inst.growth_exponent) <= growth_tol,
        "growth_factors": factors, "divergence_ok": bool(factors) and min(factors) >= min_factor,
        "ks": ks, "ks_ok": ks < ks_tol,
        "scaling_ok": all(r[-1] for r in scaling_rows),
    }
    write_json(out / "duals.json", checks)
    print(f"growth exponent {growth:.4f} (target {inst.growth_exponent:.4f}), KS {ks:.4g}")
    failed = [k for k in ("growth_ok", "divergence_ok", "ks_ok", "scaling_ok") if not checks[k]]
    if failed:
        raise ContractViolation(f"failed checks: {', '.join(failed)}")
    return EXIT_OK


def _plot_rates(path: Path, meta: dict, rows, svg: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "otdecomp"
    import matplotlib.pyplot as plt

    n = np.array([float(r[0]) for r in rows])
    v = np.array([float(r[1]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(n, v, "o", label="mean |deviation|")
    slope, intercept = float(meta.get("slope", "nan")), float(meta.get("intercept", "nan"))
    if math.isfinite(slope):
        ax.loglog(n, np.exp(intercept) * n ** slope, "-", label=f"fit {slope:.3f}")
    predicted = float(meta.get("predicted", "nan"))
    if math.isfinite(predicted) and np.all(v > 0):
        anchor = v[0] * (n / n[0]) ** predicted
        ax.loglog(n, anchor, "--", label=f"predicted {predicted:.3f}")
    ax.set_xlabel("n")
    ax.set_ylabel("deviation")
    ax.set_title(meta.get("name", path.stem))
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(cfg, args, out: Path) -> int:
    inputs = list(args.inputs or []) + [str(_resolve({"k": p, "_dir": cfg.get("_dir", ".")}, "k"))
                                        for p in cfg.get("inputs", [])]
    if not inputs:
        raise ConfigError("report needs input CSV files (positional or 'inputs' key)")
    summary = []
    for name in inputs:
        path = Path(name)
        if not path.exists():
            raise ConfigError(f"input not found: {path}")
        kind, meta, header, rows = read_csv(path)
        entry = {"file": str(path), "kind": kind, "rows": len(rows), **meta}
        if kind == "rates":
            if args.plot:
                svg = out / (path.stem + ".svg")
                _plot_rates(path, meta, rows, svg)
                entry["plot"] = str(svg)
        elif "ok" in header:
            col = header.index("ok")
            entry["violations"] = sum(r[col] != "true" for r in rows)
        summary.append(entry)
    write_json(out / "report.json", {"title": cfg.get("title", "otdecomp report"), "inputs": summary})
    print(f"report over {len(summary)} files written to {out / 'report.json'}")
    return EXIT_OK


HANDLERS = {"solve": cmd_solve, "decompose": cmd_decompose, "rates": cmd_rates,
            "stochastics": cmd_stochastics, "duals": cmd_duals, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otdecomp", description="Exact OT solves and rate experiments.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat TOML config file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads; results do not depend on this")
        sp.add_argument("--plot", action="store_true", help="emit SVG plots (report)")
        if name == "report":
            sp.add_argument("inputs", nargs="*", help="CSV files to aggregate")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            parser.print_help()
            return EXIT_OK
        parser.print_usage(sys.stderr)
        print(f"otdecomp: error: expected one of {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_INVALID
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ValidationError("--seed must be a 64-bit unsigned integer")
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        cfg = load_config(args.config, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, args, out)
    except ValidationError as exc:
        print(f"otdecomp {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ContractViolation as exc:
        print(f"otdecomp {args.command}: contract violated: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
