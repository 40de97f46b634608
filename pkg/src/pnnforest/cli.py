"""Experiment runner: config-file driven Monte Carlo studies with CSV output.

Configs are INI files (flat key-value entries grouped in sections); every
value can be overridden from the command line with ``--set section.key=value``.
Each run writes ``results.csv`` (the machine-readable contract — deterministic
given config + seed, regardless of worker count), ``meta.json`` (resolved
config and provenance), and optionally ``plot.svg``.

Exit codes: 0 success, 2 invalid config, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .forest import WEIGHT_KINDS, WeightScheme
from .geometry import rect_between
from .mc import (
    ReplicationPlan,
    StandardizationError,
    WORKERS_ENV_VAR,
    _ecdf_kolmogorov_detail,
    concentration_check,
    estimate_L_moments,
    estimate_bias,
    lower_bound_exponent_fit,
    multivariate_rect_kolmogorov,
    resolve_workers,
    run_count_replications,
    run_replications,
    standardize,
)
from .process import (
    DENSITY_KINDS,
    NOISE_KINDS,
    R0_KINDS,
    SIGMA_KINDS,
    DensitySpec,
    ModelSpec,
    NoiseSpec,
    QuadratureError,
    RegressionSpec,
    SeedSpec,
    rect_mass,
)
from .stabilization import check_assumptions, poisson_cdf_psi

__all__ = ["main", "load_config", "validate_config", "run_experiment", "ConfigError",
           "ExperimentConfig", "EXPERIMENTS"]


class ConfigError(ValueError):
    """Configuration cannot be turned into a runnable experiment."""


EXPERIMENTS = {
    "clt-rate": "distribution distance of standardized predictions vs sample size",
    "pnn-count": "voting-set size moments against the k log^(d-1) n yardstick",
    "bias-decay": "prediction bias vs sample size at fixed test points",
    "tail-calibration": "analytic region-membership probabilities vs empirical frequencies",
    "concentration": "frequency of half-mean voting-count shortfalls",
    "lower-bound-fit": "growth exponent of the nested rectangle-tail integral in k",
    "assumption-audit": "locality/monotonicity/add-stability checks on random instances",
}

_CSV_COLUMNS = {
    "clt-rate": ("n", "k", "m", "reps", "d_k", "d_k_se", "sigma_min_eig", "mean_L"),
    "pnn-count": ("n", "k", "d", "mean_L", "se_L", "ratio_to_klogd", "recip_moment", "x0_index"),
    "bias-decay": ("n", "k", "x0_index", "reps", "mean_pred", "r0_value", "bias", "bias_se"),
    "tail-calibration": ("case", "n", "k", "mass", "analytic_prob", "empirical_freq",
                         "se", "z_score", "within_3se"),
    "concentration": ("n", "k", "x0_index", "reps", "mean_L", "threshold",
                      "fraction_below_half", "skipped"),
    "lower-bound-fit": ("k", "n", "t", "alpha", "integral_estimate", "integral_se",
                        "fitted_exponent", "exponent_target"),
    "assumption-audit": ("instance", "n_points", "k", "dim", "locality_ok",
                         "monotonicity_ok", "outside_unchanged_ok", "add_stability_checked",
                         "add_stability_ok"),
}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    experiment: str
    model: ModelSpec
    intensities: tuple
    ks: tuple
    x0s: np.ndarray
    reps: int
    seed: int
    output: Path
    scheme: WeightScheme = field(default_factory=WeightScheme)
    workers: int | None = None
    plot: bool = False
    params: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def _points(text: str) -> np.ndarray:
    rows = [row.strip() for row in text.split(";") if row.strip()]
    if not rows:
        raise ConfigError("no test points given")
    vals = [_floats(row) for row in rows]
    if len({len(v) for v in vals}) != 1:
        raise ConfigError("test points must share one dimension")
    return np.asarray(vals, dtype=np.float64)


def _build_density(sec) -> DensitySpec:
    kind = sec.get("density", "uniform-box").strip()
    if kind not in DENSITY_KINDS:
        raise ConfigError(f"unknown density {kind!r}; choose from {DENSITY_KINDS}")
    lo = _floats(sec.get("density.lo", "0 0"))
    hi = _floats(sec.get("density.hi", "1 1"))
    try:
        if kind == "uniform-box":
            return DensitySpec.uniform_box(lo, hi)
        if kind == "truncated-gaussian":
            return DensitySpec.truncated_gaussian(
                _floats(sec.get("density.mean", "0.5")), _floats(sec.get("density.sd", "0.25")),
                lo, hi)
        return DensitySpec.product_beta(
            _floats(sec.get("density.a", "2")), _floats(sec.get("density.b", "2")), lo, hi)
    except ValueError as exc:
        raise ConfigError(f"bad density parameters: {exc}") from exc


def _build_regression(sec) -> RegressionSpec:
    r0_kind = sec.get("r0", "constant").strip()
    sigma_kind = sec.get("sigma", "constant").strip()
    if r0_kind not in R0_KINDS:
        raise ConfigError(f"unknown r0 {r0_kind!r}; choose from {R0_KINDS}")
    if sigma_kind not in SIGMA_KINDS:
        raise ConfigError(f"unknown sigma {sigma_kind!r}; choose from {SIGMA_KINDS}")
    if r0_kind == "constant":
        r0_params = {"value": float(sec.get("r0.value", "0"))}
    elif r0_kind == "linear":
        r0_params = {"weights": _floats(sec.get("r0.weights", "1")),
                     "intercept": float(sec.get("r0.intercept", "0"))}
    else:
        r0_params = {"amplitude": float(sec.get("r0.amplitude", "1")),
                     "frequency": float(sec.get("r0.frequency", "1"))}
    if sigma_kind == "constant":
        sigma_params = {"value": float(sec.get("sigma.value", "1"))}
    else:
        sigma_params = {"base": float(sec.get("sigma.base", "1")),
                        "slope": float(sec.get("sigma.slope", "0"))}
    try:
        return RegressionSpec(r0_kind, r0_params, sigma_kind, sigma_params)
    except ValueError as exc:
        raise ConfigError(f"bad regression parameters: {exc}") from exc


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse an INI experiment config, applying ``section.key=value`` overrides."""
    # ';' separates test-point rows inside values, so only '#' starts a comment
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)

    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    exp = parser["experiment"]
    name = exp.get("name", "").strip()
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; see `pnnforest list-experiments`")

    model_sec = parser["model"] if parser.has_section("model") else {}
    density = _build_density(model_sec)
    noise_kind = model_sec.get("noise", "gaussian").strip() if model_sec else "gaussian"
    if noise_kind not in NOISE_KINDS:
        raise ConfigError(f"unknown noise {noise_kind!r}; choose from {NOISE_KINDS}")
    model = ModelSpec(density, NoiseSpec(noise_kind), _build_regression(model_sec))

    grid = parser["grid"] if parser.has_section("grid") else {}
    try:
        intensities = tuple(_floats(grid.get("n", "1000")))
        ks = tuple(int(v) for v in _floats(grid.get("k", "1")))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad grid: {exc}") from exc
    default_x0 = " ".join(str((lo + hi) / 2) for lo, hi in zip(density.lo, density.hi))
    x0s = _points(grid.get("x0", default_x0))

    scheme_sec = parser["scheme"] if parser.has_section("scheme") else {}
    scheme_kind = scheme_sec.get("kind", "uniform").strip() if scheme_sec else "uniform"
    if scheme_kind not in WEIGHT_KINDS:
        raise ConfigError(f"unknown weight scheme {scheme_kind!r}; choose from {WEIGHT_KINDS}")
    try:
        scheme = WeightScheme(scheme_kind,
                              float(scheme_sec.get("alpha", "1.0")) if scheme_sec else 1.0,
                              int(scheme_sec.get("seed", "0")) if scheme_sec else 0)
    except ValueError as exc:
        raise ConfigError(f"bad scheme: {exc}") from exc

    params: dict = {}
    if parser.has_section("params"):
        for key, value in parser["params"].items():
            params[key] = value

    try:
        reps = int(exp.get("reps", "100"))
        seed = int(exp.get("seed", "0"))
        workers = int(exp["workers"]) if exp.get("workers", "").strip() else None
        plot = exp.get("plot", "false").strip().lower() in ("1", "true", "yes", "on")
    except ValueError as exc:
        raise ConfigError(f"bad [experiment] entry: {exc}") from exc

    raw = {sec: dict(parser[sec]) for sec in parser.sections()}
    return ExperimentConfig(
        experiment=name, model=model, intensities=intensities, ks=ks, x0s=x0s,
        reps=reps, seed=seed, output=Path(exp.get("output", "runs/" + name)),
        scheme=scheme, workers=workers, plot=plot, params=params, raw=raw)


def _param(cfg: ExperimentConfig, key: str, cast, default):
    try:
        return cast(cfg.params[key]) if key in cfg.params else default
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [params] {key}: {exc}") from exc


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    findings: list[str]
    warnings: list[str]
    cost_note: str

    @property
    def ok(self) -> bool:
        return not self.findings


def validate_config(cfg: ExperimentConfig) -> ValidationReport:
    """Static checks: grids, catalog ids, hypothesis ranges, projected cost."""
    findings: list[str] = []
    warnings: list[str] = []

    if cfg.reps < 2:
        findings.append("reps must be at least 2")
    if any(n <= 0 for n in cfg.intensities):
        findings.append("intensity grid must be positive")
    if any(k < 1 for k in cfg.ks):
        findings.append("k grid must contain positive integers")
    if cfg.x0s.shape[1] != cfg.model.density.dim:
        findings.append(
            f"test points have dimension {cfg.x0s.shape[1]} but the density "
            f"has dimension {cfg.model.density.dim}")
    else:
        outside = ~cfg.model.density.support.contains(cfg.x0s)
        if np.any(outside):
            warnings.append(f"{int(outside.sum())} test point(s) outside the density support")

    m = cfg.x0s.shape[0]
    if cfg.experiment == "clt-rate" and m > 4:
        findings.append(
            f"rejected: {m} test points request an {m}-dimensional rectangle-grid "
            "distance, but the multivariate estimate is limited to 4 components "
            "(grid evaluation beyond that is not an honest sup-distance estimate)")
    if cfg.experiment == "lower-bound-fit":
        if cfg.model.density.kind != "uniform-box":
            findings.append("lower-bound-fit requires the uniform-box density")
        if len(cfg.ks) < 2:
            findings.append("lower-bound-fit needs at least two k values")
        if len(cfg.intensities) != 1:
            findings.append("lower-bound-fit expects a single intensity")
        else:
            n = cfg.intensities[0]
            bad = [k for k in cfg.ks if k >= n / 2]
            if bad:
                warnings.append(
                    f"k values {bad} reach n/2; the k^(t+1) growth regime is "
                    f"guaranteed only for k <= 2n and degrades near it")
    if cfg.experiment == "tail-calibration" and len(cfg.intensities) != 1:
        findings.append("tail-calibration expects a single intensity")
    if cfg.experiment == "clt-rate":
        small = [k for k in cfg.ks if k < 11]
        if small:
            warnings.append(
                f"normal-approximation guarantees assume k >= 11; k values {small} "
                "are outside that hypothesis (the run itself is still well-defined)")

    draws = sum(n * cfg.reps * len(cfg.ks) for n in cfg.intensities) * max(1, m)
    if cfg.experiment == "assumption-audit":
        draws = _param(cfg, "instances", int, 500) * _param(cfg, "config_mean", float, 30.0)
    if cfg.experiment == "tail-calibration":
        draws = _param(cfg, "cases", int, 20) * _param(cfg, "draws", int, 20000) * \
            (cfg.intensities[0] if cfg.intensities else 0)
    if cfg.experiment == "lower-bound-fit":
        draws = _param(cfg, "outer", int, 1500) * _param(cfg, "inner", int, 1500) * len(cfg.ks)
    cost_note = (f"projected work ~ {draws:.3g} point-draws"
                 f" across {len(cfg.intensities)}x{len(cfg.ks)} grid cells, reps={cfg.reps}")
    return ValidationReport(findings, warnings, cost_note)


# ---------------------------------------------------------------------------
# experiment runners (each returns a list of row dicts)
# ---------------------------------------------------------------------------


def _run_clt_rate(cfg: ExperimentConfig) -> list[dict]:
    grid_points = _param(cfg, "grid_points", int, 21)
    grid_limit = _param(cfg, "grid_limit", float, 4.0)
    m = cfg.x0s.shape[0]
    plan = ReplicationPlan(cfg.model, cfg.intensities, cfg.ks, cfg.x0s, cfg.reps,
                           cfg.scheme, cfg.seed)
    results = run_replications(plan, cfg.workers)
    rows = []
    for n in cfg.intensities:
        for k in cfg.ks:
            res = results[(n, k)]
            z, info = standardize(res.preds)
            if m == 1:
                d_k, f_at = _ecdf_kolmogorov_detail(z[:, 0])
                se = math.sqrt(max(f_at * (1 - f_at), 1.0 / cfg.reps) / cfg.reps)
            else:
                d_k = multivariate_rect_kolmogorov(z, grid_points, grid_limit)
                se = math.sqrt(0.25 / cfg.reps)  # binomial bound at the sup
            rows.append({"n": n, "k": k, "m": m, "reps": cfg.reps, "d_k": d_k,
                         "d_k_se": se, "sigma_min_eig": info.min_eig,
                         "mean_L": float(res.counts.mean())})
    return rows


def _run_pnn_count(cfg: ExperimentConfig) -> list[dict]:
    d = cfg.model.density.dim
    rows = []
    for n in cfg.intensities:
        for k in cfg.ks:
            counts = run_count_replications(cfg.model.density, n, k, cfg.x0s,
                                            cfg.reps, cfg.seed, cfg.workers)
            for j in range(cfg.x0s.shape[0]):
                rep = estimate_L_moments(counts[:, j], n, k, d)
                rows.append({"n": n, "k": k, "d": d, "mean_L": rep.mean_count,
                             "se_L": rep.se_count, "ratio_to_klogd": rep.ratio_to_klogd,
                             "recip_moment": rep.mean_recip_count, "x0_index": j})
    return rows


def _run_bias_decay(cfg: ExperimentConfig) -> list[dict]:
    plan = ReplicationPlan(cfg.model, cfg.intensities, cfg.ks, cfg.x0s, cfg.reps,
                           cfg.scheme, cfg.seed)
    results = run_replications(plan, cfg.workers)
    r0_vals = cfg.model.regression.r0(cfg.x0s)
    rows = []
    for n in cfg.intensities:
        for k in cfg.ks:
            res = results[(n, k)]
            for j in range(cfg.x0s.shape[0]):
                rep = estimate_bias(res.preds[:, j], float(r0_vals[j]))
                rows.append({"n": n, "k": k, "x0_index": j, "reps": cfg.reps,
                             "mean_pred": rep.mean_pred, "r0_value": rep.target,
                             "bias": rep.bias, "bias_se": rep.se})
    return rows


def _run_tail_calibration(cfg: ExperimentConfig) -> list[dict]:
    cases = _param(cfg, "cases", int, 20)
    draws = _param(cfg, "draws", int, 20000)
    k_max = _param(cfg, "k_max", int, 12)
    n = cfg.intensities[0]
    density = cfg.model.density
    d = density.dim
    rows = []
    for case in range(cases):
        rng = SeedSpec(cfg.seed, case).generator()
        k = int(rng.integers(1, k_max + 1))
        x0 = density.sample(1, rng)[0]
        # scale a random corner toward x0 so the rectangle intensity lands in
        # the transition regime around k (exact mass is recomputed afterwards)
        x = density.sample(1, rng)[0]
        target = rng.uniform(0.2 * k, 3.0 * k) / n
        base = rect_mass(density, rect_between(x0, x))
        if base > 0:
            x = x0 + (x - x0) * min(1.0, (target / base) ** (1.0 / d))
        rect = rect_between(x0, x)
        mass = rect_mass(density, rect)
        analytic = poisson_cdf_psi(n * mass, k)
        hits = 0
        for _ in range(draws):
            count = int(rng.poisson(n))
            pts = density.sample(count, rng)
            inside = np.logical_and(pts >= rect.lo, pts <= rect.hi).all(axis=1)
            if int(inside.sum()) < k:
                hits += 1
        freq = hits / draws
        se = math.sqrt(max(analytic * (1 - analytic), 1.0 / draws) / draws)
        z = (freq - analytic) / se
        rows.append({"case": case, "n": n, "k": k, "mass": mass,
                     "analytic_prob": analytic, "empirical_freq": freq, "se": se,
                     "z_score": z, "within_3se": int(abs(z) <= 3.0)})
    return rows


def _run_concentration(cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for n in cfg.intensities:
        for k in cfg.ks:
            counts = run_count_replications(cfg.model.density, n, k, cfg.x0s,
                                            cfg.reps, cfg.seed, cfg.workers)
            for j in range(cfg.x0s.shape[0]):
                rep = concentration_check(counts[:, j])
                rows.append({"n": n, "k": k, "x0_index": j, "reps": rep.reps,
                             "mean_L": rep.mean_count, "threshold": rep.threshold,
                             "fraction_below_half": rep.fraction_below,
                             "skipped": int(rep.skipped)})
    return rows


def _run_lower_bound_fit(cfg: ExperimentConfig) -> list[dict]:
    n = cfg.intensities[0]
    t = _param(cfg, "t", float, 1.0)
    alpha = _param(cfg, "alpha", float, 1.0)
    outer = _param(cfg, "outer", int, 1500)
    inner = _param(cfg, "inner", int, 1500)
    rep = lower_bound_exponent_fit(cfg.model.density, n, list(cfg.ks), t, alpha,
                                   outer=outer, inner=inner, seed=cfg.seed)
    rows = []
    for i, k in enumerate(rep.ks):
        rows.append({"k": int(k), "n": n, "t": t, "alpha": alpha,
                     "integral_estimate": float(rep.estimates[i]),
                     "integral_se": float(rep.standard_errors[i]),
                     "fitted_exponent": rep.exponent, "exponent_target": rep.target})
    return rows


def _run_assumption_audit(cfg: ExperimentConfig) -> list[dict]:
    instances = _param(cfg, "instances", int, 500)
    config_mean = _param(cfg, "config_mean", float, 30.0)
    k_max = _param(cfg, "k_max", int, 5)
    density = cfg.model.density
    d = density.dim
    rows = []
    from .geometry import PointConfig
    for inst in range(instances):
        rng = SeedSpec(cfg.seed, inst).generator()
        count = int(rng.poisson(config_mean))
        pts = density.sample(count, rng)
        config = PointConfig(pts, dim=d)
        x0 = density.sample(1, rng)[0]
        probe = density.sample(1, rng)[0]
        if count and rng.random() < 0.5:
            # make inside-rectangle probes common enough to exercise every branch
            anchor = pts[int(rng.integers(count))]
            rect = rect_between(x0, anchor)
            probe = rect.lo + rng.random(d) * (rect.hi - rect.lo)
        k = int(rng.integers(1, k_max + 1))
        rep = check_assumptions(config, x0, k, probe)
        rows.append({"instance": inst, "n_points": count, "k": k, "dim": d,
                     "locality_ok": int(not rep.locality_failures),
                     "monotonicity_ok": int(not rep.monotonicity_failures),
                     "outside_unchanged_ok": int(not rep.outside_unchanged_failures),
                     "add_stability_checked": rep.add_stability_checked,
                     "add_stability_ok": int(not rep.add_stability_failures)})
    return rows


_RUNNERS = {
    "clt-rate": _run_clt_rate,
    "pnn-count": _run_pnn_count,
    "bias-decay": _run_bias_decay,
    "tail-calibration": _run_tail_calibration,
    "concentration": _run_concentration,
    "lower-bound-fit": _run_lower_bound_fit,
    "assumption-audit": _run_assumption_audit,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(path: Path, columns: tuple, rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n")


def _write_plot(cfg: ExperimentConfig, rows: list[dict], path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    exp = cfg.experiment
    if exp in ("clt-rate", "bias-decay", "pnn-count", "concentration"):
        metric = {"clt-rate": "d_k", "bias-decay": "bias", "pnn-count": "mean_L",
                  "concentration": "fraction_below_half"}[exp]
        for k in sorted({row["k"] for row in rows}):
            pts = [(row["n"], row[metric]) for row in rows if row["k"] == k]
            xs, ys = zip(*sorted(pts))
            ax.plot(xs, ys, "o-", label=f"k={k}")
        ax.set_xscale("log")
        if exp in ("clt-rate", "bias-decay"):
            ax.set_yscale("log")
        ax.set_xlabel("intensity n")
        ax.set_ylabel(metric)
        ax.legend()
    elif exp == "lower-bound-fit":
        xs = [row["k"] for row in rows]
        ys = [row["integral_estimate"] for row in rows]
        ax.loglog(xs, ys, "o", label="estimates")
        slope = rows[0]["fitted_exponent"]
        c0 = ys[0] / xs[0] ** slope
        ax.loglog(xs, [c0 * x ** slope for x in xs], "--",
                  label=f"fit slope {slope:.2f}")
        ax.set_xlabel("k")
        ax.set_ylabel("integral estimate")
        ax.legend()
    else:
        metric = "z_score" if exp == "tail-calibration" else "locality_ok"
        xs = list(range(len(rows)))
        ax.plot(xs, [row[metric] for row in rows], "o")
        ax.set_xlabel("case")
        ax.set_ylabel(metric)
    ax.set_title(exp)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Execute the configured experiment and write its output files."""
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigError("; ".join(report.findings))
    started = time.time()
    rows = _RUNNERS[cfg.experiment](cfg)
    cfg.output.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.output / "results.csv", _CSV_COLUMNS[cfg.experiment], rows)
    meta = {
        "experiment": cfg.experiment,
        "version": __version__,
        "seed": cfg.seed,
        "reps": cfg.reps,
        "workers": resolve_workers(cfg.workers),
        "workers_env_var": WORKERS_ENV_VAR,
        "rows": len(rows),
        "wall_time_s": round(time.time() - started, 3),
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": cfg.raw,
        "warnings": report.warnings,
    }
    (cfg.output / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if cfg.plot:
        _write_plot(cfg, rows, cfg.output / "plot.svg")
    return cfg.output / "results.csv"


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnnforest",
        description="Monte Carlo experiments for potential-nearest-neighbor forest prediction.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config")
    val_p = sub.add_parser("validate", help="check a config without running it")
    for p in (run_p, val_p):
        p.add_argument("config", help="path to an INI experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config entry")
        p.add_argument("--reps", type=int, help="override [experiment] reps")
        p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--output", help="override [experiment] output directory")
        p.add_argument("--workers", type=int,
                       help=f"override worker count (default: ${WORKERS_ENV_VAR} or CPU count)")
    run_p.add_argument("--plot", action="store_true", help="also write plot.svg")

    sub.add_parser("list-experiments", help="show the experiment catalog")
    return parser


def _apply_flag_overrides(args) -> list[str]:
    overrides = list(args.overrides)
    for key in ("reps", "seed", "output", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"experiment.{key}={value}")
    if getattr(args, "plot", False):
        overrides.append("experiment.plot=true")
    return overrides


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "list-experiments":
        width = max(len(name) for name in EXPERIMENTS)
        for name, desc in EXPERIMENTS.items():
            print(f"{name:<{width}}  {desc}")
            print(f"{'':<{width}}  columns: {', '.join(_CSV_COLUMNS[name])}")
        return 0

    try:
        cfg = load_config(args.config, _apply_flag_overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        report = validate_config(cfg)
        print(f"experiment: {cfg.experiment}")
        for line in report.findings:
            print(f"finding: {line}")
        for line in report.warnings:
            print(f"warning: {line}")
        print(report.cost_note)
        print("verdict: " + ("rejected" if report.findings else "ok"))
        return 0

    try:
        csv_path = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StandardizationError, QuadratureError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4
    print(csv_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
