"""Command-line front end: ``gibbsnls <experiment> [flags] [key=value ...]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .reporting import Report, atomic_write, resolve_workers

__all__ = ["RunConfig", "ConfigError", "EXPERIMENTS", "main", "parse_config", "run"]


class ConfigError(ValueError):
    pass


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


_COMMON = {"seed": (int, 0), "out": (str, "out"), "workers": (int, 0), "format": (str, "csv")}
_MODEL = {"nonlinearity": (str, "saturated"), "alpha": (float, 2.0), "beta": (float, 2.0)}

# experiment -> key -> (parser, default)
EXPERIMENTS = {
    "bessel-verify": {"N": (int, 64), "N_asym": (int, 200)},
    "sample": {**_MODEL, "N": (int, 32), "count": (int, 10000), "mode": (str, "importance"), "s": (float, None)},
    "evolve": {
        **_MODEL,
        "nonlinearity": (str, "pure_quartic"),
        "N": (int, 8),
        "dt": (float, 1e-3),
        "t": (float, 1.0),
        "integrator": (str, "implicit_midpoint"),
        "stride": (int, 100),
        "fp_tol": (float, 1e-12),
        "fp_max_iters": (int, 100),
        "s": (float, None),
    },
    "invariance": {
        **_MODEL,
        "nonlinearity": (str, "pure_quartic"),
        "N": (int, 8),
        "dt": (float, 1e-3),
        "t": (float, 1.0),
        "t_values": (_floats, [0.1, 0.5, 1.0]),
        "count": (int, 5000),
        "integrator": (str, "implicit_midpoint"),
        "s": (float, None),
    },
    "tails": {"samples": (int, 10**6), "lambdas": (_floats, [1.0, 2.0, 3.0]), "max_card": (int, 20)},
    "vconv": {**_MODEL, "N_list": (_ints, [8, 16, 32, 64]), "samples": (int, 10000)},
    "sphere-gamma": {"max_index": (int, 20)},
    "picard": {"sigma": (float, 0.4), "beta": (float, 0.95), "N_max": (_ints, [32, 64, 128])},
    "ihp": {"sigma": (float, 0.4), "beta": (float, 0.95), "alphas": (_floats, [10.0, 100.0, 1000.0, 10000.0]),
            "n_max": (int, 10**6)},
    "v2": {"sigma": (float, 0.4), "N_list": (_ints, [16, 32, 64]), "t": (float, 1.0), "samples": (int, 200),
           "mode": (str, "fixed_time_Hsigma")},
}


@dataclass
class RunConfig:
    experiment: str
    params: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.params["seed"]

    @property
    def out(self):
        return Path(self.params["out"])

    def canonical(self):
        def enc(v):
            if isinstance(v, list):
                return ",".join(enc(x) for x in v)
            return repr(v) if isinstance(v, float) else str(v)

        lines = [f"experiment={self.experiment}"]
        lines += [f"{k}={enc(v)}" for k, v in sorted(self.params.items()) if k not in ("out", "workers")]
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _read_kv(path):
    pairs = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def _validate(exp, p):
    from .measure import check_s
    from .nonlinearity import FAMILIES

    def need(cond, key, what):
        if not cond:
            raise ConfigError(f"{key} {what} (got {p[key]!r})")

    if "alpha" in p:
        need(0 < p["alpha"] < 4, "alpha", "must lie in (0, 4)")
        need(2 <= p["beta"] < 4, "beta", "must lie in [2, 4)")
        need(p["nonlinearity"] in FAMILIES[:2], "nonlinearity", f"must be one of {FAMILIES[:2]}")
        if p["nonlinearity"] == "pure_quartic":
            need(p["alpha"] == 2.0, "alpha", "must equal 2 for pure_quartic")
    if p.get("s") is not None:
        try:
            check_s(p["s"], p["alpha"], p["beta"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    for key in ("N", "count", "samples", "max_index", "N_asym", "n_max", "max_card"):
        if key in p:
            need(p[key] >= 1, key, "must be >= 1")
    if exp == "invariance":
        need(p["count"] >= 100, "count", "must be >= 100")
        need(all(0 <= t <= p["t"] for t in p["t_values"]), "t_values", "must lie in [0, t]")
    if "dt" in p:
        need(p["dt"] > 0, "dt", "must be > 0")
        need(math.isfinite(p["t"]), "t", "must be finite")
    if "integrator" in p:
        need(p["integrator"] in ("implicit_midpoint", "strang_splitting"), "integrator",
             "must be implicit_midpoint or strang_splitting")
    if exp == "sample":
        need(p["mode"] in ("importance", "rejection"), "mode", "must be importance or rejection")
    if exp in ("picard", "v2", "ihp"):
        need(p["sigma"] < 0.5, "sigma", "must be < 1/2")
    if exp == "ihp":
        need(0 < p["sigma"], "sigma", "must be > 0")
        need(2 * p["beta"] - 2 * p["sigma"] > 1, "beta", "must satisfy 2*beta - 2*sigma > 1")
    if exp == "v2":
        need(p["mode"] in ("fixed_time_Hsigma", "discrete_Xsigmab"), "mode",
             "must be fixed_time_Hsigma or discrete_Xsigmab")
        need(max(p["N_list"]) <= 64, "N_list", "entries must be <= 64")
    if exp == "sphere-gamma":
        need(p["max_index"] <= 40, "max_index", "must be <= 40")
    need(p["format"] in ("csv", "json"), "format", "must be csv or json")


def parse_config(experiment, path=None, overrides=None):
    """Merge defaults, a key=value file and overrides; validate before returning."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {sorted(EXPERIMENTS)}, got {experiment!r}")
    schema = {**_COMMON, **EXPERIMENTS[experiment]}
    raw = {}
    if path is not None:
        raw.update(_read_kv(path))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} for {experiment}; allowed: {sorted(schema)}")
    params = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                params[key] = conv(raw[key]) if isinstance(raw[key], str) else raw[key]
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw[key]!r}") from None
        else:
            params[key] = list(default) if isinstance(default, list) else default
    _validate(experiment, params)
    return RunConfig(experiment, params)


def _model(p):
    from .nonlinearity import pure_quartic, saturated

    return pure_quartic() if p["nonlinearity"] == "pure_quartic" else saturated(p["alpha"])


def _s(p):
    from .measure import default_s

    return p["s"] if p.get("s") is not None else default_s(p["alpha"], p["beta"])


def _bessel_verify(p, out):
    from .bessel_disc import asymptotic_exponent_fit, bessel_j0, bessel_j1, build_basis, export_norms_csv, lp_norm

    N = p["N"]
    basis = build_basis(max(N, p["N_asym"]))
    small = basis.truncated(N)
    rep = Report("bessel_verify", ["quantity", "value"])
    j0 = float(np.max(np.abs(bessel_j0(small.zeros))))
    gram = float(np.max(np.abs(small.gram() - np.eye(N))))
    rel = float(np.max(np.abs(small.l2_raw_norms / (math.sqrt(math.pi) * np.abs(bessel_j1(small.zeros))) - 1)))
    n = np.arange(1, p["N_asym"] + 1)
    linf = np.array([lp_norm(basis, k, math.inf) for k in n])
    slope_inf = asymptotic_exponent_fit(linf, n)[0]
    slope_l2 = asymptotic_exponent_fit(basis.l2_raw_norms[: len(n)], n)[0]
    for k, v in [("max |J0(z_n)|", j0), ("Gram deviation", gram), ("norm identity deviation", rel),
                 ("Linf slope", slope_inf), ("raw L2 slope", slope_l2)]:
        rep.add(k, v)
    rep.checks = {
        "|J0(z_n)| < 1e-13": j0 < 1e-13,
        "Gram within 1e-9": gram < 1e-9,
        "||J0(z_n .)|| = sqrt(pi)|J1(z_n)| within 1e-10": rel < 1e-10,
        "Linf slope in [0.45, 0.55]": 0.45 <= slope_inf <= 0.55,
        "L2 slope in [-0.55, -0.45]": -0.55 <= slope_l2 <= -0.45,
    }
    export_norms_csv(small, out / "bessel_norms.csv")
    return [rep]


def _sample(p, out):
    from .bessel_disc import build_basis
    from .measure import default_cutoff, sample_gibbs, save_ensemble

    basis = build_basis(p["N"])
    ens = sample_gibbs(_model(p), default_cutoff(basis, p["N"]), basis, p["N"], p["count"], p["seed"],
                       p["mode"], s=_s(p), workers=p["workers"])
    save_ensemble(ens, out)
    rep = Report("sample", ["quantity", "value"])
    rep.add("count", len(ens))
    rep.add("ess", ens.ess)
    rep.checks["ess >= 50"] = ens.ess >= 50
    return [rep]


def _evolve(p, out):
    from .bessel_disc import build_basis
    from .dynamics import FlowConfig, evolve, write_trajectory_csv
    from .measure import free_coefficients

    basis = build_basis(p["N"])
    cfg = FlowConfig(p["dt"], p["t"], p["integrator"], p["fp_tol"], p["fp_max_iters"])
    a0 = free_coefficients(basis, p["N"], p["seed"], [0])[0]
    a1, diag = evolve(_model(p), basis, a0, cfg, stride=p["stride"])
    write_trajectory_csv(diag.trajectory, out / "trajectory.csv")
    diag.to_json(out / "diagnostics.json")
    rep = Report("evolve", ["quantity", "value"])
    rep.add("h_drift", diag.h_drift)
    rep.add("l2_drift", diag.l2_drift)
    rep.checks["l2 drift <= 1e-10"] = diag.l2_drift <= 1e-10
    return [rep]


def _invariance(p, out):
    from .bessel_disc import build_basis
    from .dynamics import FlowConfig
    from .invariance import run_invariance_experiment
    from .measure import default_cutoff

    basis = build_basis(p["N"])
    cfg = FlowConfig(p["dt"], p["t"], p["integrator"])
    rep = run_invariance_experiment(_model(p), default_cutoff(basis, p["N"]), basis, p["N"], p["t_values"],
                                    p["count"], cfg, p["seed"], s=_s(p), workers=p["workers"])
    rep.to_json(out / "invariance.json")
    wrap = Report("invariance", ["t", "observable", "mean0", "mean_t", "stderr", "z", "ks", "ks_p"],
                  rows=[tuple(r[c] for c in ["t", "observable", "mean0", "mean_t", "stderr", "z", "ks", "ks_p"])
                        for r in rep.rows])
    wrap.summary = {"ess_before": rep.ess_before, "ess_after": rep.ess_after, "excluded": rep.excluded}
    wrap.checks = {f"max |z| <= {rep.thresholds['z_max']}": rep.max_abs_z <= rep.thresholds["z_max"],
                   f"min KS p >= {rep.thresholds['p_min']}": rep.min_p >= rep.thresholds["p_min"]}
    return [wrap]


def _tails(p, out):
    from .measure import chisquare_rate_sweep, tail_chisquare_test, tail_subgaussian_test

    c = np.full(4, 0.5)
    return [
        tail_subgaussian_test(c, p["lambdas"], p["samples"], p["seed"]),
        tail_chisquare_test(1, [1, 2, 3, 4, 5, 6], p["samples"], p["seed"] + 1),
        chisquare_rate_sweep(range(1, p["max_card"] + 1), p["samples"], p["seed"] + 2),
    ]


def _vconv(p, out):
    from .bessel_disc import build_basis
    from .measure import vN_convergence

    basis = build_basis(max(p["N_list"]))
    return [vN_convergence(_model(p), basis, p["N_list"], p["samples"], p["seed"])]


def _sphere_gamma(p, out):
    from .sphere_zonal import GammaTensor, gamma_law_check

    GammaTensor.build(p["max_index"]).to_csv(out / "gamma.csv")
    return [gamma_law_check(p["max_index"], seed=p["seed"])]


def _picard(p, out):
    from .sphere_zonal import picard_moment_sums

    return [picard_moment_sums(p["sigma"], p["beta"], p["N_max"])]


def _ihp(p, out):
    from .sphere_zonal import ihp_ratio_report

    return [ihp_ratio_report(p["sigma"], p["beta"], p["alphas"], p["n_max"])]


def _v2(p, out):
    from .sphere_zonal import v2_moment

    rep = v2_moment(p["sigma"], p["N_list"], p["t"], p["samples"], p["seed"], p["mode"])
    inc = rep.column("increment")[1:] if len(rep.rows) > 2 else np.array([])
    if len(inc) >= 2:
        rep.checks["increments decreasing"] = bool(np.all(np.diff(inc) < 0))
        est = rep.column("estimate")
        rep.checks["last value within 10% of previous"] = bool(abs(est[-1] - est[-2]) <= 0.1 * abs(est[-2]))
    return [rep]


_RUNNERS = {
    "bessel-verify": _bessel_verify,
    "sample": _sample,
    "evolve": _evolve,
    "invariance": _invariance,
    "tails": _tails,
    "vconv": _vconv,
    "sphere-gamma": _sphere_gamma,
    "picard": _picard,
    "ihp": _ihp,
    "v2": _v2,
}


def _emit(rep, out, fmt):
    if fmt == "json":
        rep.to_json(out / f"{rep.name}.json")
    else:
        rep.to_csv(out / f"{rep.name}.csv")


def run(config, *, stream=sys.stdout):
    """Execute one experiment; returns the process exit code."""
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    p = dict(config.params)
    p["workers"] = resolve_workers(p["workers"] or None)
    start = time.perf_counter()
    manifest = {
        "experiment": config.experiment,
        "config": config.params,
        "config_sha256": config.digest(),
        "version": __version__,
    }
    try:
        reports = _RUNNERS[config.experiment](p, out)
    except Exception as exc:  # surfaced as a structured record, never swallowed
        err = {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
        atomic_write(out / "error.json", json.dumps(err, indent=2) + "\n")
        manifest.update(wall_time_s=time.perf_counter() - start, verdicts={}, passed=False, error=err["message"])
        atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        print(json.dumps({k: err[k] for k in ("error", "message")}), file=sys.stderr)
        return 2
    verdicts = {f"{r.name}: {k}": bool(v) for r in reports for k, v in r.checks.items()}
    for r in reports:
        _emit(r, out, p["format"])
        print(f"== {r.name}", file=stream)
        print(r.table(), file=stream)
    passed = all(verdicts.values())
    manifest.update(wall_time_s=time.perf_counter() - start, verdicts=verdicts, passed=passed)
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return 0 if passed else 1


def _parser():
    ap = argparse.ArgumentParser(prog="gibbsnls", description="Truncated NLS Gibbs-measure experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name, schema in EXPERIMENTS.items():
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="key=value file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--workers", type=int, help="worker threads (default: $GIBBSNLS_WORKERS or 1)")
        sp.add_argument("--format", choices=["csv", "json"])
        sp.add_argument("overrides", nargs="*", metavar="key=value",
                        help="parameter overrides: " + ", ".join(sorted(schema)))
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            print(json.dumps({"error": "ConfigError", "message": f"expected key=value, got {item!r}"}), file=sys.stderr)
            return 2
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in ("seed", "out", "workers", "format"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = str(val)
    try:
        cfg = parse_config(args.experiment, args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
