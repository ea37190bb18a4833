"""Monte Carlo checks that the weighted ensemble law is preserved by the truncated flow."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .dynamics import FlowConfig, evolve_batch
from .measure import SpectralField, integral_V_batch, sample_gibbs
from .reporting import atomic_write, fmt_real

__all__ = [
    "InvarianceError",
    "InvarianceReport",
    "OBSERVABLES",
    "bootstrap_stderr",
    "liouville_volume_check",
    "null_calibration",
    "observable",
    "observable_batch",
    "run_invariance_experiment",
    "weighted_ks",
    "weighted_ks_test",
]

BOOTSTRAP_RESAMPLES = 1000
MAX_FAILURE_FRACTION = 0.01
Z_MAX = 3.0
P_MIN = 0.01


class InvarianceError(RuntimeError):
    pass


def _c(a, basis, s):
    return basis.zeros[: a.shape[-1]] ** s * a


# each entry maps (model, basis, s, coefficient batch) to a value per row
OBSERVABLES = {
    "l2_sq": lambda m, b, s, a: np.sum(np.abs(a) ** 2, axis=-1),
    "hsigma_sq": lambda m, b, s, a: np.sum(np.abs(_c(a, b, s)) ** 2, axis=-1),
    "abs_c1_sq": lambda m, b, s, a: np.abs(_c(a, b, s)[..., 0]) ** 2,
    "abs_c2_sq": lambda m, b, s, a: np.abs(_c(a, b, s)[..., 1]) ** 2,
    "abs_c3_sq": lambda m, b, s, a: np.abs(_c(a, b, s)[..., 2]) ** 2,
    "re_c1": lambda m, b, s, a: _c(a, b, s)[..., 0].real,
    "int_V": lambda m, b, s, a: integral_V_batch(m, b, a),
}


def _lookup(name):
    if name not in OBSERVABLES:
        raise KeyError(f"unknown observable {name!r}; registered: {sorted(OBSERVABLES)}")
    return OBSERVABLES[name]


def observable_batch(name, model, basis, s, coeffs):
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    fn = _lookup(name)
    if name.startswith("abs_c") or name == "re_c1":
        need = int(name[5]) if name.startswith("abs_c") else 1
        if coeffs.shape[-1] < need:
            return np.zeros(coeffs.shape[0])
    return np.asarray(fn(model, basis, s, coeffs), dtype=float)


def observable(name, u: SpectralField, model=None):
    """Scalar observable of one field; ``int_V`` needs ``model``."""
    if name == "int_V" and model is None:
        raise ValueError("int_V needs a nonlinearity model")
    return float(observable_batch(name, model, u.basis, u.s, u.a[None, :])[0])


def _bootstrap_indices(seed, n, resamples, stream=streams.BOOTSTRAP):
    u = streams.sample_uniforms(seed, np.arange(resamples * n), stream=stream)
    return np.minimum((u * n).astype(np.int64), n - 1).reshape(resamples, n)


def bootstrap_stderr(values, weights, idx):
    """Bootstrap standard error of the self-normalized weighted mean."""
    w = weights[idx]
    means = np.sum(w * values[idx], axis=1) / np.sum(w, axis=1)
    return float(np.std(means, ddof=1))


def _wmean(values, weights):
    return float(np.sum(weights * values) / np.sum(weights))


def weighted_ks(x, wx, y, wy):
    """sup |F_x - F_y| of two weighted empirical distribution functions."""
    vals = np.concatenate([x, y])
    order = np.argsort(vals, kind="stable")
    sgn = np.concatenate([wx / np.sum(wx), -wy / np.sum(wy)])[order]
    cdf = np.cumsum(sgn)
    # only evaluate after the last of a run of ties
    last = np.append(np.diff(vals[order]) != 0, True)
    return float(np.max(np.abs(cdf[last]))) if len(cdf) else 0.0


def weighted_ks_test(x, wx, y, wy, seed, resamples=BOOTSTRAP_RESAMPLES):
    """Weighted KS statistic and bootstrap p-value.

    The null resamples pooled (value, weight) pairs uniformly and splits them
    into groups of the original sizes.
    """
    d = weighted_ks(x, wx, y, wy)
    vals = np.concatenate([x, y])
    wts = np.concatenate([wx, wy])
    n, m = len(x), len(y)
    idx = _bootstrap_indices(seed, n + m, resamples, stream=streams.BOOTSTRAP + 1)
    hits = 0
    for row in idx:
        a, b = row[:n], row[n:]
        if np.sum(wts[a]) <= 0 or np.sum(wts[b]) <= 0:
            continue
        hits += weighted_ks(vals[a], wts[a], vals[b], wts[b]) >= d
    return d, (1 + hits) / (1 + resamples)


@dataclass
class InvarianceReport:
    observables: list
    t_values: list
    rows: list = field(default_factory=list)
    ess_before: float = 0.0
    ess_after: float = 0.0
    excluded: int = 0
    count: int = 0
    flow: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=lambda: {"z_max": Z_MAX, "p_min": P_MIN})

    @property
    def max_abs_z(self):
        return max((abs(r["z"]) for r in self.rows), default=0.0)

    @property
    def min_p(self):
        return min((r["ks_p"] for r in self.rows), default=1.0)

    @property
    def passed(self):
        return self.max_abs_z <= self.thresholds["z_max"] and self.min_p >= self.thresholds["p_min"]

    def to_dict(self):
        return {
            "observables": self.observables,
            "t_values": self.t_values,
            "rows": self.rows,
            "ess_before": self.ess_before,
            "ess_after": self.ess_after,
            "excluded": self.excluded,
            "count": self.count,
            "flow": self.flow,
            "thresholds": self.thresholds,
            "max_abs_z": self.max_abs_z,
            "min_p": self.min_p,
            "passed": self.passed,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            atomic_write(path, text)
        return text

    def to_csv(self, path=None):
        cols = ["t", "observable", "mean0", "mean_t", "stderr", "z", "ks", "ks_p"]
        lines = [",".join(cols)] + [",".join(fmt_real(r[c]) for c in cols) for r in self.rows]
        text = "\n".join(lines) + "\n"
        if path is not None:
            atomic_write(path, text)
        return text

    def table(self):
        head = f"{'t':>5} {'observable':>10} {'mean0':>12} {'mean_t':>12} {'se':>10} {'z':>7} {'KS':>7} {'p':>6}"
        out = [head]
        for r in self.rows:
            out.append(
                f"{r['t']:>5g} {r['observable']:>10} {r['mean0']:>12.6g} {r['mean_t']:>12.6g} "
                f"{r['stderr']:>10.3g} {r['z']:>7.3f} {r['ks']:>7.4f} {r['ks_p']:>6.3f}"
            )
        out.append(f"ESS {self.ess_before:.1f} -> {self.ess_after:.1f}; excluded {self.excluded}/{self.count}")
        out.append(f"[{'PASS' if self.max_abs_z <= Z_MAX else 'FAIL'}] max |z| = {self.max_abs_z:.3f} <= {Z_MAX}")
        out.append(f"[{'PASS' if self.min_p >= P_MIN else 'FAIL'}] min KS p = {self.min_p:.3f} >= {P_MIN}")
        return "\n".join(out)


def _compare(v0, vt, w, idx, seed):
    m0, mt = _wmean(v0, w), _wmean(vt, w)
    se = math.hypot(bootstrap_stderr(v0, w, idx), bootstrap_stderr(vt, w, idx))
    diff = mt - m0
    z = 0.0 if diff == 0 else (diff / se if se > 0 else math.copysign(math.inf, diff))
    ks, p = weighted_ks_test(v0, w, vt, w, seed)
    return {"mean0": m0, "mean_t": mt, "stderr": se, "z": z, "ks": ks, "ks_p": p}


def run_invariance_experiment(
    model,
    chi,
    basis,
    N,
    t_values,
    count,
    flow_config,
    seed,
    *,
    observables=None,
    s=None,
    mode="importance",
    workers=1,
):
    """Draw a weighted ensemble, evolve it, and compare observables at each t with t = 0."""
    if count < 100:
        raise ValueError(f"count must be >= 100, got {count}")
    names = list(observables or OBSERVABLES)
    for nm in names:
        _lookup(nm)
    ens = sample_gibbs(model, chi, basis, N, count, seed, mode, s=s, workers=workers)
    keep = ens.weights > 0
    a0 = ens.coeffs[keep]
    w = ens.weights[keep]
    t_sorted = sorted(float(t) for t in t_values)
    t_max = t_sorted[-1] if t_sorted else 0.0
    snaps = {0.0: a0}
    failed = np.zeros(len(a0), dtype=bool)
    flow_info = {"integrator": flow_config.integrator, "dt": flow_config.dt}
    if t_max > 0:
        cfg = FlowConfig(flow_config.dt, t_max, flow_config.integrator, flow_config.fp_tol, flow_config.fp_max_iters)
        _, diag, got, _ = evolve_batch(model, basis, a0, cfg, save_times=[t for t in t_sorted if t > 0])
        snaps.update(got)
        failed = diag.failed
        flow_info.update(h_drift=diag.h_drift, l2_drift=diag.l2_drift)
    n_fail = int(failed.sum())
    if n_fail > MAX_FAILURE_FRACTION * len(a0):
        raise InvarianceError(f"{n_fail} of {len(a0)} trajectories failed (> 1%)")
    ok = ~failed
    w = w[ok]
    ess_before = ens.ess
    ess_after = float(np.sum(w) ** 2 / np.sum(w * w))
    if ess_after < 50:
        warnings.warn(f"effective sample size {ess_after:.1f} < 50", RuntimeWarning)
    idx = _bootstrap_indices(seed, len(w), BOOTSTRAP_RESAMPLES)
    rep = InvarianceReport(names, t_sorted, ess_before=ess_before, ess_after=ess_after,
                           excluded=n_fail, count=count, flow=flow_info)
    s_eff = ens.s
    base = {nm: observable_batch(nm, model, basis, s_eff, a0[ok]) for nm in names}
    for k, t in enumerate(t_sorted):
        at = snaps[t][ok] if t > 0 else a0[ok]
        for j, nm in enumerate(names):
            vt = observable_batch(nm, model, basis, s_eff, at) if t > 0 else base[nm]
            row = _compare(base[nm], vt, w, idx, seed * 1009 + 31 * k + j)
            rep.rows.append({"t": t, "observable": nm, **row})
    return rep


def null_calibration(values, weights, seed, repetitions=100, z_max=Z_MAX):
    """Fraction of random half-splits of one ensemble with |z| <= z_max."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = len(values)
    zs = []
    for r in range(repetitions):
        u = streams.sample_uniforms(seed, np.arange(n), stream=streams.BOOTSTRAP + 2 + r)
        perm = np.argsort(u, kind="stable")
        a, b = perm[: n // 2], perm[n // 2 : 2 * (n // 2)]
        va, wa, vb, wb = values[a], weights[a], values[b], weights[b]
        ia = _bootstrap_indices(seed + r + 1, len(a), 200)
        se = math.hypot(bootstrap_stderr(va, wa, ia), bootstrap_stderr(vb, wb, ia))
        zs.append((_wmean(vb, wb) - _wmean(va, wa)) / se)
    zs = np.array(zs)
    return float(np.mean(np.abs(zs) <= z_max)), zs


def liouville_volume_check(model, basis, N, u0, t, dt, probe_dim=None, *, h=1e-6, fp_tol=1e-14):
    """|det J - 1| for the flow Jacobian at ``u0`` in real coordinates.

    Forward differences along all 2N real directions; the 2N + 1 copies are
    advanced together with identical step sequences.
    """
    dim = 2 * N
    if probe_dim is not None and probe_dim != dim:
        raise ValueError(f"probe_dim must equal 2N = {dim}")
    a0 = np.asarray(u0.a if isinstance(u0, SpectralField) else u0, dtype=complex)[:N]
    if t == 0:
        return 0.0
    eye = np.eye(N)
    batch = np.concatenate([a0[None, :], a0 + h * eye, a0 + 1j * h * eye])
    cfg = FlowConfig(dt, t, "implicit_midpoint", fp_tol, 200)
    out, diag, _, _ = evolve_batch(model, basis, batch, cfg, monitor=0)
    if diag.failed.any():
        raise InvarianceError("flow failed while probing the Jacobian")
    base = out[0]
    cols = (out[1:] - base) / h
    J = np.concatenate([cols.real, cols.imag], axis=1).T
    return float(abs(np.linalg.det(J) - 1.0))
