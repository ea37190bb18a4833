"""Galerkin-truncated NLS flow on the first N disc eigenmodes.

Coefficients are the a-coordinates of ``u = sum a_n e_n``. Every routine
accepts a single vector of shape (N,) or a batch of shape (S, N); batches
are advanced in lockstep so one dense matrix product serves all samples.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .measure import SpectralField, integral_V_batch
from .nonlinearity import force
from .reporting import atomic_write, fmt_real

__all__ = [
    "FlowConfig",
    "FlowDiagnostics",
    "INTEGRATORS",
    "StepFailure",
    "divergence",
    "evolve",
    "evolve_batch",
    "hamiltonian",
    "hamiltonian_batch",
    "nonlinear_projection",
    "rhs",
    "step_implicit_midpoint",
    "step_strang",
    "vector_field",
    "write_trajectory_csv",
]

INTEGRATORS = ("implicit_midpoint", "strang_splitting")
MAX_HALVINGS = 4
STRANG_GUARD = math.pi / 4.0


class StepFailure(RuntimeError):
    """Fixed-point iteration did not converge; ``residual`` holds the last update size."""

    def __init__(self, message, residual, rows=None):
        super().__init__(message)
        self.residual = residual
        self.rows = rows


@dataclass(frozen=True)
class FlowConfig:
    dt: float
    t_final: float
    integrator: str = "implicit_midpoint"
    fp_tol: float = 1e-12
    fp_max_iters: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not math.isfinite(self.t_final):
            raise ValueError("t_final must be finite")
        if not self.fp_tol > 0:
            raise ValueError(f"fp_tol must be > 0, got {self.fp_tol}")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be >= 1")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")


@dataclass
class FlowDiagnostics:
    """Conservation diagnostics of one (batched) run.

    ``h_drift`` and ``l2_drift`` are maxima over time and samples; the
    per-sample arrays keep the time maxima for each row.
    """

    h_drift: float = 0.0
    l2_drift: float = 0.0
    fp_iterations: dict = field(default_factory=dict)
    h_drift_per_sample: np.ndarray = None
    l2_drift_per_sample: np.ndarray = None
    failed: np.ndarray = None
    dt_used: np.ndarray = None
    steps: int = 0

    def to_dict(self):
        return {
            "h_drift": self.h_drift,
            "l2_drift": self.l2_drift,
            "fp_iterations": {str(k): int(v) for k, v in sorted(self.fp_iterations.items())},
            "failed": int(np.sum(self.failed)) if self.failed is not None else 0,
            "dt_used": sorted({float(x) for x in np.atleast_1d(self.dt_used)})
            if self.dt_used is not None
            else [],
            "steps": self.steps,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            atomic_write(path, text)
        return text


def _coeffs(u):
    if isinstance(u, SpectralField):
        return u.a
    return np.asarray(u, dtype=complex)


def nonlinear_projection(model, basis, a):
    """<F(u), e_n> on the quadrature grid for n <= N."""
    a = np.asarray(a, dtype=complex)
    N = a.shape[-1]
    u = a @ basis.eigen_samples[:N]
    return force(model, u) @ basis.projector[:, :N]


def vector_field(model, basis, a):
    """da/dt = -i (z^2 a + <F(u), e_n>)."""
    a = np.asarray(a, dtype=complex)
    z2 = basis.zeros[: a.shape[-1]] ** 2
    return -1j * (z2 * a + nonlinear_projection(model, basis, a))


def rhs(model, basis, u):
    """Time derivative of ``u`` under the truncated flow (same container type as ``u``)."""
    d = vector_field(model, basis, _coeffs(u))
    if isinstance(u, SpectralField):
        return SpectralField(d, basis, u.s)
    return d


def hamiltonian_batch(model, basis, a):
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    z2 = basis.zeros[: a.shape[-1]] ** 2
    return np.sum(z2 * np.abs(a) ** 2, axis=-1) + integral_V_batch(model, basis, a)


def hamiltonian(model, basis, u):
    """H_N = sum z_n^2 |a_n|^2 + int V(u)."""
    return float(hamiltonian_batch(model, basis, _coeffs(u)[None, :])[0])


def _fixed_point(update, a_guess, tol, max_iters):
    """Iterate a <- update(a) row-wise to ``tol``; returns (a, iterations, converged, residual)."""
    a = a_guess
    S = a.shape[0]
    iters = np.zeros(S, dtype=int)
    done = np.zeros(S, dtype=bool)
    resid = np.full(S, np.inf)
    for k in range(1, max_iters + 1):
        live = ~done
        new = update(a[live], live)
        r = np.max(np.abs(new - a[live]), axis=-1) / np.maximum(1.0, np.max(np.abs(new), axis=-1))
        a = a.copy()
        a[live] = new
        resid[live] = r
        iters[live] = k
        done[live] = r <= tol
        if done.all():
            break
    return a, iters, done, resid


def _midpoint(model, basis, a0, dt, tol, max_iters, linear):
    """Implicit midpoint for da/dt = -i(L a + NL(a)), L = diag(z^2) or 0.

    Rearranged as (1 + i theta) a1 = (1 - i theta) a0 - i dt NL((a0 + a1)/2)
    with theta = dt L / 2, so the stiff linear part never enters the iteration.
    """
    N = a0.shape[-1]
    theta = 0.5 * dt * basis.zeros[:N] ** 2 if linear else np.zeros(N)
    num = (1 - 1j * theta) * a0
    den = 1 + 1j * theta

    def update(a1, rows):
        mid = 0.5 * (a0[rows] + a1)
        return (num[rows] - 1j * dt * nonlinear_projection(model, basis, mid)) / den

    guess = num / den
    return _fixed_point(update, guess, tol, max_iters)


def _as_batch(u):
    a = _coeffs(u)
    single = a.ndim == 1
    return (a[None, :] if single else a), single


def step_implicit_midpoint(model, basis, u, dt, *, fp_tol=1e-12, fp_max_iters=100):
    """One implicit-midpoint step; raises StepFailure if any row fails to converge."""
    a0, single = _as_batch(u)
    a1, _, ok, resid = _midpoint(model, basis, a0, dt, fp_tol, fp_max_iters, True)
    if not ok.all():
        bad = np.flatnonzero(~ok)
        raise StepFailure(
            f"fixed point did not converge in {fp_max_iters} iterations "
            f"(residual {resid[bad].max():.3e})",
            float(resid[bad].max()),
            bad,
        )
    return _wrap(a1, single, u)


def _rotate(a, basis, t):
    return a * np.exp(-1j * t * basis.zeros[: a.shape[-1]] ** 2)


def step_strang(model, basis, u, dt, *, fp_tol=1e-12, fp_max_iters=100):
    """Half linear rotation, midpoint step of the nonlinear part, half rotation."""
    a0, single = _as_batch(u)
    a1, _, ok, resid = _strang(model, basis, a0, dt, fp_tol, fp_max_iters)
    if not ok.all():
        raise StepFailure("nonlinear substep did not converge", float(resid.max()))
    return _wrap(a1, single, u)


def _strang(model, basis, a0, dt, tol, max_iters):
    half = _rotate(a0, basis, 0.5 * dt)
    mid, iters, ok, resid = _midpoint(model, basis, half, dt, tol, max_iters, False)
    return _rotate(mid, basis, 0.5 * dt), iters, ok, resid


def _wrap(a, single, like):
    a = a[0] if single else a
    if isinstance(like, SpectralField):
        return SpectralField(a, like.basis, like.s)
    return a


def _run(model, basis, a0, t, dt, cfg, save_times, stride, monitor):
    """Fixed-step integration of a batch; failing rows are reported, not raised."""
    nsteps = max(1, int(math.ceil(abs(t) / dt - 1e-9))) if t != 0 else 0
    h = t / nsteps if nsteps else 0.0
    stepper = _strang if cfg.integrator == "strang_splitting" else None
    save_steps = {int(round(abs(ts) / abs(h))) if h else 0: ts for ts in save_times}
    a = a0.copy()
    S = a.shape[0]
    H0 = hamiltonian_batch(model, basis, a)
    n0 = np.sum(np.abs(a) ** 2, axis=-1)
    hd = np.zeros(S)
    ld = np.zeros(S)
    failed = np.zeros(S, dtype=bool)
    resid = np.zeros(S)
    hist = Counter()
    snaps = {}
    traj = [(0.0, a.copy())] if stride else None
    if 0 in save_steps:
        snaps[save_steps[0]] = a.copy()
    for k in range(1, nsteps + 1):
        live = ~failed
        if stepper is None:
            new, iters, ok, r = _midpoint(model, basis, a[live], h, cfg.fp_tol, cfg.fp_max_iters, True)
        else:
            new, iters, ok, r = stepper(model, basis, a[live], h, cfg.fp_tol, cfg.fp_max_iters)
        hist.update(iters.tolist())
        idx = np.flatnonzero(live)
        failed[idx[~ok]] = True
        resid[idx[~ok]] = r[~ok]
        a[idx[ok]] = new[ok]
        if monitor and (k % monitor == 0 or k == nsteps):
            live = ~failed
            Hk = hamiltonian_batch(model, basis, a[live])
            hd[live] = np.maximum(hd[live], np.abs(Hk - H0[live]) / (1.0 + np.abs(H0[live])))
            nk = np.sum(np.abs(a[live]) ** 2, axis=-1)
            ld[live] = np.maximum(ld[live], np.abs(nk - n0[live]) / np.maximum(n0[live], 1e-300))
        if stride and k % stride == 0:
            traj.append((k * h, a.copy()))
        if k in save_steps:
            snaps[save_steps[k]] = a.copy()
    return a, hd, ld, failed, resid, hist, snaps, traj, nsteps


def evolve_batch(model, basis, a0, config, *, save_times=(), stride=0, monitor=1):
    """Evolve rows of ``a0`` to ``config.t_final`` (negative times run backward).

    Rows whose fixed point fails are retried from the start with dt halved,
    at most four times; rows still failing come back as NaN with
    ``diagnostics.failed`` set. ``save_times`` must be multiples of the step.
    Returns ``(a_final, diagnostics, snapshots, trajectory)``.
    """
    a0 = np.atleast_2d(np.asarray(a0, dtype=complex))
    S, N = a0.shape
    t = float(config.t_final)
    dt = float(config.dt)
    if config.integrator == "strang_splitting" and N:
        zmax2 = basis.zeros[N - 1] ** 2
        while dt * zmax2 > STRANG_GUARD:
            dt *= 0.5
    out = np.full_like(a0, np.nan)
    hd = np.zeros(S)
    ld = np.zeros(S)
    dt_used = np.full(S, dt)
    hist = Counter()
    snaps = {ts: np.full_like(a0, np.nan) for ts in save_times}
    pending = np.arange(S)
    traj = None
    steps = 0
    for attempt in range(MAX_HALVINGS + 1):
        a, h1, l1, failed, resid, hist1, snap1, traj1, nsteps = _run(
            model, basis, a0[pending], t, dt, config, save_times, stride, monitor
        )
        if traj is None:
            traj = traj1
        steps = max(steps, nsteps)
        hist.update(hist1)
        ok = pending[~failed]
        out[ok] = a[~failed]
        hd[ok] = h1[~failed]
        ld[ok] = l1[~failed]
        dt_used[pending] = dt
        for ts, arr in snap1.items():
            snaps[ts][ok] = arr[~failed]
        pending = pending[failed]
        if not len(pending):
            break
        dt *= 0.5
    failed_mask = np.zeros(S, dtype=bool)
    failed_mask[pending] = True
    good = ~failed_mask
    diag = FlowDiagnostics(
        h_drift=float(hd[good].max()) if good.any() else float("nan"),
        l2_drift=float(ld[good].max()) if good.any() else float("nan"),
        fp_iterations=dict(hist),
        h_drift_per_sample=hd,
        l2_drift_per_sample=ld,
        failed=failed_mask,
        dt_used=dt_used,
        steps=steps,
    )
    return out, diag, snaps, traj


def evolve(model, basis, u0, config, *, stride=0, monitor=1):
    """Phi_N(t_final) u0 for a SpectralField (or a coefficient batch).

    Returns ``(u_final, diagnostics)``; with ``stride > 0`` the diagnostics
    carry a ``trajectory`` list of (t, coefficients) every ``stride`` steps.
    Raises StepFailure if a single trajectory fails after all dt halvings.
    """
    a0, single = _as_batch(u0)
    a, diag, _, traj = evolve_batch(model, basis, a0, config, stride=stride, monitor=monitor)
    if single and diag.failed[0]:
        raise StepFailure(
            f"step failed after {MAX_HALVINGS} dt halvings", float("nan"), np.array([0])
        )
    diag.trajectory = traj
    return _wrap(a, single, u0), diag


def write_trajectory_csv(trajectory, path=None, row=0):
    """CSV rows (t, n, Re a_n, Im a_n) of one trajectory row."""
    lines = ["t,n,re,im"]
    for t, a in trajectory:
        a = np.atleast_2d(a)[row]
        for n, v in enumerate(a, start=1):
            lines.append(f"{fmt_real(t)},{n},{fmt_real(v.real)},{fmt_real(v.imag)}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        atomic_write(path, text)
    return text


def divergence(model, basis, a, *, h=1e-4):
    """Divergence of the vector field in real coordinates (Re a, Im a), central differences."""
    a = np.asarray(a, dtype=complex)
    N = a.shape[-1]
    eye = np.eye(N)
    plus = np.concatenate([a + h * eye, a + 1j * h * eye])
    minus = np.concatenate([a - h * eye, a - 1j * h * eye])
    dp = vector_field(model, basis, plus)
    dm = vector_field(model, basis, minus)
    k = np.arange(N)
    d_re = (dp[k, k].real - dm[k, k].real) / (2 * h)
    d_im = (dp[N + k, k].imag - dm[N + k, k].imag) / (2 * h)
    return float(np.sum(d_re) + np.sum(d_im))
