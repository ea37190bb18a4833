"""Radial Dirichlet eigenbasis of the unit disc.

The eigenfunctions are ``e_n(r) = J0(z_n r) / ||J0(z_n .)||`` where ``z_n`` is
the n-th positive zero of J0 and the norm is the L^2 norm over the disc,
``||f||^2 = 2 pi int_0^1 |f(r)|^2 r dr``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import golden

__all__ = [
    "BesselBasis",
    "QuadratureError",
    "asymptotic_exponent_fit",
    "bessel_j0",
    "bessel_j1",
    "bessel_zeros",
    "build_basis",
    "default_quadrature_order",
    "export_norms_csv",
    "lp_norm",
    "scaling_counterexample",
]

_SERIES_MAX = 4.0
_HANKEL_MIN = 25.0
_MILLER_START = 80
_HANKEL_TERMS = 24


class QuadratureError(ValueError):
    """Raised when a quadrature grid cannot certify orthonormality."""


def _series(x, order):
    # sum_k (-1)^k (x/2)^(2k+order) / (k! (k+order)!)
    q = -(x * x) / 4.0
    term = np.ones_like(x) if order == 0 else x / 2.0
    total = term.copy()
    for k in range(1, 40):
        term = term * q / (k * (k + order))
        total = total + term
    return total


def _miller(x):
    """J0 and J1 by backward recurrence normalized with J0 + 2 sum J_2k = 1."""
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    j0 = j1 = None
    for k in range(_MILLER_START, 0, -1):
        j_prev = (2.0 * k / x) * j_cur - j_next
        if k % 2 == 0:
            norm += 2.0 * j_cur
        if k == 1:
            j1 = j_cur
            j0 = j_prev
        j_next, j_cur = j_cur, j_prev
    norm += j0
    return j0 / norm, j1 / norm


def _hankel(x, order):
    mu = 4.0 * order * order
    p = np.ones_like(x)
    q = np.zeros_like(x)
    coef = 1.0
    xk = np.ones_like(x)
    for k in range(1, 2 * _HANKEL_TERMS):
        coef *= (mu - (2 * k - 1) ** 2) / (k * 8.0)
        xk = xk * x
        term = coef / xk
        if k % 2 == 1:
            q = q + (term if (k // 2) % 2 == 0 else -term)
        else:
            p = p + (term if (k // 2) % 2 == 0 else -term)
    # chi = x - (order/2 + 1/4) pi, expanded so x itself is never shifted
    c, s = np.cos(x), np.sin(x)
    if order == 0:
        cos_chi, sin_chi = (c + s) / math.sqrt(2.0), (s - c) / math.sqrt(2.0)
    else:
        cos_chi, sin_chi = (s - c) / math.sqrt(2.0), -(c + s) / math.sqrt(2.0)
    return np.sqrt(2.0 / (math.pi * x)) * (p * cos_chi - q * sin_chi)


def _bessel(x, order):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("Bessel argument must be finite")
    if np.any(x < 0):
        raise ValueError("Bessel argument must be nonnegative")
    out = np.empty_like(x)
    small = x <= _SERIES_MAX
    large = x > _HANKEL_MIN
    mid = ~(small | large)
    if small.any():
        out[small] = _series(x[small], order)
    if mid.any():
        out[mid] = _miller(x[mid])[order]
    if large.any():
        out[large] = _hankel(x[large], order)
    return out


def bessel_j0(x):
    """Zero-order Bessel function of the first kind for x >= 0.

    Power series below 4, Miller backward recurrence up to 25 and the Hankel
    asymptotic expansion beyond; absolute error is below 1e-15 in practice.
    """
    out = _bessel(x, 0)
    return float(out) if out.ndim == 0 else out


def bessel_j1(x):
    out = _bessel(x, 1)
    return float(out) if out.ndim == 0 else out


def bessel_zeros(count):
    """First ``count`` positive zeros of J0, increasing.

    Each zero is bracketed in ((n-1) pi, (n+1/4) pi), bisected to 1e-6 and
    finished with Newton steps using J0' = -J1.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n = np.arange(1, count + 1, dtype=float)
    lo = (n - 1.0) * math.pi
    hi = (n + 0.25) * math.pi
    f_lo = bessel_j0(lo)
    while np.max(hi - lo) > 1e-6:
        mid = 0.5 * (lo + hi)
        f_mid = bessel_j0(mid)
        same = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(same, mid, lo)
        f_lo = np.where(same, f_mid, f_lo)
        hi = np.where(same, hi, mid)
    z = 0.5 * (lo + hi)
    for _ in range(8):
        step = bessel_j0(z) / bessel_j1(z)  # Newton: z - f/f', f' = -J1
        z = z + step
        if np.max(np.abs(step)) < 1e-15 * np.max(z):
            break
    return z


def default_quadrature_order(N):
    return 4 * N + 64


def _gauss_legendre_unit(Q):
    x, w = np.polynomial.legendre.leggauss(Q)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class BesselBasis:
    """Normalized eigenfunctions sampled on a Gauss-Legendre grid of [0, 1].

    ``eigen_samples[n-1, q] = e_n(r_q)``. Instances are read-only after
    construction and can be shared between threads.
    """

    N: int
    zeros: np.ndarray
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    eigen_samples: np.ndarray
    l2_raw_norms: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def Q(self):
        return len(self.quad_nodes)

    @property
    def disc_weights(self):
        """Weights for int_Theta f = sum_q disc_weights[q] f(r_q) (radial f)."""
        if "disc_weights" not in self._cache:
            self._cache["disc_weights"] = 2.0 * math.pi * self.quad_weights * self.quad_nodes
        return self._cache["disc_weights"]

    @property
    def projector(self):
        """(Q, N) matrix P with <f, e_n> = (f_q @ P)[n-1]."""
        if "projector" not in self._cache:
            self._cache["projector"] = (self.eigen_samples * self.disc_weights).T.copy()
        return self._cache["projector"]

    def derivative_samples(self):
        """Table of e_n'(r_q) = -z_n J1(z_n r_q) / ||J0(z_n .)||."""
        if "derivative" not in self._cache:
            arg = np.outer(self.zeros, self.quad_nodes)
            self._cache["derivative"] = (
                -self.zeros[:, None] * bessel_j1(arg) / self.l2_raw_norms[:, None]
            )
        return self._cache["derivative"]

    def synthesize(self, a):
        """Values u(r_q) of u = sum a_n e_n; ``a`` may carry leading batch axes."""
        a = np.asarray(a)
        return a @ self.eigen_samples[: a.shape[-1]]

    def project(self, f_q, N=None):
        N = self.N if N is None else N
        return f_q @ self.projector[:, :N]

    def integrate(self, f_q):
        return f_q @ self.disc_weights

    def gram(self):
        return (self.eigen_samples * self.disc_weights) @ self.eigen_samples.T

    def truncated(self, N):
        """Basis restricted to the first N modes on the same grid."""
        if N > self.N:
            raise ValueError(f"cannot truncate a {self.N}-mode basis to {N} modes")
        if N == self.N:
            return self
        return BesselBasis(
            N=N,
            zeros=self.zeros[:N],
            quad_nodes=self.quad_nodes,
            quad_weights=self.quad_weights,
            eigen_samples=self.eigen_samples[:N],
            l2_raw_norms=self.l2_raw_norms[:N],
        )


def build_basis(N, Q=None, *, tol=1e-9):
    """Build the first N disc eigenfunctions on a Q-point Gauss-Legendre grid.

    Raises QuadratureError naming the first (m, n) pair whose quadrature inner
    product deviates from delta_mn by more than ``tol``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    Q = default_quadrature_order(N) if Q is None else int(Q)
    r, w = _gauss_legendre_unit(Q)
    z = bessel_zeros(N)
    raw = bessel_j0(np.outer(z, r))
    norms = np.sqrt(2.0 * math.pi * (raw * raw) @ (w * r))
    basis = BesselBasis(
        N=N,
        zeros=z,
        quad_nodes=r,
        quad_weights=w,
        eigen_samples=raw / norms[:, None],
        l2_raw_norms=norms,
    )
    dev = np.abs(basis.gram() - np.eye(N))
    bad = np.argwhere(dev > tol)
    if len(bad):
        m, n = bad[0] + 1
        raise QuadratureError(
            f"Q={Q} too small: |<e_{m}, e_{n}> - delta| = {dev[m - 1, n - 1]:.3e} > {tol:g}"
        )
    return basis


def _linf(basis, n):
    zn, norm = basis.zeros[n - 1], basis.l2_raw_norms[n - 1]
    grid = np.concatenate(([0.0], basis.quad_nodes, [1.0]))
    vals = np.abs(bessel_j0(zn * grid))
    k = int(np.argmax(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    best = vals[k]
    if hi > lo:
        r_star = golden(lambda r: -abs(bessel_j0(zn * min(max(r, lo), hi))), brack=(lo, hi))
        best = max(best, abs(bessel_j0(zn * min(max(r_star, lo), hi))))
    return best / norm


def lp_norm(basis, n, p):
    """||e_n||_{L^p(disc)} for 1 <= p <= inf (n is 1-based)."""
    if not 1 <= n <= basis.N:
        raise ValueError(f"mode index {n} outside 1..{basis.N}")
    if p < 1:
        raise ValueError("p must be >= 1")
    if math.isinf(p):
        return _linf(basis, n)
    vals = np.abs(basis.eigen_samples[n - 1]) ** p
    return float(basis.integrate(vals) ** (1.0 / p))


def _loglog_fit(values, indices):
    x = np.log(np.asarray(indices, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - np.sum(resid**2) / ss_tot
    return float(slope), float(r2)


def asymptotic_exponent_fit(values, indices):
    """Least-squares slope and r^2 of log(values) against log(indices)."""
    values = np.asarray(values, dtype=float)
    indices = np.asarray(indices, dtype=float)
    if len(values) != len(indices):
        raise ValueError("values and indices differ in length")
    if len(values) < 10:
        raise ValueError("need at least 10 points for an exponent fit")
    if np.any(values <= 0) or np.any(indices <= 0):
        raise ValueError("values and indices must be positive")
    return _loglog_fit(values, indices)


def _bump(r):
    r = np.asarray(r, dtype=float)
    inside = r < 0.5
    out = np.zeros_like(r)
    d = 1.0 - 4.0 * r[inside] ** 2
    out[inside] = np.exp(-1.0 / d)
    return out


def _bump_derivative(r):
    r = np.asarray(r, dtype=float)
    inside = r < 0.5
    out = np.zeros_like(r)
    d = 1.0 - 4.0 * r[inside] ** 2
    out[inside] = np.exp(-1.0 / d) * (-8.0 * r[inside] / d**2)
    return out


def scaling_counterexample(lambdas, *, order=400):
    """Norms of v_lambda(x) = v(lambda x) for the radial bump exp(-1/(1-4r^2)).

    Returns ``(table, exponents)`` where each table row is
    ``(lambda, L4, L2, H1)`` and ``exponents`` maps norm name to the fitted
    power of lambda.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 1) or np.any(np.diff(lambdas) <= 0):
        raise ValueError("lambda grid must be increasing and >= 1")
    x, w = _gauss_legendre_unit(order)
    rows = []
    for lam in lambdas:
        # v_lambda is supported in r < 1/(2 lambda); integrate over the support only
        R = 0.5 / lam
        r, wr = R * x, R * w
        dw = 2.0 * math.pi * wr * r
        v = _bump(lam * r)
        dv = lam * _bump_derivative(lam * r)
        l2 = math.sqrt(dw @ v**2)
        l4 = (dw @ v**4) ** 0.25
        h1 = math.sqrt(l2**2 + dw @ dv**2)
        rows.append((float(lam), l4, l2, h1))
    table = np.array(rows)
    exponents = {}
    if len(lambdas) >= 2:
        for col, name in ((1, "L4"), (2, "L2"), (3, "H1")):
            exponents[name] = _loglog_fit(table[:, col], table[:, 0])[0]
    return table, exponents


def export_norms_csv(basis, path):
    """Write (n, z_n, L2, L4, Linf) rows with 15 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "z_n", "L2", "L4", "Linf"])
        for n in range(1, basis.N + 1):
            vals = (basis.zeros[n - 1], lp_norm(basis, n, 2), lp_norm(basis, n, 4), lp_norm(basis, n, math.inf))
            writer.writerow([n] + [f"{v:.15g}" for v in vals])
    return path
