"""Zonal analysis on S^3: P_n = sqrt(2/pi) sin(n theta)/sin(theta).

The coupling gamma(n, n1, n2, n3) = int P_n P_n1 P_n2 P_n3 is always an
integer multiple of 2/pi; everything here stores the integer ``m`` and
scales at the very end.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import streams
from .reporting import Report, atomic_write

__all__ = [
    "GammaTensor",
    "PicardSample",
    "ZonalField",
    "compute_v2",
    "compute_v2_batch",
    "gamma",
    "gamma_count",
    "gamma_law_check",
    "gamma_quadrature",
    "ihp_ratio_report",
    "ihp_sum",
    "picard_moment_sums",
    "product_expand",
    "sample_u1",
    "v2_moment",
    "zonal_P",
]

TWO_OVER_PI = 2.0 / math.pi
XSB_T = 1.0
XSB_POINTS = 1 << 10
XSB_B = 0.55


def zonal_P(n, theta):
    """P_n(theta), with the removable singularities at 0 and pi filled in."""
    theta = np.asarray(theta, dtype=float)
    s = np.sin(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sin(n * theta) / s
    # sin(n t)/sin(t) -> n at 0 and (-1)^(n+1) n at pi
    edge = np.abs(s) < 1e-12
    if np.any(edge):
        sign = np.where(np.cos(theta) > 0, 1.0, (-1.0) ** (n + 1))
        out = np.where(edge, sign * n, out)
    return math.sqrt(TWO_OVER_PI) * out


def product_expand(k, l):
    """Indices j with P_k P_l = sqrt(2/pi) sum_j P_j, each of multiplicity one."""
    if k < 1 or l < 1:
        raise ValueError("indices must be >= 1")
    return list(range(abs(k - l) + 1, k + l, 2))


def gamma(n, n1, n2, n3):
    """Integer m with gamma(n, n1, n2, n3) = (2/pi) m, by matching the expansions
    of P_n P_n3 and P_n1 P_n2."""
    left = set(product_expand(n, n3))
    return len(left.intersection(product_expand(n1, n2)))


def gamma_count(n, n1, n2, n3):
    """Vectorized ``gamma``: overlap of two step-2 progressions in closed form."""
    n, n1, n2, n3 = np.broadcast_arrays(*(np.asarray(x, dtype=np.int64) for x in (n, n1, n2, n3)))
    lo = np.maximum(np.abs(n - n3), np.abs(n1 - n2)) + 1
    hi = np.minimum(n + n3, n1 + n2) - 1
    m = np.maximum(0, (hi - lo) // 2 + 1)
    return np.where((n + n3 - n1 - n2) % 2 == 0, m, 0)


def gamma_quadrature(n, n1, n2, n3, *, points=None):
    """gamma by Gauss-Legendre quadrature of int_0^pi P_n P_n1 P_n2 P_n3 sin^2."""
    points = points or 2 * (n + n1 + n2 + n3) + 32
    x, w = np.polynomial.legendre.leggauss(points)
    th = 0.5 * math.pi * (x + 1.0)
    f = zonal_P(n, th) * zonal_P(n1, th) * zonal_P(n2, th) * zonal_P(n3, th) * np.sin(th) ** 2
    return float(0.5 * math.pi * np.dot(w, f))


@dataclass(frozen=True)
class GammaTensor:
    """Dense integer table m[n, n1, n2, n3] for indices 1..max_index (slot 0 unused)."""

    max_index: int
    m: np.ndarray

    @classmethod
    def build(cls, max_index):
        r = np.arange(max_index + 1)
        m = gamma_count(r[:, None, None, None], r[None, :, None, None], r[None, None, :, None], r[None, None, None, :])
        m[0, :, :, :] = m[:, 0, :, :] = m[:, :, 0, :] = m[:, :, :, 0] = 0
        small = np.int16 if 2 * max_index < np.iinfo(np.int16).max else np.int32
        return cls(int(max_index), m.astype(small))

    def __getitem__(self, idx):
        return int(self.m[idx])

    def gamma(self, n, n1, n2, n3):
        return TWO_OVER_PI * self.m[n, n1, n2, n3]

    def nonzero(self):
        return np.argwhere(self.m > 0)

    def to_csv(self, path=None):
        lines = ["n,n1,n2,n3,m"]
        for t in self.nonzero():
            lines.append(",".join(str(int(x)) for x in t) + f",{int(self.m[tuple(t)])}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            atomic_write(path, text)
        return text


def gamma_law_check(max_index, *, seed=0, quad_tuples=50, quad_tol=1e-8, explicit_max=12):
    """Exhaustive integer checks of gamma up to ``max_index`` plus quadrature spot checks."""
    if max_index > 40:
        raise ValueError("max_index must be <= 40")
    T = GammaTensor.build(max_index)
    m = T.m[1:, 1:, 1:, 1:].astype(np.int64)
    r = np.arange(1, max_index + 1)
    I = np.meshgrid(r, r, r, r, indexing="ij")
    rep = Report("gamma_laws", ["check", "violations", "example"])

    def record(name, bad):
        where = np.argwhere(bad)
        ex = "" if not len(where) else "(" + ",".join(str(int(i) + 1) for i in where[0]) + ")"
        rep.add(name, int(bad.sum()), ex)
        rep.checks[name] = not bad.any()

    record("m <= min index", m > np.minimum(np.minimum(I[0], I[1]), np.minimum(I[2], I[3])))
    total = I[0] + I[1] + I[2] + I[3]
    beyond = np.zeros_like(m, dtype=bool)
    for k in range(4):
        beyond |= I[k] > total - I[k]
    record("m = 0 beyond triangle", beyond & (m != 0))
    asym = np.zeros_like(m, dtype=bool)
    for perm in itertools.permutations(range(4)):
        asym |= m != np.transpose(m, perm)
    record("permutation symmetry", asym)
    # explicit set intersection with the (n, n1) x (n2, n3) pairing as an independent route
    k = min(max_index, explicit_max)
    alt = np.zeros((k, k, k, k), dtype=bool)
    for a, b, c, d in itertools.product(range(1, k + 1), repeat=4):
        other = len(set(product_expand(a, b)).intersection(product_expand(c, d)))
        alt[a - 1, b - 1, c - 1, d - 1] = other != m[a - 1, b - 1, c - 1, d - 1]
    record("pairing independence", alt)
    u = streams.sample_uniforms(seed, np.arange(4 * quad_tuples), stream=streams.UNIFORM + 7)
    tuples = 1 + np.minimum((u * max_index).astype(int), max_index - 1).reshape(quad_tuples, 4)
    errs = np.array([abs(gamma_quadrature(*t) - TWO_OVER_PI * T.m[tuple(t)]) for t in tuples])
    bad = np.zeros((quad_tuples,), dtype=bool)
    bad[errs > quad_tol] = True
    worst = int(np.argmax(errs))
    rep.add("quadrature agreement", int(bad.sum()), "(" + ",".join(map(str, tuples[worst])) + ")")
    rep.checks["quadrature agreement"] = not bad.any()
    rep.summary = {
        "max_index": max_index,
        "tuples": int(m.size),
        "max_quadrature_error": float(errs.max()),
        "gamma_1111": TWO_OVER_PI * T.m[1, 1, 1, 1],
    }
    return rep


def _power_tail(p, beta, c, M, terms=60):
    """int_M^inf x^p (1 + c/x^2)^(-beta) dx by the binomial series (|c| < M^2, p < -1)."""
    total, coef = 0.0, 1.0
    for k in range(terms):
        e = p - 2 * k + 1
        term = coef * c**k * M**e / -e
        total += term
        if abs(term) < 1e-17 * abs(total):
            break
        coef *= (-beta - k) / (k + 1)
    return total


def ihp_sum(sigma, beta, alpha, n_max=10**6):
    """sum_n n^(2 sigma) / (1 + |n^2 - alpha|)^beta with an integral bracket for the tail.

    Returns ``(partial, tail_lo, tail_hi, estimate, ratio)``; ``estimate`` uses
    the bracket midpoint and ``ratio = estimate / (1 + |alpha|)^sigma``.
    """
    if not 0 < sigma < 0.5:
        raise ValueError("sigma must lie in (0, 1/2)")
    if not 2 * beta - 2 * sigma > 1:
        raise ValueError(f"divergent sum: need 2*beta - 2*sigma > 1, got {2 * beta - 2 * sigma:g}")
    # past n^2 > 10(1 + |alpha|) the summand is decreasing and the series below converges fast
    if n_max * n_max <= 10.0 * (1.0 + abs(alpha)):
        raise ValueError("n_max^2 must exceed 10 (1 + |alpha|) for the tail bracket")
    n = np.arange(1, n_max + 1, dtype=float)
    partial = float(np.sum(n ** (2 * sigma) / (1.0 + np.abs(n * n - alpha)) ** beta))
    p, c = 2 * sigma - 2 * beta, 1.0 - alpha
    lo = _power_tail(p, beta, c, n_max + 1.0)
    hi = _power_tail(p, beta, c, float(n_max))
    est = partial + 0.5 * (lo + hi)
    return partial, lo, hi, est, est / (1.0 + abs(alpha)) ** sigma


def ihp_ratio_report(sigma, beta, alphas, n_max=10**6, *, spread=3.0):
    """S(alpha) / (1 + |alpha|)^sigma over a grid, with a max/min spread check."""
    rep = Report("ihp", ["alpha", "partial", "tail_lo", "tail_hi", "estimate", "ratio"])
    for a in alphas:
        rep.add(float(a), *ihp_sum(sigma, beta, a, n_max))
    ratio = rep.column("ratio")
    width = (rep.column("tail_hi") - rep.column("tail_lo")) / rep.column("estimate")
    rep.summary = {"sigma": sigma, "beta": beta, "n_max": n_max, "spread": float(ratio.max() / ratio.min())}
    rep.checks["tail bracket width < 1e-3 of the sum"] = bool(np.all(width < 1e-3))
    rep.checks[f"max/min ratio <= {spread}"] = bool(ratio.max() / ratio.min() <= spread)
    return rep


def _i1_by_max(sigma, beta, N):
    """Contributions to the majorant I_1 grouped by the largest index of the tuple."""
    r = np.arange(1, N + 1)
    n1, n2, n3 = r[:, None, None], r[None, :, None], r[None, None, :]
    denom = (n1 * n2 * n3).astype(float) ** 2
    mx13 = np.maximum(np.maximum(n1, n2), n3)
    out = np.zeros(N + 1)
    for n in r:
        m = gamma_count(n, n1, n2, n3)
        omega = n * n - n1 * n1 + n2 * n2 - n3 * n3
        term = (m * m) / ((1.0 + np.abs(omega)) ** beta * denom)
        out += np.bincount(np.maximum(mx13, n).ravel(), weights=(n ** (2 * sigma) * term).ravel(), minlength=N + 1)
    return out * TWO_OVER_PI**2


def _i2(sigma, beta, N):
    r = np.arange(1, N + 1)
    n, n1, n2 = r[:, None, None], r[None, :, None], r[None, None, :]
    # A[n, n2] = sum_n1 gamma(n, n1, n1, n2) / n1^2
    A = np.sum(gamma_count(n, n1, n1, n2) / n1.astype(float) ** 2, axis=1) * TWO_OVER_PI
    nn, mm = r[:, None].astype(float), r[None, :].astype(float)
    w = nn ** (2 * sigma) / (1.0 + np.abs(mm * mm - nn * nn)) ** beta / (mm * mm)
    return float(np.sum(w * A * A))


def picard_moment_sums(sigma, beta, N_max_list):
    """Partial sums of the I_1 and I_2 majorants over indices <= N_max.

    Increments are I(N) - I(N/2) for each N in ``N_max_list``.
    """
    if not sigma < 0.5:
        raise ValueError("sigma must be < 1/2")
    N_list = sorted(int(N) for N in N_max_list)
    Nmax = N_list[-1]
    i1_cum = np.cumsum(_i1_by_max(sigma, beta, Nmax))
    rep = Report("picard_moment_sums", ["N_max", "I1", "I2", "dI1", "dI2"])
    for N in N_list:
        half = N // 2
        i2, i2h = _i2(sigma, beta, N), (_i2(sigma, beta, half) if half else 0.0)
        rep.add(N, float(i1_cum[N]), i2, float(i1_cum[N] - i1_cum[half]), i2 - i2h)
    d1, d2 = rep.column("dI1"), rep.column("dI2")
    rep.checks["I1 increments strictly decreasing"] = bool(np.all(np.diff(d1) < 0))
    rep.checks["I2 increments strictly decreasing"] = bool(np.all(np.diff(d2) < 0))
    rep.summary = {"sigma": sigma, "beta": beta, "first_summand": float(_i1_by_max(sigma, beta, 1)[1])}
    return rep


@dataclass(frozen=True)
class ZonalField:
    """u = sum_{n<=N} b_n P_n on S^3."""

    b: np.ndarray

    @property
    def N(self):
        return len(self.b)

    @property
    def eigenvalues(self):
        n = np.arange(1, self.N + 1)
        return n * n - 1

    @property
    def l2_norm(self):
        return float(np.sqrt(np.sum(np.abs(self.b) ** 2)))

    def values(self, theta):
        theta = np.asarray(theta, dtype=float)
        return sum(bn * zonal_P(n, theta) for n, bn in enumerate(self.b, start=1))


def sample_u1(N, seed, t, *, sample_index=0):
    """Free evolution b_n = (g_n / n) e^(-i t n^2) of the random datum."""
    if N < 1:
        raise ValueError("N must be >= 1")
    g = streams.complex_gaussians(seed, [sample_index], N)[0]
    n = np.arange(1, N + 1)
    return ZonalField(g / n * np.exp(-1j * t * n * n))


@dataclass(frozen=True)
class PicardSample:
    g: np.ndarray
    t: float
    v2_coeffs: np.ndarray

    def hsigma_sq(self, sigma):
        n = np.arange(1, len(self.v2_coeffs) + 1)
        return float(np.sum(n ** (2 * sigma) * np.abs(self.v2_coeffs) ** 2))


def _duhamel_phase(t, omega):
    """E(t, Omega) = int_0^t e^(i Omega tau) d tau."""
    omega = np.asarray(omega, dtype=float)
    safe = np.where(omega == 0, 1.0, omega)
    return np.where(omega == 0, t, np.expm1(1j * safe * t) / (1j * safe))


def _kernel(n, N, t):
    r = np.arange(1, N + 1)
    n1, n2, n3 = r[:, None, None], r[None, :, None], r[None, None, :]
    m = gamma_count(n, n1, n2, n3)
    omega = n * n - n1 * n1 + n2 * n2 - n3 * n3
    return m * _duhamel_phase(t, omega) / (n1 * n2 * n3)


def compute_v2_batch(g, t):
    """v_2(t) coefficients for each row of ``g`` (shape (S, N)); output modes 1..3N-2.

    <v2(t), P_n> = -i e^(-i t n^2) sum gamma g1 conj(g2) g3 / (n1 n2 n3) E(t, Omega).
    """
    g = np.atleast_2d(np.asarray(g, dtype=complex))
    S, N = g.shape
    gt, gbt = g.T, np.conj(g).T
    out = np.zeros((S, max(3 * N - 2, 1)), dtype=complex)
    if t == 0:
        return out
    for n in range(1, 3 * N - 1):
        K = _kernel(n, N, t)
        if not K.any():
            continue
        inner = (K.reshape(N * N, N) @ gt).reshape(N, N, S)  # contract n3
        inner = np.einsum("abs,bs->as", inner, gbt)  # contract conj n2
        out[:, n - 1] = np.einsum("as,as->s", inner, gt)
    n = np.arange(1, out.shape[1] + 1)
    return -1j * TWO_OVER_PI * np.exp(-1j * t * n * n) * out


def compute_v2(N, seed, t, *, sample_index=0):
    g = streams.complex_gaussians(seed, [sample_index], N)[0]
    return PicardSample(g, float(t), compute_v2_batch(g[None, :], t)[0])


def _xsb_norm_sq(g, sigma, b=XSB_B, T=XSB_T, points=XSB_POINTS):
    """Windowed discrete X^{sigma,b} norm of v_2 for each row of ``g``.

    Works in the interaction picture d_n(t) = e^(i t n^2) <v2(t), P_n>, so the
    weight <tau + n^2> becomes <tau> on the transform of d_n.
    """
    S, N = g.shape
    ts = np.linspace(-T, T, points, endpoint=False)
    dt = ts[1] - ts[0]
    psi = 0.5 * (1.0 + np.cos(math.pi * ts / T))
    tau = 2 * math.pi * np.fft.fftfreq(points, d=dt)
    wt = (1.0 + tau * tau) ** b
    r = np.arange(1, N + 1)
    n1, n2, n3 = r[:, None, None], r[None, :, None], r[None, None, :]
    x = g / r
    total = np.zeros(S)
    for n in range(1, 3 * N - 1):
        m = gamma_count(n, n1, n2, n3)
        if not m.any():
            continue
        omega = (n * n - n1 * n1 + n2 * n2 - n3 * n3).ravel()
        keys, inv = np.unique(omega, return_inverse=True)
        E = _duhamel_phase(ts[:, None], keys[None, :])  # (points, distinct omegas)
        for s in range(S):
            amp = (m * x[s][:, None, None] * np.conj(x[s])[None, :, None] * x[s][None, None, :]).ravel()
            A = np.bincount(inv, weights=amp.real, minlength=len(keys)) + 1j * np.bincount(
                inv, weights=amp.imag, minlength=len(keys)
            )
            d = -1j * TWO_OVER_PI * (E @ A) * psi
            dhat = np.fft.fft(d) * dt
            # Riemann sum of int <tau>^(2b) |dhat|^2 d tau / (2 pi)
            total[s] += n ** (2 * sigma) * np.sum(wt * np.abs(dhat) ** 2) / (points * dt)
    return total


def v2_moment(sigma, N_list, t, sample_count, seed, mode="fixed_time_Hsigma", *, chunk=50):
    """Monte Carlo E||v_2||^2 (H^sigma at time t, or the discrete X^{sigma,b} proxy).

    Sample j uses the Gaussians of stream index j for every N, so estimates
    for different N are coupled and their increments are sharp.
    """
    if sigma >= 0.5:
        raise ValueError("sigma must be < 1/2: second-iterate smoothing holds only below H^(1/2)")
    if mode not in ("fixed_time_Hsigma", "discrete_Xsigmab"):
        raise ValueError(f"unknown mode {mode!r}")
    N_list = sorted(int(N) for N in N_list)
    rep = Report("v2_moment", ["N", "sigma", "estimate", "stderr", "increment"])
    rep.summary = {"mode": mode, "t": t, "samples": sample_count}
    if mode == "discrete_Xsigmab":
        rep.summary.update(T=XSB_T, points=XSB_POINTS, b=XSB_B, window="raised_cosine")
    if sample_count == 0 or not N_list:
        return rep
    prev = None
    for N in N_list:
        vals = []
        for a in range(0, sample_count, chunk):
            g = streams.complex_gaussians(seed, np.arange(a, min(a + chunk, sample_count)), N)
            if mode == "fixed_time_Hsigma":
                c = compute_v2_batch(g, t)
                n = np.arange(1, c.shape[1] + 1)
                vals.append(np.sum(n ** (2 * sigma) * np.abs(c) ** 2, axis=1))
            else:
                vals.append(_xsb_norm_sq(g, sigma))
        v = np.concatenate(vals)
        est = float(v.mean())
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
        rep.add(N, sigma, est, se, float("nan") if prev is None else est - prev)
        prev = est
    return rep
