"""Free and Gibbs measures on the Galerkin spaces E_N, and their tail statistics.

A field in E_N is stored through ``a_n = <u, e_n>``. The H^s-normalized
coordinates are ``c_n = z_n^s a_n`` (so ``u = sum c_n z_n^-s e_n``).
Samples of the free measure have ``a_n = g_n / z_n`` with ``g_n`` normalized
complex Gaussians drawn from counter-based streams.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import streams
from .bessel_disc import BesselBasis, lp_norm
from .nonlinearity import NonlinearityModel, potential
from .reporting import Report, atomic_write, fmt_real, map_chunks

__all__ = [
    "CutoffChi",
    "SpectralField",
    "WeightedEnsemble",
    "check_s",
    "chisquare_rate_sweep",
    "default_cutoff",
    "default_s",
    "free_coefficients",
    "gibbs_sobolev_tail",
    "gibbs_weight",
    "gibbs_weights",
    "integral_V",
    "integral_V_batch",
    "kappa_N_log",
    "load_ensemble",
    "sample_free",
    "sample_gibbs",
    "save_ensemble",
    "sobolev_norm",
    "sobolev_norms",
    "sobolev_tail_trend",
    "tail_chisquare_test",
    "tail_sobolev_test",
    "tail_subgaussian_test",
    "uniform_integrability",
    "vN_convergence",
]

CHUNK = 1 << 14


def s_lower_bound(alpha, beta):
    return max(1.0 / 3.0, 1.0 - 2.0 / alpha, 1.0 - 2.0 / beta)


def default_s(alpha, beta=2.0):
    """Midpoint of the admissible index interval (max(1/3, 1-2/alpha, 1-2/beta), 1/2)."""
    return 0.5 * (s_lower_bound(alpha, beta) + 0.5)


def check_s(s, alpha, beta=2.0):
    lo = s_lower_bound(alpha, beta)
    if not lo < s < 0.5:
        raise ValueError(
            f"s must lie in (max(1/3,1-2/alpha,1-2/beta), 1/2) = ({lo:.6g}, 0.5); got {s}"
        )
    return s


@dataclass(frozen=True)
class SpectralField:
    """Radial field u = sum a_n e_n in E_N."""

    a: np.ndarray
    basis: BesselBasis
    s: float = 5.0 / 12.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=complex)
        if a.ndim != 1:
            raise ValueError("coefficient vector must be one-dimensional")
        if len(a) > self.basis.N:
            raise ValueError(f"{len(a)} modes exceed the {self.basis.N}-mode basis")
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "a", a)

    @classmethod
    def from_c(cls, c, basis, s):
        c = np.asarray(c, dtype=complex)
        return cls(c * basis.zeros[: len(c)] ** -s, basis, s)

    @property
    def N(self):
        return len(self.a)

    @property
    def c(self):
        return self.basis.zeros[: self.N] ** self.s * self.a

    @property
    def l2_norm(self):
        return float(np.sqrt(np.sum(np.abs(self.a) ** 2)))

    def values(self):
        """u(r_q) on the basis quadrature grid."""
        if self.N == 0:
            return np.zeros(self.basis.Q, dtype=complex)
        return self.basis.synthesize(self.a)


@dataclass(frozen=True)
class CutoffChi:
    """Piecewise-affine cutoff: 1 on [0, Lambda], linear to 0 on [Lambda, Lambda+delta]."""

    Lambda: float
    delta: float

    def __post_init__(self):
        if self.Lambda < 0 or self.delta <= 0:
            raise ValueError("cutoff needs Lambda >= 0 and delta > 0")

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        if math.isinf(self.Lambda):
            out = np.ones_like(x)
        else:
            out = np.clip((self.Lambda + self.delta - x) / self.delta, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out


def default_cutoff(basis, N):
    lam = 3.0 * math.sqrt(float(np.sum(basis.zeros[:N] ** -2.0)))
    return CutoffChi(lam, lam / 4.0)


def kappa_N_log(basis, N, s):
    """log of kappa_N = pi^-N prod_{n<=N} z_n^(2-2s)."""
    return float(-N * math.log(math.pi) + (2.0 - 2.0 * s) * np.sum(np.log(basis.zeros[:N])))


def free_coefficients(basis, N, seed, samples):
    """a_n = g_n / z_n for the given sample indices, shape (len(samples), N)."""
    if N > basis.N:
        raise ValueError(f"N={N} exceeds basis size {basis.N}")
    g = streams.complex_gaussians(seed, samples, N)
    return g / basis.zeros[:N]


def sample_free(basis, N, seed, *, sample_index=0, s=None):
    """One draw of phi_N = sum_{n<=N} g_n/z_n e_n."""
    s = default_s(2.0) if s is None else s
    if N == 0:
        return SpectralField(np.zeros(0, dtype=complex), basis, s)
    return SpectralField(free_coefficients(basis, N, seed, [sample_index])[0], basis, s)


def integral_V_batch(model, basis, coeffs):
    """int_Theta V(u) for each row of ``coeffs`` (quadrature on the basis grid)."""
    coeffs = np.atleast_2d(coeffs)
    if coeffs.shape[-1] == 0:
        vals = potential(model, np.zeros((coeffs.shape[0], basis.Q), dtype=complex))
    else:
        vals = potential(model, basis.synthesize(coeffs))
    return basis.integrate(vals)


def integral_V(model, u):
    return float(integral_V_batch(model, u.basis, u.a[None, :])[0])


def gibbs_weights(model, chi, basis, coeffs):
    coeffs = np.atleast_2d(coeffs)
    l2 = np.sqrt(np.sum(np.abs(coeffs) ** 2, axis=-1))
    w = chi(l2)
    live = w > 0
    out = np.zeros(coeffs.shape[0])
    if live.any():
        out[live] = w[live] * np.exp(-integral_V_batch(model, basis, coeffs[live]))
    return out


def gibbs_weight(model, chi, u):
    """f_N(u) = chi(||u||_L2) exp(-int V(u))."""
    return float(gibbs_weights(model, chi, u.basis, u.a[None, :])[0])


def sobolev_norms(coeffs, zeros, sigma):
    coeffs = np.atleast_2d(coeffs)
    z = zeros[: coeffs.shape[-1]]
    return np.sqrt(np.sum(z ** (2.0 * sigma) * np.abs(coeffs) ** 2, axis=-1))


def sobolev_norm(u, sigma):
    """(sum z_n^(2 sigma) |a_n|^2)^(1/2)."""
    if not 0.0 <= sigma < 1.0:
        raise ValueError("sigma must lie in [0, 1)")
    return float(sobolev_norms(u.a[None, :], u.basis.zeros, sigma)[0])


@dataclass
class WeightedEnsemble:
    """Monte Carlo draws from mu_N with weights representing rho_N.

    ``coeffs[i]`` holds the a-coordinates of sample ``sample_index[i]``.
    """

    coeffs: np.ndarray
    weights: np.ndarray
    mode: str
    master_seed: int
    basis: BesselBasis
    s: float
    sample_index: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_index is None:
            self.sample_index = np.arange(len(self.weights))
        if len(self.weights) and not (np.all(self.weights >= 0) and np.sum(self.weights) > 0):
            raise ValueError("weights must be nonnegative with a positive sum")

    def __len__(self):
        return len(self.weights)

    @property
    def N(self):
        return self.coeffs.shape[1]

    @property
    def ess(self):
        if len(self) == 0:
            return 0.0
        w = self.weights
        return float(np.sum(w) ** 2 / np.sum(w * w))

    @property
    def samples(self):
        return [SpectralField(a, self.basis, self.s) for a in self.coeffs]

    def weighted_mean(self, values):
        w = self.weights
        return float(np.sum(w * values) / np.sum(w))

    def weighted_stderr(self, values):
        """Delta-method standard error of the self-normalized weighted mean."""
        w = self.weights / np.sum(self.weights)
        mu = np.sum(w * values)
        return float(np.sqrt(np.sum(w * w * (values - mu) ** 2)))


def sample_gibbs(model, chi, basis, N, count, seed, mode="importance", *, s=None, workers=1):
    """Draw an ensemble representing rho_N.

    ``importance``: samples of mu_N weighted by f_N. ``rejection``: candidates
    accepted with probability f_N (needs V >= 0 so that f_N <= 1).
    """
    s = default_s(model.alpha, model.beta_defocus) if s is None else s
    meta = {
        "N": N,
        "s": s,
        "Lambda": chi.Lambda,
        "delta": chi.delta,
        "family": model.family,
        "alpha": model.alpha,
        "kappa_N_log": kappa_N_log(basis, N, s),
    }
    if mode not in ("importance", "rejection"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if count == 0:
        return WeightedEnsemble(np.zeros((0, N), complex), np.zeros(0), mode, seed, basis, s, meta=meta)

    def draw(a, b):
        idx = np.arange(a, b)
        co = free_coefficients(basis, N, seed, idx)
        return co, gibbs_weights(model, chi, basis, co)

    if mode == "importance":
        parts = map_chunks(draw, count, CHUNK, workers)
        coeffs = np.concatenate([p[0] for p in parts])
        weights = np.concatenate([p[1] for p in parts])
        return WeightedEnsemble(coeffs, weights, mode, seed, basis, s, meta=meta)

    if not model.certified_nonnegative:
        raise NotImplementedError("rejection sampling needs a potential certified V >= 0")
    kept, kept_idx = [], []
    start, accepted, tried = 0, 0, 0
    while accepted < count:
        stop = start + CHUNK
        co, f = draw(start, stop)
        u = streams.sample_uniforms(seed, np.arange(start, stop))
        acc = np.nonzero(u < f)[0]
        kept.append(co[acc])
        kept_idx.append(start + acc)
        accepted += len(acc)
        tried += stop - start
        start = stop
        if tried >= 100 * CHUNK and accepted < 1e-4 * tried:
            warnings.warn(f"rejection acceptance rate {accepted / tried:.2e} below 1e-4")
            if accepted == 0:
                raise RuntimeError("rejection sampler accepted nothing")
    coeffs = np.concatenate(kept)[:count]
    idx = np.concatenate(kept_idx)[:count]
    meta["acceptance_rate"] = accepted / tried
    return WeightedEnsemble(coeffs, np.ones(count), mode, seed, basis, s, idx, meta)


def save_ensemble(ens, directory, stem="ensemble"):
    """Write ``<stem>.csv`` (sample_index, n, Re a_n, Im a_n, weight) and ``<stem>.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["sample_index,n,re_a,im_a,weight"]
    for i, row in enumerate(ens.coeffs):
        si, w = int(ens.sample_index[i]), fmt_real(ens.weights[i])
        for n, a in enumerate(row, start=1):
            lines.append(f"{si},{n},{fmt_real(a.real)},{fmt_real(a.imag)},{w}")
    atomic_write(directory / f"{stem}.csv", "\n".join(lines) + "\n")
    manifest = {
        "seed": ens.master_seed,
        "N": ens.N,
        "s": ens.s,
        "mode": ens.mode,
        "count": len(ens),
        "ess": ens.ess,
        **{k: v for k, v in ens.meta.items() if k not in ("N", "s")},
    }
    atomic_write(directory / f"{stem}.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory / f"{stem}.csv"


def load_ensemble(directory, basis, stem="ensemble"):
    directory = Path(directory)
    meta = json.loads((directory / f"{stem}.json").read_text())
    N, count = meta["N"], meta["count"]
    coeffs = np.zeros((count, N), dtype=complex)
    weights = np.zeros(count)
    index = np.zeros(count, dtype=np.int64)
    raw = np.loadtxt(directory / f"{stem}.csv", delimiter=",", skiprows=1, ndmin=2)
    for k, (si, n, re, im, w) in enumerate(raw):
        i, j = divmod(k, N)
        coeffs[i, int(n) - 1] = re + 1j * im
        weights[i], index[i] = w, int(si)
    extra = {k: v for k, v in meta.items() if k not in ("seed", "N", "s", "mode", "count", "ess")}
    return WeightedEnsemble(coeffs, weights, meta["mode"], meta["seed"], basis, meta["s"], index, extra)


# ---------------------------------------------------------------------------
# tail and convergence experiments


def _tail_prob(values, thresholds):
    values = np.asarray(values)
    n = len(values)
    p = np.array([np.count_nonzero(values > lam) / n for lam in thresholds])
    return p, np.sqrt(p * (1.0 - p) / n)


def _gaussian_sums(c, count, seed, stream=streams.GAUSSIAN):
    c = np.asarray(c, dtype=complex)
    out = np.empty(count, dtype=complex)
    for a in range(0, count, 1 << 17):
        b = min(a + (1 << 17), count)
        g = streams.complex_gaussians(seed, np.arange(a, b), len(c), stream=stream)
        out[a:b] = g @ c
    return out


def tail_subgaussian_test(c, lambdas, sample_count, seed):
    """Empirical P(|sum c_n g_n| > lambda) against 4 exp(-lambda^2 / (2 sum|c_n|^2))."""
    c = np.asarray(c, dtype=complex)
    total = float(np.sum(np.abs(c) ** 2))
    if total == 0:
        raise ValueError("coefficient vector is identically zero")
    x = np.abs(_gaussian_sums(c, sample_count, seed))
    lambdas = np.asarray(lambdas, dtype=float)
    p, se = _tail_prob(x, lambdas)
    bound = 4.0 * np.exp(-0.5 * lambdas**2 / total)
    rep = Report("tail_subgaussian", ["lambda", "empirical", "stderr", "bound", "pass"])
    for row in zip(lambdas, p, se, bound, p <= bound):
        rep.add(*row)
    rep.summary = {"sum_abs_c_sq": total, "samples": sample_count, "beta": 0.5}
    rep.checks["empirical <= bound at every lambda"] = bool(np.all(p <= bound))
    return rep


def _chi_sums(card, count, seed):
    out = np.empty(count)
    for a in range(0, count, 1 << 16):
        b = min(a + (1 << 16), count)
        g = streams.complex_gaussians(seed, np.arange(a, b), card)
        out[a:b] = np.sum(np.abs(g) ** 2, axis=1)
    return out


def _decay_rate(values, card, min_hits=100):
    """Minus the log-slope of the empirical tail over its far range."""
    values = np.sort(values)
    n = len(values)
    lo = card + 2.0 * math.sqrt(card)
    hi = values[n - min_hits] if n > min_hits else values[-1]
    if hi <= lo:
        return float("nan")
    grid = np.linspace(lo, hi, 25)
    p = 1.0 - np.searchsorted(values, grid, side="right") / n
    slope = np.polyfit(grid, np.log(p), 1)[0]
    return float(-slope)


def tail_chisquare_test(card, lambdas, sample_count, seed):
    """Empirical P(sum_{n<=card} |g_n|^2 > lambda) with the exact Gamma(card, 1) law.

    ``summary['c2']`` is the fitted exponential decay rate of the far tail.
    """
    if card < 1:
        raise ValueError("card must be >= 1")
    x = _chi_sums(card, sample_count, seed)
    lambdas = np.asarray(lambdas, dtype=float)
    p, se = _tail_prob(x, lambdas)
    exact = stats.gamma.sf(lambdas, card)
    z = np.where(se > 0, (p - exact) / np.where(se > 0, se, 1.0), 0.0)
    rep = Report("tail_chisquare", ["lambda", "empirical", "stderr", "exact", "z"])
    for row in zip(lambdas, p, se, exact, z):
        rep.add(*row)
    rep.summary = {"card": card, "samples": sample_count, "c2": _decay_rate(x, card)}
    rep.checks["empirical within 3 standard errors of exact law"] = bool(np.all(np.abs(z) <= 3.0))
    return rep


def chisquare_rate_sweep(cards, sample_count, seed, *, c2_min=0.3):
    """Fitted decay rate c2 for each card, from one shared draw of max(cards) modes."""
    cards = sorted(cards)
    kmax = cards[-1]
    cum = np.empty((sample_count, kmax))
    for a in range(0, sample_count, 1 << 16):
        b = min(a + (1 << 16), sample_count)
        g = streams.complex_gaussians(seed, np.arange(a, b), kmax)
        cum[a:b] = np.cumsum(np.abs(g) ** 2, axis=1)
    rep = Report("chisquare_rates", ["card", "c2"])
    for k in cards:
        rep.add(k, _decay_rate(cum[:, k - 1], k))
    rep.summary = {"samples": sample_count}
    rep.checks[f"c2 > {c2_min} for every card"] = bool(np.all(rep.column("c2") > c2_min))
    return rep


def _block_norms(basis, sigma, N, M, g):
    if M <= N:
        return np.zeros(g.shape[0])
    zw = basis.zeros[N:M] ** (2.0 * sigma - 2.0)
    return np.sqrt(np.abs(g[:, N:M]) ** 2 @ zw)


def tail_sobolev_test(basis, sigma, N_pairs, lambdas, samples, seed):
    """Empirical P(||S_M phi - S_N phi||_{H^sigma} > lambda) for each (N, M) pair."""
    Mmax = max(M for _, M in N_pairs)
    if Mmax > basis.N:
        raise ValueError(f"M={Mmax} exceeds basis size {basis.N}")
    g = streams.complex_gaussians(seed, np.arange(samples), Mmax)
    lambdas = np.asarray(lambdas, dtype=float)
    rep = Report("tail_sobolev", ["N", "M", "lambda", "empirical", "stderr"])
    slopes = {}
    for N, M in N_pairs:
        if not 0 <= N <= M:
            raise ValueError("pairs must satisfy 0 <= N <= M")
        p, se = _tail_prob(_block_norms(basis, sigma, N, M, g), lambdas)
        for row in zip(lambdas, p, se):
            rep.add(N, M, *row)
        ok = p > 0
        if ok.sum() >= 2:
            slopes[f"{N}-{M}"] = float(np.polyfit(lambdas[ok] ** 2, np.log(p[ok]), 1)[0])
    rep.summary = {"sigma": sigma, "samples": samples, "log_tail_slope_in_lambda_sq": slopes}
    rep.checks["log-tail slope in lambda^2 negative"] = all(v < 0 for v in slopes.values())
    return rep


def sobolev_tail_trend(basis, sigma, N_list, lam, samples, seed, *, max_slope=-0.5):
    """Slope of log P(||S_2N phi - S_N phi||_{H^sigma} > lam) against 2(1-sigma) log(1+N)."""
    Mmax = 2 * max(N_list)
    g = streams.complex_gaussians(seed, np.arange(samples), Mmax)
    rep = Report("sobolev_tail_trend", ["N", "M", "x", "empirical", "stderr"])
    for N in N_list:
        p, se = _tail_prob(_block_norms(basis, sigma, N, 2 * N, g), [lam])
        rep.add(N, 2 * N, 2.0 * (1.0 - sigma) * math.log1p(N), p[0], se[0])
    x, p = rep.column("x"), rep.column("empirical")
    ok = p > 0
    slope = float(np.polyfit(x[ok], np.log(p[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    rep.summary = {"sigma": sigma, "lambda": lam, "slope": slope}
    rep.checks[f"trend slope <= {max_slope}"] = bool(slope <= max_slope)
    return rep


def vN_convergence(model, basis, N_list, samples, seed, *, dominance=5.0):
    """E_mu |int V(S_N u) - int V(S_M u)| over consecutive (N, M) in ``N_list``.

    The majorant column is sum_{N<n<=M} z_n^-2 ||e_n||^2_{L^(alpha+2)}, a
    bound on ||phi_N - phi_M||^2 in L^(alpha+2); the L^1 difference is compared
    with its square root times one fitted constant.
    """
    N_list = list(N_list)
    if any(b < a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be nondecreasing")
    Mmax = N_list[-1]
    p = model.alpha + 2.0
    lp = np.array([lp_norm(basis, n, p) for n in range(1, Mmax + 1)])
    sums = {N: np.zeros(0) for N in N_list}
    chunk = 2048
    for a in range(0, samples, chunk):
        b = min(a + chunk, samples)
        co = free_coefficients(basis, Mmax, seed, np.arange(a, b))
        for N in N_list:
            sums[N] = np.concatenate([sums[N], integral_V_batch(model, basis, co[:, :N])])
    rep = Report("vN_convergence", ["N", "M", "mean_abs_diff", "stderr", "majorant", "ratio"])
    for N, M in zip(N_list, N_list[1:]):
        d = np.abs(sums[N] - sums[M])
        maj = float(np.sum(basis.zeros[N:M] ** -2.0 * lp[N:M] ** 2))
        mean = float(d.mean()) if len(d) else 0.0
        se = float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else 0.0
        rep.add(N, M, mean, se, maj, mean / math.sqrt(maj) if maj > 0 else float("nan"))
    if rep.rows:
        diffs, maj, ratio = rep.column("mean_abs_diff"), rep.column("majorant"), rep.column("ratio")
        live = maj > 0
        C = float(np.exp(np.mean(np.log(ratio[live])))) if live.any() else 0.0
        rep.summary = {"samples": samples, "alpha": model.alpha, "fitted_constant": C}
        rep.checks["differences strictly decreasing"] = bool(np.all(np.diff(diffs) < 0))
        rep.checks[f"differences <= {dominance} x C sqrt(majorant)"] = bool(
            np.all(diffs <= dominance * C * np.sqrt(maj))
        )
        rep.checks["majorant decreasing"] = bool(np.all(np.diff(maj) < 0))
    return rep


def uniform_integrability(model, basis, N_list, samples, seed, *, powers=(1, 2, 4), chi=None, spread=0.1):
    """E_mu f_N^p for each N and p, on shared Gaussian draws.

    Stability across N is read as a relative spread of at most ``spread``.
    """
    Mmax = max(N_list)
    co = free_coefficients(basis, Mmax, seed, np.arange(samples))
    rep = Report("uniform_integrability", ["N", "p", "mean", "stderr"])
    in_range = True
    for N in N_list:
        c = chi if chi is not None else default_cutoff(basis, N)
        f = gibbs_weights(model, c, basis, co[:, :N])
        in_range &= bool(np.all((f >= 0) & (f <= 1)))
        for p in powers:
            v = f**p
            rep.add(N, p, float(v.mean()), float(v.std(ddof=1) / math.sqrt(samples)))
    rep.checks["f_N in [0, 1]"] = bool(in_range)
    for p in powers:
        m = np.array([r[2] for r in rep.rows if r[1] == p])
        rep.checks[f"E f_N^{p} spread across N <= {spread:g}"] = bool(m.max() - m.min() <= spread * m.max())
    return rep


def gibbs_sobolev_tail(model, basis, N, sigma, lambdas, count, seed, chi=None):
    """rho_N-weighted tail of ||S_N u||_{H^sigma} and its log-slope in lambda^2."""
    chi = default_cutoff(basis, N) if chi is None else chi
    ens = sample_gibbs(model, chi, basis, N, count, seed)
    norms = sobolev_norms(ens.coeffs, basis.zeros, sigma)
    w = ens.weights / ens.weights.sum()
    lambdas = np.asarray(lambdas, dtype=float)
    p = np.array([np.sum(w[norms > lam]) for lam in lambdas])
    rep = Report("gibbs_sobolev_tail", ["lambda", "weighted_tail"])
    for row in zip(lambdas, p):
        rep.add(*row)
    ok = p > 0
    slope = float(np.polyfit(lambdas[ok] ** 2, np.log(p[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    rep.summary = {"slope_in_lambda_sq": slope, "ess": ens.ess}
    rep.checks["log-tail slope in lambda^2 negative"] = bool(slope < 0)
    return rep
