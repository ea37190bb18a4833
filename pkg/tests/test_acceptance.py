"""Desk-scale acceptance suite; one verdict line per criterion in the terminal summary."""
import math
import time

import numpy as np
import pytest
from scipy import special

from gibbsnls.bessel_disc import asymptotic_exponent_fit, build_basis, lp_norm, scaling_counterexample
from gibbsnls.dynamics import FlowConfig, divergence, evolve
from gibbsnls.invariance import liouville_volume_check, run_invariance_experiment
from gibbsnls.measure import (
    chisquare_rate_sweep,
    default_cutoff,
    free_coefficients,
    tail_chisquare_test,
    tail_subgaussian_test,
    vN_convergence,
)
from gibbsnls.nonlinearity import pure_quartic, saturated
from gibbsnls.sphere_zonal import (
    compute_v2,
    compute_v2_batch,
    gamma_law_check,
    ihp_ratio_report,
    picard_moment_sums,
    v2_moment,
)
from gibbsnls import streams
from test_sphere_zonal import _duhamel_oracle

SEED = 20240601
Q4 = pure_quartic()
KNOWN_GAP = pytest.mark.xfail(strict=True, reason="unattainable as stated; see the decision notes")


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.s = time.perf_counter() - self.t0


def test_c01_eigenbasis(verdict):
    with Clock() as clk:
        big = build_basis(200)
        b = big.truncated(64)
        j0 = np.max(np.abs(special.j0(b.zeros)))
        gram = np.max(np.abs(b.gram() - np.eye(64)))
        ident = np.max(np.abs(b.l2_raw_norms - math.sqrt(math.pi) * np.abs(special.j1(b.zeros))))
        n = np.arange(1, 201)
        s_inf = asymptotic_exponent_fit(np.array([lp_norm(big, k, math.inf) for k in n]), n)[0]
        s_l2 = asymptotic_exponent_fit(big.l2_raw_norms[:200], n)[0]
    ok = [
        verdict(1, "|J0(z_n)| < 1e-13", j0 < 1e-13, f"{j0:.1e}"),
        verdict(1, "Gram within 1e-9", gram < 1e-9, f"{gram:.1e}"),
        verdict(1, "raw norm identity within 1e-10", ident < 1e-10, f"{ident:.1e}"),
        verdict(1, "Linf slope in [0.45, 0.55]", 0.45 <= s_inf <= 0.55, f"{s_inf:.4f}"),
        verdict(1, "raw L2 slope in [-0.55, -0.45]", -0.55 <= s_l2 <= -0.45, f"{s_l2:.4f}"),
        verdict(1, "runtime < 10 s", clk.s < 10, f"{clk.s:.1f} s"),
    ]
    assert all(ok)


def test_c02_scaling(verdict):
    with Clock() as clk:
        _, ex = scaling_counterexample(2.0 ** np.arange(1, 9))
    ok = [verdict(2, f"{k} exponent {want:+.1f} +- 0.05", abs(ex[k] - want) <= 0.05, f"{ex[k]:+.4f}")
          for k, want in (("L4", -0.5), ("L2", -1.0), ("H1", 0.0))]
    ok.append(verdict(2, "runtime < 5 s", clk.s < 5, f"{clk.s:.1f} s"))
    assert all(ok)


def test_c03_subgaussian_tail(verdict):
    with Clock() as clk:
        rep = tail_subgaussian_test(np.full(4, 0.5), [1, 2, 3], 10**6, SEED)
    worst = float(np.max(rep.column("empirical") / rep.column("bound")))
    ok = [verdict(3, "tail <= 4 exp(-lambda^2/2)", rep.passed, f"max ratio {worst:.3f}"),
          verdict(3, "runtime < 30 s", clk.s < 30, f"{clk.s:.1f} s")]
    assert all(ok)


def test_c04_chisquare_tail(verdict):
    with Clock() as clk:
        one = tail_chisquare_test(1, [1, 2, 3, 4, 5, 6], 10**6, SEED)
        sweep = chisquare_rate_sweep(range(1, 21), 10**6, SEED + 1)
    zmax = float(np.max(np.abs(one.column("z"))))
    c2 = float(np.min(sweep.column("c2")))
    ok = [verdict(4, "card 1 tail within 3 se of exp(-lambda)", one.passed, f"max |z| {zmax:.2f}"),
          verdict(4, "c2 > 0.3 for card <= 20", sweep.passed, f"min c2 {c2:.3f}"),
          verdict(4, "runtime < 60 s", clk.s < 60, f"{clk.s:.1f} s")]
    assert all(ok)


def test_c05_vN_convergence(verdict, basis64):
    with Clock() as clk:
        rep = vN_convergence(saturated(2.0), basis64, [8, 16, 32, 64], 10**4, SEED)
    d = rep.column("mean_abs_diff")
    ok = [verdict(5, "L1 differences strictly decreasing", rep.checks["differences strictly decreasing"],
                  ", ".join(f"{x:.2e}" for x in d)),
          verdict(5, "each <= 5 x C sqrt(majorant)", rep.checks["differences <= 5.0 x C sqrt(majorant)"],
                  f"C = {rep.summary['fitted_constant']:.3f}"),
          verdict(5, "runtime < 2 min", clk.s < 120, f"{clk.s:.1f} s")]
    assert all(ok)


def test_c06_dynamics(verdict, basis16):
    with Clock() as clk:
        b1 = build_basis(1)
        kappa = lp_norm(b1, 1, 4) ** 4
        exact = np.exp(-1j * (b1.zeros[0] ** 2 + kappa))
        one = {
            m: abs(evolve(Q4, b1, np.array([1.0 + 0j]), FlowConfig(1e-3, 1.0, m))[0][0] - exact)
            for m in ("strang_splitting", "implicit_midpoint")
        }
        rough = free_coefficients(basis16, 16, SEED, [0])[0]
        _, d_rough = evolve(Q4, basis16, rough, FlowConfig(1e-3, 1.0))
        smooth = rough / basis16.zeros**2
        _, d_smooth = evolve(Q4, basis16, smooth, FlowConfig(1e-3, 1.0))
        pts = free_coefficients(basis16, 16, SEED + 1, np.arange(100))
        div = max(abs(divergence(Q4, basis16, p)) for p in pts)
        fwd, _ = evolve(Q4, basis16, rough, FlowConfig(1e-3, 0.5))
        back, _ = evolve(Q4, basis16, fwd, FlowConfig(1e-3, -0.5))
        rev = float(np.linalg.norm(back - rough))
        dts = np.array([4e-3, 2e-3, 1e-3])
        b8 = basis16.truncated(8)
        s8 = smooth[:8]
        drift = [evolve(Q4, b8, s8, FlowConfig(dt, 1.0))[1].h_drift for dt in dts]
        order = np.polyfit(np.log(dts), np.log(drift), 1)[0]
    ok = [
        verdict(6, "single-mode phase error <= 1e-5 (strang)", one["strang_splitting"] <= 1e-5,
                f"{one['strang_splitting']:.1e}; midpoint {one['implicit_midpoint']:.1e}"),
        verdict(6, "L2 drift <= 1e-10, N=16", d_rough.l2_drift <= 1e-10, f"{d_rough.l2_drift:.1e}"),
        verdict(6, "H drift <= 1e-6, N=16", d_smooth.h_drift <= 1e-6,
                f"{d_smooth.h_drift:.1e}; rough datum {d_rough.h_drift:.1e}"),
        verdict(6, "divergence <= 1e-7 at 100 points", div <= 1e-7, f"{div:.1e}"),
        verdict(6, "reversibility <= 1e-8", rev <= 1e-8, f"{rev:.1e}"),
        verdict(6, "H drift order in [1.8, 2.2]", 1.8 <= order <= 2.2, f"{order:.3f}"),
        verdict(6, "runtime < 2 min", clk.s < 120, f"{clk.s:.1f} s"),
    ]
    assert all(ok)


def test_c07_invariance(verdict, basis8):
    with Clock() as clk:
        rep = run_invariance_experiment(
            Q4, default_cutoff(basis8, 8), basis8, 8, [0.1, 0.5, 1.0], 5000, FlowConfig(1e-3, 1.0), SEED
        )
        a = free_coefficients(basis8, 2, SEED, [0])[0]
        jac = liouville_volume_check(Q4, basis8, 2, a, 1.0, 1e-3)
    ok = [
        verdict(7, "every |z| <= 3", rep.max_abs_z <= 3, f"max |z| {rep.max_abs_z:.3f}"),
        verdict(7, "every KS p >= 0.01", rep.min_p >= 0.01, f"min p {rep.min_p:.3f}"),
        verdict(7, "Liouville |det - 1| <= 1e-4 at N=2", jac <= 1e-4, f"{jac:.1e}"),
        verdict(7, "runtime < 10 min", clk.s < 600, f"{clk.s:.1f} s"),
    ]
    assert all(ok)


def test_c08_gamma_algebra(verdict):
    with Clock() as clk:
        rep = gamma_law_check(20, seed=SEED)
    ok = [verdict(8, name, good) for name, good in rep.checks.items()]
    ok.append(verdict(8, "gamma(1,1,1,1) == 2/pi", rep.summary["gamma_1111"] == 2 / math.pi))
    ok.append(verdict(8, "runtime < 2 min", clk.s < 120, f"{clk.s:.1f} s"))
    assert all(ok)


@pytest.fixture(scope="module")
def ihp_report():
    t0 = time.perf_counter()
    rep = ihp_ratio_report(0.4, 0.95, [10.0, 100.0, 1000.0, 10000.0])
    rep.summary["runtime"] = time.perf_counter() - t0
    return rep


def test_c09_ihp_tail_and_runtime(verdict, ihp_report):
    ok = [verdict(9, "tail bracket width < 1e-3", ihp_report.checks["tail bracket width < 1e-3 of the sum"]),
          verdict(9, "runtime < 30 s", ihp_report.summary["runtime"] < 30, f"{ihp_report.summary['runtime']:.1f} s")]
    assert all(ok)


@KNOWN_GAP
def test_c09_ihp_ratio_spread(verdict, ihp_report):
    r = ihp_report.column("ratio")
    spread = float(r.max() / r.min())
    ok = verdict(9, "max/min ratio <= 3", spread <= 3, "ratios " + ", ".join(f"{x:.3f}" for x in r))
    assert ok


@pytest.fixture(scope="module")
def picard_report():
    t0 = time.perf_counter()
    rep = picard_moment_sums(0.4, 0.95, [32, 64, 128])
    rep.summary["runtime"] = time.perf_counter() - t0
    return rep


def test_c10_picard_i1(verdict, picard_report):
    first = picard_report.summary["first_summand"]
    d1 = picard_report.column("dI1")
    ok = [
        verdict(10, "first summand = 4/pi^2 to 1e-12", abs(first - 4 / math.pi**2) <= 1e-12, f"{first!r}"),
        verdict(10, "I1 increments strictly decreasing", picard_report.checks["I1 increments strictly decreasing"],
                ", ".join(f"{x:.3f}" for x in d1)),
        verdict(10, "runtime < 3 min", picard_report.summary["runtime"] < 180,
                f"{picard_report.summary['runtime']:.1f} s"),
    ]
    assert all(ok)


@KNOWN_GAP
def test_c10_picard_i2(verdict, picard_report):
    d2 = picard_report.column("dI2")
    ok = verdict(10, "I2 increments strictly decreasing", picard_report.checks["I2 increments strictly decreasing"],
                 ", ".join(f"{x:.3f}" for x in d2))
    assert ok


def test_c11_v2_exact(verdict):
    t = 0.9
    s = compute_v2(1, SEED, t)
    closed = 2 / math.pi * abs(s.g[0]) ** 3 * t
    e1 = abs(abs(s.v2_coeffs[0]) - closed)
    g = streams.complex_gaussians(SEED, [0], 2)[0]
    e2 = float(np.max(np.abs(compute_v2_batch(g[None, :], 1.0)[0] - _duhamel_oracle(g, 1.0))))
    t1 = time.perf_counter()
    rep = v2_moment(0.4, [1], t, 100_000, SEED, chunk=20_000)
    est, se = rep.column("estimate")[0], rep.column("stderr")[0]
    want = (2 / math.pi) ** 2 * 6 * t * t
    ok = [
        verdict(11, "single-mode |v2| = (2/pi)|g|^3 t to 1e-12", e1 <= 1e-12, f"{e1:.1e}"),
        verdict(11, "brute-force Duhamel N=2 to 1e-6", e2 <= 1e-6, f"{e2:.1e}"),
        verdict(11, "single-mode moment within 3 se", abs(est - want) <= 3 * se,
                f"{est:.4f} vs {want:.4f}, se {se:.4f}; {time.perf_counter() - t1:.1f} s"),
    ]
    assert all(ok)


@KNOWN_GAP
def test_c11_v2_increments(verdict):
    with Clock() as clk:
        rep = v2_moment(0.4, [16, 32, 64], 1.0, 200, SEED)
    est = rep.column("estimate")
    inc = rep.column("increment")[1:]
    verdict(11, "runtime < 5 min", clk.s < 300, f"{clk.s:.1f} s")
    ok = [
        verdict(11, "increments decreasing", inc[1] < inc[0], ", ".join(f"{x:.2f}" for x in inc)),
        verdict(11, "final increment <= 10%", abs(inc[1]) <= 0.1 * est[1], f"{abs(inc[1]) / est[1]:.1%}"),
    ]
    assert all(ok)
