import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from gibbsnls import streams
from gibbsnls.bessel_disc import lp_norm
from gibbsnls.measure import (
    CutoffChi,
    SpectralField,
    check_s,
    default_cutoff,
    default_s,
    free_coefficients,
    gibbs_sobolev_tail,
    gibbs_weight,
    integral_V,
    kappa_N_log,
    load_ensemble,
    sample_free,
    sample_gibbs,
    save_ensemble,
    sobolev_norm,
    sobolev_norms,
    sobolev_tail_trend,
    tail_chisquare_test,
    tail_sobolev_test,
    tail_subgaussian_test,
    uniform_integrability,
    vN_convergence,
)
from gibbsnls.nonlinearity import custom, pure_quartic, saturated

ZERO_V = custom(lambda x, y: 0.0 * x, 2.0, nonnegative=True)
NO_CUT = CutoffChi(math.inf, 1.0)


def test_s_interval():
    assert default_s(2.0) == pytest.approx(5 / 12)
    with pytest.raises(ValueError, match=r"s must lie in \(max\(1/3,1-2/alpha,1-2/beta\), 1/2\)"):
        check_s(0.1, 2.0, 2.0)
    assert default_s(3.0) == pytest.approx(0.5 * (1 / 3 + 0.5))


@given(st.lists(st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
@settings(max_examples=50, deadline=None)
def test_coordinates_and_parseval(basis8, a):
    u = SpectralField(np.array(a), basis8)
    back = SpectralField.from_c(u.c, basis8, u.s)
    assert np.allclose(back.a, u.a, rtol=1e-15, atol=0)
    z = basis8.zeros[: u.N]
    total = np.sum(np.abs(u.a) ** 2)
    assert abs(u.l2_norm**2 - total) <= 1e-12 * (1 + total)
    assert abs(np.sum(z ** (-2 * u.s) * np.abs(u.c) ** 2) - total) <= 1e-12 * (1 + total)
    # quadrature of |u|^2 on the disc agrees too
    assert abs(basis8.integrate(np.abs(u.values()) ** 2) - total) <= 1e-10 * (1 + total)


def test_invalid_field(basis8):
    with pytest.raises(ValueError):
        SpectralField(np.array([np.nan]), basis8)
    with pytest.raises(ValueError):
        SpectralField(np.zeros(9), basis8)


def test_sample_free_moments(basis16):
    assert sample_free(basis16, 0, 1).N == 0
    a = free_coefficients(basis16, 16, 11, np.arange(100_000))
    z = basis16.zeros
    var = np.var(a[:, 0].real)
    target = 0.5 / z[0] ** 2
    assert abs(target - 0.08646) < 1e-5
    se = target * math.sqrt(2 / len(a))
    assert abs(var - target) < 3 * se
    l2 = np.sum(np.abs(a) ** 2, axis=1)
    assert abs(l2.mean() - np.sum(z**-2.0)) < 3 * l2.std() / math.sqrt(len(l2))
    hs = sobolev_norms(a, z, 0.3) ** 2
    assert abs(hs.mean() - np.sum(z ** (0.6 - 2))) < 3 * hs.std() / math.sqrt(len(hs))


def test_sobolev_norm_trivia(basis8):
    u = SpectralField(np.array([1, 2j, -1]), basis8)
    assert sobolev_norm(u, 0) == pytest.approx(u.l2_norm, rel=1e-15)
    e3 = SpectralField(np.array([0, 0, 1.0]), basis8)
    assert sobolev_norm(e3, 0.4) == pytest.approx(basis8.zeros[2] ** 0.4, rel=1e-14)


def test_integral_V_values(basis8):
    zero = SpectralField(np.zeros(3), basis8)
    assert integral_V(saturated(2), zero) == pytest.approx(math.pi / 2, rel=1e-13)
    assert integral_V(pure_quartic(), zero) == 0
    assert gibbs_weight(saturated(2), NO_CUT, zero) == pytest.approx(math.exp(-math.pi / 2), rel=1e-13)
    assert gibbs_weight(pure_quartic(), NO_CUT, zero) == 1.0


def test_integral_V_against_monte_carlo(basis8):
    # uniform points on the disc, field evaluated with scipy's J0
    a = np.array([0.8, -0.3 + 0.4j, 0.2j])
    u = SpectralField(a, basis8)
    n = 4_000_000
    r = np.sqrt(streams.sample_uniforms(9, np.arange(n)))
    vals = sum(c * special.j0(z * r) / nrm for c, z, nrm in zip(a, basis8.zeros, basis8.l2_raw_norms))
    f = 0.5 * np.abs(vals) ** 4
    mc = math.pi * f.mean()
    assert abs(integral_V(pure_quartic(), u) - mc) < 1e-3 * mc


def test_cutoff_kills_large_fields(basis8):
    chi = CutoffChi(1.0, 0.5)
    u = SpectralField(np.array([2.0]), basis8)
    assert gibbs_weight(saturated(2), chi, u) == 0.0
    assert chi(1.25) == pytest.approx(0.5)


def test_kappa_log(basis8):
    s = 5 / 12
    z = basis8.zeros[:3]
    assert kappa_N_log(basis8, 3, s) == pytest.approx(math.log(math.pi**-3 * np.prod(z ** (2 - 2 * s))))


def test_ensemble_basics(basis8):
    chi = default_cutoff(basis8, 8)
    assert len(sample_gibbs(pure_quartic(), chi, basis8, 8, 0, 1)) == 0
    ens = sample_gibbs(saturated(2), chi, basis8, 8, 2000, 4)
    assert 1 <= ens.ess <= 2000
    assert np.all((ens.weights >= 0) & (ens.weights <= 1))
    rej = sample_gibbs(pure_quartic(), chi, basis8, 8, 300, 4, "rejection")
    assert np.all(rej.weights == 1)


def test_zero_potential_matches_free(basis8):
    ens = sample_gibbs(ZERO_V, NO_CUT, basis8, 8, 500, 21)
    assert np.all(ens.weights == 1)
    assert np.array_equal(ens.coeffs, free_coefficients(basis8, 8, 21, np.arange(500)))


def test_importance_vs_rejection(basis8):
    b4 = basis8.truncated(4)
    m = pure_quartic()
    imp = sample_gibbs(m, NO_CUT, b4, 4, 40_000, 2)
    rej = sample_gibbs(m, NO_CUT, b4, 4, 20_000, 3, "rejection")
    x_imp = np.sum(np.abs(imp.coeffs) ** 2, axis=1)
    x_rej = np.sum(np.abs(rej.coeffs) ** 2, axis=1)
    diff = imp.weighted_mean(x_imp) - x_rej.mean()
    se = math.hypot(imp.weighted_stderr(x_imp), x_rej.std() / math.sqrt(len(x_rej)))
    assert abs(diff) < 3 * se


def test_worker_invariance_and_roundtrip(basis8, tmp_path):
    chi = default_cutoff(basis8, 8)
    one = sample_gibbs(saturated(2), chi, basis8, 8, 40_000, 5, workers=1)
    three = sample_gibbs(saturated(2), chi, basis8, 8, 40_000, 5, workers=3)
    assert np.array_equal(one.coeffs, three.coeffs) and np.array_equal(one.weights, three.weights)
    small = sample_gibbs(saturated(2), chi, basis8, 8, 20, 5)
    save_ensemble(small, tmp_path)
    back = load_ensemble(tmp_path, basis8)
    assert np.array_equal(back.coeffs, small.coeffs)
    assert np.array_equal(back.weights, small.weights)


def test_subgaussian_tail():
    rep = tail_subgaussian_test([1.0], [0.0], 1000, 1)
    assert rep.rows[0][1] == 1.0 and rep.passed
    c = np.full(4, 0.5)
    rep = tail_subgaussian_test(c, [3.0], 200_000, 2)
    assert rep.rows[0][3] == pytest.approx(4 * math.exp(-4.5))
    assert rep.passed
    # homogeneity: same draws, scaled c and lambda
    a = tail_subgaussian_test(c, [1.0, 2.0], 50_000, 3)
    b = tail_subgaussian_test(2 * c, [2.0, 4.0], 50_000, 3)
    assert np.allclose(a.column("empirical"), b.column("empirical"))
    assert np.allclose(a.column("bound"), b.column("bound"))


def test_chisquare_tail():
    assert tail_chisquare_test(1, [0.0], 1000, 1).rows[0][1] == 1.0
    rep = tail_chisquare_test(1, [1, 2, 3], 200_000, 4)
    assert rep.passed
    assert np.allclose(rep.column("exact"), np.exp(-np.array([1, 2, 3])))
    c2 = tail_chisquare_test(20, [20.0], 300_000, 5).summary["c2"]
    assert 0.3 <= c2 <= 1.1


def test_sobolev_tails(basis64):
    rep = tail_sobolev_test(basis64, 0.4, [(8, 8), (0, 16)], [1.0, 1.5, 2.0, 2.5], 50_000, 6)
    same = [r for r in rep.rows if r[0] == r[1]]
    assert all(r[3] == 0 for r in same)
    assert rep.passed
    # trend threshold lambda = 0.35 is a frozen choice, see the package notes
    trend = sobolev_tail_trend(basis64, 0.4, [4, 8, 16, 32], 0.35, 100_000, 5)
    assert trend.passed, trend.table()


def test_vN_convergence(basis64):
    rep = vN_convergence(saturated(2), basis64, [16, 16], 100, 1)
    assert rep.rows[0][2] == 0
    rep = vN_convergence(saturated(2), basis64, [8, 16, 32, 64], 4000, 7)
    assert rep.passed, rep.table()
    maj = rep.column("majorant")
    z = basis64.zeros
    direct = sum(z[n - 1] ** -2 * lp_norm(basis64, n, 4) ** 2 for n in range(17, 33))
    assert maj[1] == pytest.approx(direct, rel=1e-13)


def test_uniform_integrability(basis64):
    rep = uniform_integrability(pure_quartic(), basis64, [8, 16, 32, 64], 20_000, 8)
    assert rep.passed, rep.table()


def test_gibbs_tail_decays():
    from gibbsnls.bessel_disc import build_basis

    rep = gibbs_sobolev_tail(pure_quartic(), build_basis(32), 32, 0.45, [0.75, 1.0, 1.25, 1.5], 40_000, 9)
    assert rep.passed
