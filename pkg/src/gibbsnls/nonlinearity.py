"""Gauge-invariant potentials V(z) = G(|z|^2) and forces F(z) = G'(|z|^2) z."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "NonlinearityModel",
    "custom",
    "force",
    "potential",
    "pure_quartic",
    "saturated",
    "verify_defocus",
    "verify_growth",
    "wirtinger_derivatives",
]

COMPLEX_STEP = 1e-20
FAMILIES = ("saturated", "pure_quartic", "custom")


@dataclass(frozen=True)
class NonlinearityModel:
    """Potential/force pair with its growth degree and defocusing exponent.

    Custom models provide ``V(x, y)`` as a real-analytic expression in the
    real and imaginary parts (no ``abs``), which lets the force be obtained by
    complex-step differentiation.
    """

    family: str
    alpha: float
    beta_defocus: float = 2.0
    custom_V: Optional[Callable] = None
    nonnegative: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown nonlinearity family {self.family!r}; expected one of {FAMILIES}")
        if not 0.0 < self.alpha < 4.0:
            raise ValueError(f"alpha must lie in (0, 4), got {self.alpha}")
        if not 2.0 <= self.beta_defocus < 4.0:
            raise ValueError(f"beta_defocus must lie in [2, 4), got {self.beta_defocus}")
        if self.family == "pure_quartic" and self.alpha != 2.0:
            raise ValueError("pure_quartic has alpha = 2")
        if self.family == "custom" and self.custom_V is None:
            raise ValueError("custom family needs a potential V(x, y)")

    @property
    def certified_nonnegative(self):
        return self.family != "custom" or self.nonnegative

    # G and its derivatives in w = |z|^2 (built-in families only)
    def G(self, w):
        if self.family == "saturated":
            return 2.0 / (self.alpha + 2.0) * (1.0 + w) ** ((self.alpha + 2.0) / 2.0)
        if self.family == "pure_quartic":
            return 0.5 * w * w
        raise TypeError("G is only defined in closed form for built-in families")

    def G1(self, w):
        if self.family == "saturated":
            return (1.0 + w) ** (self.alpha / 2.0)
        if self.family == "pure_quartic":
            return w
        raise TypeError("G' is only defined in closed form for built-in families")

    def G2(self, w):
        if self.family == "saturated":
            return self.alpha / 2.0 * (1.0 + w) ** (self.alpha / 2.0 - 1.0)
        if self.family == "pure_quartic":
            return np.ones_like(w)
        raise TypeError("G'' is only defined in closed form for built-in families")


def saturated(alpha=2.0):
    return NonlinearityModel("saturated", float(alpha))


def pure_quartic():
    return NonlinearityModel("pure_quartic", 2.0)


def custom(V, alpha, beta_defocus=2.0, nonnegative=False):
    return NonlinearityModel("custom", float(alpha), float(beta_defocus), V, nonnegative)


def _partials(model, z):
    """dV/dx and dV/dy by complex step for a custom model."""
    x, y = np.real(z), np.imag(z)
    h = COMPLEX_STEP
    vx = np.imag(model.custom_V(x + 1j * h, y)) / h
    vy = np.imag(model.custom_V(x, y + 1j * h)) / h
    return vx, vy


def potential(model, z):
    """V(z), elementwise over arrays."""
    z = np.asarray(z)
    if model.family == "custom":
        out = np.real(model.custom_V(np.real(z), np.imag(z)))
    else:
        out = model.G(np.real(z) ** 2 + np.imag(z) ** 2)
    return float(out) if np.ndim(out) == 0 else out


def force(model, z):
    """F(z) = G'(|z|^2) z, i.e. the antiholomorphic derivative of V."""
    z = np.asarray(z)
    if model.family == "custom":
        vx, vy = _partials(model, z)
        out = 0.5 * (vx + 1j * vy)
    else:
        out = model.G1(np.real(z) ** 2 + np.imag(z) ** 2) * z
    return complex(out) if np.ndim(out) == 0 else out


def wirtinger_derivatives(model, z, k1, k2, *, h=1e-5):
    """d^k1 dbar^k2 V at z for k1 + k2 <= 2.

    Closed form for built-in families; complex-step first derivatives, and
    central differences of those for second order, for custom models.
    """
    if k1 + k2 > 2 or min(k1, k2) < 0:
        raise ValueError("only orders with k1 + k2 <= 2 are supported")
    z = np.asarray(z, dtype=complex)
    if model.family != "custom":
        w = np.abs(z) ** 2
        zb = np.conj(z)
        table = {
            (0, 0): lambda: model.G(w) + 0j,
            (1, 0): lambda: model.G1(w) * zb,
            (0, 1): lambda: model.G1(w) * z,
            (1, 1): lambda: model.G1(w) + model.G2(w) * w + 0j,
            (2, 0): lambda: model.G2(w) * zb**2,
            (0, 2): lambda: model.G2(w) * z**2,
        }
        return table[(k1, k2)]()
    if model.custom_V is None:
        raise NotImplementedError("custom model without a differentiable evaluator")
    if (k1, k2) == (0, 0):
        return potential(model, z) + 0j
    if k1 + k2 == 1:
        vx, vy = _partials(model, z)
        return 0.5 * (vx - 1j * vy) if k1 == 1 else 0.5 * (vx + 1j * vy)

    def first(zz, which):
        vx, vy = _partials(model, zz)
        return 0.5 * (vx - 1j * vy) if which == 1 else 0.5 * (vx + 1j * vy)

    # 1 = d, 2 = dbar; the outer derivative is a central difference of the inner one
    inner, outer = {(2, 0): (1, 1), (0, 2): (2, 2), (1, 1): (2, 1)}[(k1, k2)]
    fx = (first(z + h, inner) - first(z - h, inner)) / (2 * h)
    fy = (first(z + 1j * h, inner) - first(z - 1j * h, inner)) / (2 * h)
    return 0.5 * (fx - 1j * fy) if outer == 1 else 0.5 * (fx + 1j * fy)


def _slope_holds(ratio, radii, tol):
    # the bound holds with a finite constant when the required C stops growing
    upper = radii >= radii.max() / 10.0
    pos = ratio[upper] > 0
    if pos.sum() < 2:
        return True
    slope = np.polyfit(np.log1p(radii[upper][pos]), np.log(ratio[upper][pos]), 1)[0]
    return slope <= tol


def verify_growth(model, order, grid, *, slope_tol=0.1):
    """Check |d^k1 dbar^k2 V(z)| <= C (1+|z|)^(2+alpha-k1-k2) on |z| in ``grid``.

    Returns ``(holds, fitted_C)``. Gauge invariance makes the modulus of
    every Wirtinger derivative radial, so real z suffices.
    """
    k1, k2 = order
    radii = np.asarray(grid, dtype=float)
    d = np.abs(wirtinger_derivatives(model, radii + 0j, k1, k2))
    ratio = d / (1.0 + radii) ** (2.0 + model.alpha - k1 - k2)
    return bool(_slope_holds(ratio, radii, slope_tol)), float(np.max(ratio))


def verify_defocus(model, grid, *, slope_tol=0.1, n_angles=8):
    """Check V(z) >= -C (1+|z|)^beta_defocus on a polar grid; returns (holds, C)."""
    radii = np.asarray(grid, dtype=float)
    theta = np.linspace(0.0, 2 * math.pi, n_angles, endpoint=False)
    z = radii[:, None] * np.exp(1j * theta)[None, :]
    v = np.min(np.asarray(potential(model, z)), axis=1)
    need = np.maximum(-v, 0.0) / (1.0 + radii) ** model.beta_defocus
    return bool(_slope_holds(need, radii, slope_tol)), float(np.max(need))
