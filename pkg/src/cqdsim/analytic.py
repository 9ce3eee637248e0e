"""Closed-form spin-flip probability used as an oracle for the simulation.

The probability is ``exp(-sqrt((c_r0/I)^2 + c_rs^2) - c_rr I^3)`` where the
three coefficients describe null-point rotation, rotation saturation by the
nuclear field, and resonant rotation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import K39, ChamberGeometry, HyperfineFields, PhysicalConstants, derived_hyperfine_fields

MEAN_THETA_N = 5.0 * np.pi / 8.0


def mean_theta_n() -> float:
    """Mean nuclear polar angle under the ``(1 - cos theta)/4 pi`` density."""
    return MEAN_THETA_N


@dataclass(frozen=True)
class ClosedFormCoefficients:
    c_r0: float  # A
    c_rs: float  # dimensionless
    c_rr: float  # 1/A^3


def coefficients(
    geom: ChamberGeometry,
    constants: PhysicalConstants = K39,
    hyperfine: HyperfineFields | None = None,
) -> ClosedFormCoefficients:
    if hyperfine is None:
        hyperfine = derived_hyperfine_fields(constants)
    B_e, B_n = hyperfine.B_e, hyperfine.B_n
    if B_e < 0 or B_n < 0:
        raise ValueError("hyperfine field magnitudes must be non-negative")
    mu0, ge, gn = constants.mu0, constants.gamma_e, constants.gamma_n
    z_a, v, B_r = geom.z_a, geom.v, geom.B_r
    th = MEAN_THETA_N
    axial = B_r + B_n * np.cos(th)
    transverse = B_n * np.sin(th)
    if not axial > 0:
        raise ValueError("remnant field must exceed the axial nuclear field")
    c_r0 = abs(ge) * 2.0 * np.pi**2 * z_a**2 / (mu0 * v) * axial**2
    c_rs = abs(ge) * np.pi * z_a / v * transverse
    c_rr = mu0**3 * ge**2 * gn / (32.0 * np.pi * v**3) * B_e * transverse**5 / axial**6
    return ClosedFormCoefficients(float(c_r0), float(c_rs), float(c_rr))


def w_analytic(I_w, coeffs: ClosedFormCoefficients):
    """Closed-form flip probability at wire current(s) ``I_w`` (A)."""
    I = np.asarray(I_w, dtype=float)
    if np.any(~(I > 0)):
        raise ValueError("wire current must be positive")
    w = np.exp(-np.sqrt((coeffs.c_r0 / I) ** 2 + coeffs.c_rs**2) - coeffs.c_rr * I**3)
    return w if w.ndim else float(w)
