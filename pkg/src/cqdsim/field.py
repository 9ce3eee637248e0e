"""Magnetic field inside the inner rotation chamber.

All fields lie in the yz plane (``B_x = 0``).  Field-valued functions return
arrays whose last axis holds ``(B_x, B_y, B_z)`` in tesla and broadcast over
array-valued positions or times.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import K39, ChamberGeometry, PhysicalConstants

MU0 = K39.mu0


@dataclass(frozen=True)
class NullPoint:
    """Where (and when, along the beam) the total field vanishes."""

    y_NP: float
    t_NP: float


def _stack(by, bz):
    by, bz = np.broadcast_arrays(np.asarray(by, dtype=float), np.asarray(bz, dtype=float))
    return np.stack([np.zeros_like(by), by, bz], axis=-1)


def _check_current(I_w):
    if not I_w > 0:
        raise ValueError(f"wire current must be positive, got {I_w!r}")


def wire_field(y, z, I_w: float, geom: ChamberGeometry, mu0: float = MU0):
    """Field of the infinite straight wire running along -x at z = -z_a."""
    y = np.asarray(y, dtype=float)
    zz = np.asarray(z, dtype=float) + geom.z_a
    r2 = zz * zz + y * y
    if np.any(r2 == 0.0):
        raise ValueError("field is singular at the wire location")
    pref = mu0 * I_w / (2.0 * np.pi * r2)
    return _stack(pref * zz, -pref * y)


def total_field(y, z, I_w: float, geom: ChamberGeometry, mu0: float = MU0):
    """Wire field plus the uniform remnant field ``B_r`` along +z."""
    B = wire_field(y, z, I_w, geom, mu0)
    B[..., 2] += geom.B_r
    return B


def _check_window(t, geom):
    half = geom.half_transit * (1.0 + 1e-12)
    if np.any(np.abs(t) > half):
        raise ValueError(f"time outside chamber window [-{geom.half_transit:.6g}, {geom.half_transit:.6g}] s")


def field_on_path(t, I_w: float, geom: ChamberGeometry, mu0: float = MU0):
    """Total field seen by an atom on the beam axis (z = 0) at time ``t``."""
    t = np.asarray(t, dtype=float)
    _check_window(t, geom)
    return total_field(geom.v * t, 0.0, I_w, geom, mu0)


def null_point(I_w: float, geom: ChamberGeometry, mu0: float = MU0) -> NullPoint:
    _check_current(I_w)
    y_np = mu0 * I_w / (2.0 * np.pi * geom.B_r)
    return NullPoint(y_NP=y_np, t_NP=y_np / geom.v)


def quadrupole_gradient(I_w: float, geom: ChamberGeometry, mu0: float = MU0) -> float:
    """Field gradient ``2 pi B_r^2 / (mu0 I_w)`` of the linearised field (T/m)."""
    _check_current(I_w)
    return 2.0 * np.pi * geom.B_r**2 / (mu0 * I_w)


def quadrupole_field(y, z, I_w: float, geom: ChamberGeometry, mu0: float = MU0):
    """First-order expansion of the total field about the null point."""
    g = quadrupole_gradient(I_w, geom, mu0)
    y_np = null_point(I_w, geom, mu0).y_NP
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return _stack(g * (z + geom.z_a), g * (y - y_np))


def quadrupole_on_path(t, I_w: float, geom: ChamberGeometry, mu0: float = MU0):
    """Quadrupole field along the beam path; ``B_z`` is linear in time."""
    g = quadrupole_gradient(I_w, geom, mu0)
    t_np = null_point(I_w, geom, mu0).t_NP
    t = np.asarray(t, dtype=float)
    return _stack(g * geom.z_a, g * geom.v * (t - t_np))


def quadrupole_path_coefficients(I_w: float, geom: ChamberGeometry, mu0: float = MU0):
    """``(B0, B1)`` such that the on-path quadrupole field is ``B0 + B1 t``.

    This linear-in-time form is what the integration kernels consume.
    """
    g = quadrupole_gradient(I_w, geom, mu0)
    t_np = null_point(I_w, geom, mu0).t_NP
    B0 = np.array([0.0, g * geom.z_a, -g * geom.v * t_np])
    B1 = np.array([0.0, 0.0, g * geom.v])
    return B0, B1


def adiabaticity(t, I_w: float, geom: ChamberGeometry, constants: PhysicalConstants = K39):
    """Ratio of the electron Larmor rate to the field rotation rate on the beam.

    Uses the closed form for the wire plus remnant field; the nuclear field is
    neglected.  Where the field rotation rate vanishes (``t = t_NP / 2``) the
    result is ``inf``.
    """
    _check_current(I_w)
    t = np.asarray(t, dtype=float)
    mu0 = constants.mu0
    vt = geom.v * t
    r2 = vt * vt + geom.z_a**2
    c = 2.0 * np.pi * geom.B_r / (mu0 * I_w)
    lin = 1.0 - 2.0 * c * vt
    bracket = lin + c * c * r2
    num = abs(constants.gamma_e) * mu0 * I_w / (2.0 * np.pi * geom.z_a * geom.v) * np.sqrt(r2) * bracket**1.5
    with np.errstate(divide="ignore"):
        k = np.where(lin == 0.0, np.inf, num / np.abs(lin))
    return k if k.ndim else float(k)
