"""Physical constants, chamber geometry and moment-orientation types.

Everything here is immutable and shared by the field, dynamics and sweep
modules.  Moments are stored as Cartesian unit vectors; the spherical angles
are a derived view because the polar initial condition theta_e = pi sits on
the coordinate singularity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: vacuum permeability, CODATA 2018 (T m / A)
MU0 = 1.25663706212e-6

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class PhysicalConstants:
    """Species parameters entering the coupled Bloch equations.

    Defaults are the potassium-39 values (point values, uncertainties dropped).
    """

    mu0: float = MU0
    gamma_e: float = -1.76085963023e11
    gamma_n: float = 1.2500612e7
    mu_e: float = 9.2847677043e-24
    mu_n: float = 1.97723e-27
    R: float = 275e-12
    S: float = 0.5
    I: float = 1.5

    def __post_init__(self):
        if not self.gamma_e < 0:
            raise ValueError("gamma_e must be negative")
        if not self.gamma_n > 0:
            raise ValueError("gamma_n must be positive")
        # mu_n = 0 is allowed so the hyperfine coupling can be switched off
        if not (self.mu_e > 0 and self.mu_n >= 0 and self.R > 0 and self.mu0 > 0):
            raise ValueError("moments, radius and mu0 must be positive")

    def larmor_e(self, B: float) -> float:
        """Electron Larmor angular frequency |gamma_e B| (rad/s)."""
        return abs(self.gamma_e * B)

    def larmor_n(self, B: float) -> float:
        """Nuclear Larmor angular frequency |gamma_n B| (rad/s)."""
        return abs(self.gamma_n * B)


K39 = PhysicalConstants()


@dataclass(frozen=True)
class HyperfineFields:
    """Torque-averaged field magnitudes each moment exerts on the other (T)."""

    B_e: float
    B_n: float


def derived_hyperfine_fields(constants: PhysicalConstants = K39) -> HyperfineFields:
    """Return the electron- and nucleus-generated field magnitudes.

    Both use the torque-averaged dipole form ``5 mu0 mu / (16 pi R^3)``.
    """
    pref = 5.0 * constants.mu0 / (16.0 * np.pi * constants.R**3)
    return HyperfineFields(B_e=pref * constants.mu_e, B_n=pref * constants.mu_n)


@dataclass(frozen=True)
class ChamberGeometry:
    """Inner rotation chamber parameters.

    Attributes
    ----------
    z_a : float
        Depth of the wire below the beam (m).
    d : float
        Chamber length along the beam (m).
    v : float
        Atom speed (m/s).
    B_r : float
        Remnant field along +z (T).
    """

    z_a: float = 105e-6
    d: float = 16.3e-3
    v: float = 800.0
    B_r: float = 42e-6

    def __post_init__(self):
        for name in ("z_a", "d", "v", "B_r"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"ChamberGeometry.{name} must be positive, got {val!r}")

    @property
    def half_transit(self) -> float:
        """Half the chamber transit time d / (2 v) (s)."""
        return self.d / (2.0 * self.v)


FRISCH_SEGRE = ChamberGeometry()


def unit_from_angles(polar, azimuth):
    """Unit vector(s) from spherical angles; broadcasts over array inputs."""
    polar = np.asarray(polar, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    s = np.sin(polar)
    return np.stack([s * np.cos(azimuth), s * np.sin(azimuth), np.cos(polar)], axis=-1)


def angles_from_unit(vec, tol: float = UNIT_TOL) -> tuple[float, float]:
    """Polar angle in [0, pi] and azimuth in [0, 2 pi) of a unit 3-vector.

    Raises
    ------
    ValueError
        If ``|vec|`` differs from one by more than ``tol``.
    """
    x, y, z = (float(c) for c in np.asarray(vec, dtype=float).reshape(3))
    norm = np.sqrt(x * x + y * y + z * z)
    if not abs(norm - 1.0) <= tol:
        raise ValueError(f"expected a unit vector, got norm {norm!r}")
    rho = np.hypot(x, y)
    polar = float(np.arctan2(rho, z))
    if rho == 0.0:
        return polar, 0.0
    azimuth = float(np.arctan2(y, x)) % (2.0 * np.pi)
    # x % 2pi can round up to exactly 2pi for tiny negative x
    if azimuth >= 2.0 * np.pi:
        azimuth = 0.0
    return polar, azimuth


@dataclass(frozen=True)
class MomentState:
    """Orientation of the electron and nuclear moments of one atom."""

    mu_e_hat: np.ndarray = field(repr=False)
    mu_n_hat: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("mu_e_hat", "mu_n_hat"):
            vec = np.array(getattr(self, name), dtype=float).reshape(3)
            if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a unit vector")
            vec.flags.writeable = False
            object.__setattr__(self, name, vec)

    @classmethod
    def from_angles(cls, theta_e, phi_e, theta_n, phi_n) -> "MomentState":
        return cls(unit_from_angles(theta_e, phi_e), unit_from_angles(theta_n, phi_n))

    @property
    def electron_angles(self) -> tuple[float, float]:
        return angles_from_unit(self.mu_e_hat)

    @property
    def nuclear_angles(self) -> tuple[float, float]:
        return angles_from_unit(self.mu_n_hat)

    def __repr__(self):
        te, pe = self.electron_angles
        tn, pn = self.nuclear_angles
        return f"MomentState(theta_e={te:.6g}, phi_e={pe:.6g}, theta_n={tn:.6g}, phi_n={pn:.6g})"
