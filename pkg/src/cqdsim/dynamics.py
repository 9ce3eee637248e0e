"""Coupled electron-nuclear Bloch dynamics and the per-atom integrator.

The reduced system keeps the nuclear polar angle fixed and evolves the
electron moment as a Cartesian unit vector plus the nuclear azimuth,
``y = (e_x, e_y, e_z, phi_n)``.  This is the same dynamics as the angular
equations but stays regular at theta_e in {0, pi}, where every atom starts.

Two integration backends exist: the compiled Radau kernel (``_kernel``) and
the pure-Python :func:`cqdsim.radau.solve_radau`.  The compiled one is used
whenever it imports, unless ``CQDSIM_BACKEND=python`` is set.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import radau
from .core import K39, ChamberGeometry, MomentState, PhysicalConstants, derived_hyperfine_fields
from .field import quadrupole_path_coefficients
from .radau import IntegrationError

try:
    from . import _kernel
except ImportError:  # pragma: no cover - depends on the build
    _kernel = None

AVAILABLE_BACKENDS = ("compiled", "python") if _kernel is not None else ("python",)
DEFAULT_BACKEND = "python" if _kernel is None or os.environ.get("CQDSIM_BACKEND") == "python" else "compiled"

AVERAGING_WINDOW = 2e-6
# |sin(theta)| at or below this counts as a pole (sin(pi) is 1.2e-16 in floats)
POLE_TOL = 1e-15

__all__ = [
    "OdeSettings",
    "TrajectoryResult",
    "IntegrationError",
    "ReducedSystem",
    "rhs_full",
    "rhs_reduced",
    "integrate_atom",
    "integrate_linear_field",
    "integrate_full",
    "final_polar_angle",
    "total_spin",
]


@dataclass(frozen=True)
class OdeSettings:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-8
    max_step: float = 1e-7
    dense_output_step: float = 10e-9

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            tol = getattr(self, name)
            if not 0.0 < tol <= 1e-3:
                raise ValueError(f"{name} must lie in (0, 1e-3], got {tol!r}")
        if not self.dense_output_step > 0:
            raise ValueError("dense_output_step must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


@dataclass(frozen=True)
class TrajectoryResult:
    """Dense samples of one atom's passage through the chamber.

    ``mu_e`` holds the raw Cartesian electron vector from the integrator
    (not renormalised); the angle arrays are derived from it.
    """

    times: np.ndarray
    theta_e: np.ndarray
    phi_e: np.ndarray
    phi_n: np.ndarray
    theta_n0: float
    theta_e_final: float
    mu_e: np.ndarray
    n_steps: int = 0


# ---------------------------------------------------------------------------
# right-hand sides


def rhs_full(state: MomentState, B_ext, constants: PhysicalConstants = K39):
    """Time derivatives of both unit vectors under field ``B_ext``.

    Each moment precesses about the external field plus the torque-averaged
    field of its partner.

    Returns
    -------
    (ndarray, ndarray)
        ``d mu_e_hat/dt`` and ``d mu_n_hat/dt`` (1/s).
    """
    hf = derived_hyperfine_fields(constants)
    B = np.asarray(B_ext, dtype=float).reshape(3)
    e, n = state.mu_e_hat, state.mu_n_hat
    de = constants.gamma_e * np.cross(e, B + hf.B_n * n)
    dn = constants.gamma_n * np.cross(n, B + hf.B_e * e)
    return de, dn


def _full_rhs_vec(y, B, ge, gn, Be, Bn):
    e, n = y[:3], y[3:]
    return np.concatenate([ge * np.cross(e, B + Bn * n), gn * np.cross(n, B + Be * e)])


def _cross_matrix(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _full_jac(y, B, ge, gn, Be, Bn):
    e, n = y[:3], y[3:]
    J = np.empty((6, 6))
    # d(e x h)/de = -[h]x ; d(e x (c n))/dn = c [e]x
    J[:3, :3] = -ge * _cross_matrix(B + Bn * n)
    J[:3, 3:] = ge * Bn * _cross_matrix(e)
    J[3:, :3] = gn * Be * _cross_matrix(n)
    J[3:, 3:] = -gn * _cross_matrix(B + Be * e)
    return J


def total_spin(mu_e_hat, mu_n_hat, constants: PhysicalConstants = K39):
    """Combined angular momentum ``(mu_e/gamma_e) e + (mu_n/gamma_n) n``."""
    return (constants.mu_e / constants.gamma_e) * np.asarray(mu_e_hat) + (
        constants.mu_n / constants.gamma_n
    ) * np.asarray(mu_n_hat)


def rhs_reduced(angles, t: float, I_w: float, geom: ChamberGeometry, constants: PhysicalConstants = K39):
    """Angular derivatives of the reduced system on the quadrupole beam path.

    ``angles = (theta_e, phi_e, theta_n, phi_n)``; ``d theta_n/dt`` is 0.

    At a pole (``|sin theta| <= POLE_TOL``, or wherever the cotangent term
    overflows) the azimuth is conventional, so only the axial precession part
    of its rate is returned, and the electron polar rate is taken from the
    Cartesian torque (the moment can only move off the pole).
    """
    theta_e, phi_e, theta_n, phi_n = map(float, angles)
    B0, B1 = quadrupole_path_coefficients(I_w, geom, constants.mu0)
    Bx, By, Bz = B0 + B1 * t
    hf = derived_hyperfine_fields(constants)
    ge, gn = constants.gamma_e, constants.gamma_n
    Be, Bn = hf.B_e, hf.B_n
    se, ce = np.sin(theta_e), np.cos(theta_e)
    sn, cn = np.sin(theta_n), np.cos(theta_n)

    def pole_e():
        e = np.array([0.0, 0.0, np.sign(ce)])
        n = np.array([sn * np.cos(phi_n), sn * np.sin(phi_n), cn])
        de = ge * np.cross(e, np.array([Bx, By, Bz]) + Bn * n)
        # leaving the north pole raises theta, leaving the south pole lowers it
        return np.sign(ce) * np.hypot(de[0], de[1]), -ge * (Bz + Bn * cn)

    dtheta_e = dphi_e = np.nan
    if abs(se) > POLE_TOL:
        with np.errstate(over="ignore", invalid="ignore"):
            dtheta_e = -ge * (By * np.cos(phi_e) - Bx * np.sin(phi_e) + Bn * sn * np.sin(phi_n - phi_e))
            dphi_e = -ge * (
                Bz + Bn * cn - ce / se * (Bx * np.cos(phi_e) + By * np.sin(phi_e) + Bn * sn * np.cos(phi_e - phi_n))
            )
    if not (np.isfinite(dtheta_e) and np.isfinite(dphi_e)):
        dtheta_e, dphi_e = pole_e()

    dphi_n = np.nan
    if abs(sn) > POLE_TOL:
        with np.errstate(over="ignore", invalid="ignore"):
            dphi_n = -gn * (
                Bz + Be * ce - cn / sn * (Bx * np.cos(phi_n) + By * np.sin(phi_n) + Be * se * np.cos(phi_e - phi_n))
            )
    if not np.isfinite(dphi_n):
        dphi_n = -gn * (Bz + Be * ce)
    return np.array([dtheta_e, dphi_e, 0.0, dphi_n])


@dataclass(frozen=True)
class ReducedSystem:
    """Parameters of the reduced Cartesian system with field ``B0 + B1 t``."""

    gamma_e: float
    gamma_n: float
    B_e: float
    B_n: float
    theta_n0: float
    B0: tuple
    B1: tuple

    @classmethod
    def for_chamber(cls, theta_n0, I_w, geom, constants: PhysicalConstants = K39):
        hf = derived_hyperfine_fields(constants)
        B0, B1 = quadrupole_path_coefficients(I_w, geom, constants.mu0)
        return cls(constants.gamma_e, constants.gamma_n, hf.B_e, hf.B_n, float(theta_n0), tuple(B0), tuple(B1))

    def kernel_params(self):
        sn, cn = np.sin(self.theta_n0), np.cos(self.theta_n0)
        return np.array(
            [self.gamma_e, self.gamma_n, self.B_e, self.B_n, cn, sn, cn / sn, *self.B0, *self.B1], dtype=float
        )

    def rhs(self, t, y):
        ge, gn, Be, Bn = self.gamma_e, self.gamma_n, self.B_e, self.B_n
        sn, cn = np.sin(self.theta_n0), np.cos(self.theta_n0)
        bx = self.B0[0] + self.B1[0] * t
        by = self.B0[1] + self.B1[1] * t
        bz = self.B0[2] + self.B1[2] * t
        ex, ey, ez, pn = y
        cp, sp = np.cos(pn), np.sin(pn)
        hx, hy, hz = bx + Bn * sn * cp, by + Bn * sn * sp, bz + Bn * cn
        return np.array(
            [
                ge * (ey * hz - ez * hy),
                ge * (ez * hx - ex * hz),
                ge * (ex * hy - ey * hx),
                -gn * (bz + Be * ez - cn / sn * (bx * cp + by * sp + Be * (ex * cp + ey * sp))),
            ]
        )

    def jac(self, t, y):
        ge, gn, Be, Bn = self.gamma_e, self.gamma_n, self.B_e, self.B_n
        sn, cn = np.sin(self.theta_n0), np.cos(self.theta_n0)
        cot = cn / sn
        bx = self.B0[0] + self.B1[0] * t
        by = self.B0[1] + self.B1[1] * t
        bz = self.B0[2] + self.B1[2] * t
        ex, ey, ez, pn = y
        cp, sp = np.cos(pn), np.sin(pn)
        h = np.array([bx + Bn * sn * cp, by + Bn * sn * sp, bz + Bn * cn])
        g = Bn * sn * np.array([-sp, cp, 0.0])
        J = np.zeros((4, 4))
        J[:3, :3] = -ge * _cross_matrix(h)
        J[:3, 3] = ge * np.cross([ex, ey, ez], g)
        J[3, 0] = gn * cot * Be * cp
        J[3, 1] = gn * cot * Be * sp
        J[3, 2] = -gn * Be
        J[3, 3] = gn * cot * (-bx * sp + by * cp + Be * (ey * cp - ex * sp))
        return J


# ---------------------------------------------------------------------------
# integration


def _dense_grid(t0, t1, step):
    n = int(np.floor((t1 - t0) / step * (1.0 + 1e-12))) + 1
    grid = t0 + step * np.arange(n)
    grid = grid[grid <= t1]
    if t1 - grid[-1] > 1e-9 * step:
        grid = np.append(grid, t1)
    return grid


def _solve(system: ReducedSystem, y0, t0, t1, t_eval, settings: OdeSettings, backend: str):
    if backend == "compiled":
        if _kernel is None:
            raise RuntimeError("compiled backend is not available")
        out, n_steps, n_rej, n_fev, status, t_fail = _kernel.integrate_reduced(
            t0,
            t1,
            np.ascontiguousarray(y0, dtype=float),
            system.kernel_params(),
            settings.rel_tol,
            settings.abs_tol,
            settings.max_step,
            np.ascontiguousarray(t_eval, dtype=float),
        )
        if status == 1:
            raise IntegrationError("step size underflow", t_fail)
        if status == 2:
            raise IntegrationError("step budget exhausted", t_fail)
        if status == 3:
            raise IntegrationError("non-finite Jacobian", t_fail)
        if status != 0:
            raise IntegrationError(f"kernel failure (status {status})", t_fail)
        return out, n_steps
    if backend == "python":
        res = radau.solve_radau(
            system.rhs,
            system.jac,
            (t0, t1),
            y0,
            t_eval,
            rtol=settings.rel_tol,
            atol=settings.abs_tol,
            max_step=settings.max_step,
        )
        return res.y, res.n_steps
    raise ValueError(f"unknown backend {backend!r}")


def integrate_linear_field(
    y0,
    system: ReducedSystem,
    t_span,
    settings: OdeSettings = OdeSettings(),
    t_eval=None,
    backend: str | None = None,
):
    """Integrate the reduced Cartesian system; returns ``(t_eval, y, n_steps)``."""
    t0, t1 = map(float, t_span)
    if t_eval is None:
        t_eval = _dense_grid(t0, t1, settings.dense_output_step)
    t_eval = np.asarray(t_eval, dtype=float)
    y, n_steps = _solve(system, y0, t0, t1, t_eval, settings, backend or DEFAULT_BACKEND)
    return t_eval, y, n_steps


def final_polar_angle(traj: TrajectoryResult, window: float = AVERAGING_WINDOW) -> float:
    """Mean of ``theta_e`` over the last ``window`` seconds of a trajectory."""
    return _window_mean(traj.times, traj.theta_e, window)


def _window_mean(times, theta, window):
    times = np.asarray(times)
    if not window > 0:
        raise ValueError("averaging window must be positive")
    if times.size == 0 or times[-1] - times[0] < window * (1.0 - 1e-9):
        raise ValueError("averaging window is longer than the trajectory")
    sel = times >= times[-1] - window * (1.0 + 1e-9)
    if not np.any(sel):
        raise ValueError("no samples inside the averaging window")
    return float(np.clip(np.mean(np.asarray(theta)[sel]), 0.0, np.pi))


def integrate_atom(
    init: MomentState,
    I_w: float,
    geom: ChamberGeometry,
    constants: PhysicalConstants = K39,
    settings: OdeSettings = OdeSettings(),
    window: float = AVERAGING_WINDOW,
    backend: str | None = None,
) -> TrajectoryResult:
    """Carry one atom through the chamber under the on-path quadrupole field.

    The nuclear polar angle of ``init`` is held fixed; integration spans the
    full transit ``[-d/2v, d/2v]`` and ``theta_e_final`` is the mean polar
    angle over the final ``window``.

    Raises
    ------
    ValueError
        If the nuclear moment sits on a pole (its azimuth rate is undefined).
    IntegrationError
        If the integrator fails; carries the failure time.
    """
    theta_n0, phi_n0 = init.nuclear_angles
    if np.sin(theta_n0) == 0.0:
        raise ValueError("nuclear moment must not lie on the z axis")
    system = ReducedSystem.for_chamber(theta_n0, I_w, geom, constants)
    half = geom.half_transit
    y0 = np.array([*init.mu_e_hat, phi_n0])
    t, y, n_steps = integrate_linear_field(y0, system, (-half, half), settings, backend=backend)
    mu_e = y[:, :3]
    theta_e = np.arctan2(np.hypot(mu_e[:, 0], mu_e[:, 1]), mu_e[:, 2])
    phi_e = np.where(
        np.hypot(mu_e[:, 0], mu_e[:, 1]) == 0.0, 0.0, np.mod(np.arctan2(mu_e[:, 1], mu_e[:, 0]), 2.0 * np.pi)
    )
    return TrajectoryResult(
        times=t,
        theta_e=theta_e,
        phi_e=phi_e,
        phi_n=y[:, 3],
        theta_n0=theta_n0,
        theta_e_final=_window_mean(t, theta_e, window),
        mu_e=mu_e,
        n_steps=n_steps,
    )


def integrate_full(
    init: MomentState,
    B_ext,
    t_span,
    t_eval,
    constants: PhysicalConstants = K39,
    settings: OdeSettings = OdeSettings(),
):
    """Integrate both Cartesian unit vectors under a constant external field.

    Returns ``(t_eval, mu_e, mu_n)`` with arrays of shape ``(len(t_eval), 3)``.
    Uses the pure-Python Radau route.
    """
    hf = derived_hyperfine_fields(constants)
    B = np.asarray(B_ext, dtype=float).reshape(3)
    args = (B, constants.gamma_e, constants.gamma_n, hf.B_e, hf.B_n)
    res = radau.solve_radau(
        lambda t, y: _full_rhs_vec(y, *args),
        lambda t, y: _full_jac(y, *args),
        t_span,
        np.concatenate([init.mu_e_hat, init.mu_n_hat]),
        t_eval,
        rtol=settings.rel_tol,
        atol=settings.abs_tol,
        max_step=settings.max_step,
    )
    return res.t, res.y[:, :3], res.y[:, 3:]
