"""Adaptive three-stage Radau IIA integrator (order 5) in pure Python.

The collocation system is solved by simplified Newton iteration with a
fresh Jacobian every step.  As in RADAU5 the 3n x 3n Newton matrix is
block-diagonalised through the eigenvectors of A^-1, leaving one real and
one complex n x n system.  Step control, the
embedded error estimate and the cubic dense output follow Hairer & Wanner's
RADAU5.  The compiled kernel in ``_kernel.pyx`` implements the same
algorithm for the reduced spin system; this module is the fallback and the
general-purpose route for other right-hand sides.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

S6 = 6.0**0.5
C = np.array([(4.0 - S6) / 10.0, (4.0 + S6) / 10.0, 1.0])
A = np.array(
    [
        [(88.0 - 7.0 * S6) / 360.0, (296.0 - 169.0 * S6) / 1800.0, (-2.0 + 3.0 * S6) / 225.0],
        [(296.0 + 169.0 * S6) / 1800.0, (88.0 + 7.0 * S6) / 360.0, (-2.0 - 3.0 * S6) / 225.0],
        [(16.0 - S6) / 36.0, (16.0 + S6) / 36.0, 1.0 / 9.0],
    ]
)
E = np.array([-13.0 - 7.0 * S6, -13.0 + 7.0 * S6, -1.0]) / 3.0
MU_REAL = 3.0 + 3.0 ** (2.0 / 3.0) - 3.0 ** (1.0 / 3.0)
# maps stage increments to the coefficients of x, x^2, x^3 in the dense output
P = np.array(
    [
        [13.0 / 3.0 + 7.0 * S6 / 3.0, -23.0 / 3.0 - 22.0 * S6 / 3.0, 10.0 / 3.0 + 5.0 * S6],
        [13.0 / 3.0 - 7.0 * S6 / 3.0, -23.0 / 3.0 + 22.0 * S6 / 3.0, 10.0 / 3.0 - 5.0 * S6],
        [1.0 / 3.0, -8.0 / 3.0, 10.0 / 3.0],
    ]
)



def _transform():
    lam, vec = np.linalg.eig(np.linalg.inv(A))
    r = int(np.argmin(np.abs(lam.imag)))
    c = int(np.argmax(lam.imag))
    T = np.column_stack([vec[:, r].real, vec[:, c].real, vec[:, c].imag])
    return T, np.linalg.inv(T), float(lam[r].real), complex(lam[c].real, -lam[c].imag)


# T^-1 A^-1 T = [[MU_REAL, 0, 0], [0, a, b], [0, -b, a]] with MU_COMPLEX = a - ib
T, TI, _mu_real, MU_COMPLEX = _transform()
assert abs(_mu_real - MU_REAL) < 1e-12
TI_REAL = TI[0]
TI_COMPLEX = TI[1] + 1j * TI[2]

NEWTON_MAXITER = 6
EPS = np.finfo(float).eps
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
MAX_STEPS = 50_000_000


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot continue; ``t`` is the failure time."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t!r}")
        self.t = t


@dataclass
class RadauResult:
    t: np.ndarray
    y: np.ndarray  # shape (len(t), n)
    n_steps: int
    n_rejected: int
    n_fev: int


def _rms(x):
    return float(np.sqrt(np.mean(x * x)))


def newton_tolerance(rtol: float) -> float:
    return max(10.0 * np.finfo(float).eps / rtol, min(0.03, rtol**0.5))


def initial_step(fun, t0, y0, f0, rtol, atol, interval, max_step, order=3):
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, interval)
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100.0 * h0, h1, interval, max_step)


def _predict_factor(h, h_old, err, err_old):
    if err_old is None or h_old is None or err == 0.0 or err_old == 0.0:
        mult = 1.0
    else:
        mult = h / h_old * (err_old / err) ** 0.25
    with np.errstate(divide="ignore"):
        return min(1.0, mult) * err**-0.25


def solve_radau(
    fun,
    jac,
    t_span,
    y0,
    t_eval,
    rtol: float = 1e-8,
    atol: float = 1e-8,
    max_step: float = np.inf,
    first_step: float | None = None,
) -> RadauResult:
    """Integrate ``y' = fun(t, y)`` forward over ``t_span``.

    Parameters
    ----------
    fun, jac : callable
        Right-hand side ``fun(t, y) -> (n,)`` and its Jacobian
        ``jac(t, y) -> (n, n)``.
    t_span : (float, float)
        Start and end time, ``t_span[1] > t_span[0]``.
    y0 : array_like
        Initial state.
    t_eval : array_like
        Ascending output times inside ``t_span``; values come from the
        collocation polynomial of the step that covers them.

    Raises
    ------
    IntegrationError
        On step-size underflow, a non-finite Jacobian, or when the step
        budget is exhausted.
    """
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y = np.array(y0, dtype=float)
    n = y.size
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.size and (t_eval[0] < t0 or t_eval[-1] > t1 or np.any(np.diff(t_eval) < 0)):
        raise ValueError("t_eval must be ascending and inside t_span")
    out = np.empty((t_eval.size, n))
    k_out = 0
    while k_out < t_eval.size and t_eval[k_out] == t0:
        out[k_out] = y
        k_out += 1

    n_fev = 0

    def f(tt, yy):
        nonlocal n_fev
        n_fev += 1
        return np.asarray(fun(tt, yy), dtype=float)

    I_n = np.eye(n)
    newton_tol = newton_tolerance(rtol)
    t = t0
    fy = f(t, y)
    if first_step is None:
        h = initial_step(f, t, y, fy, rtol, atol, t1 - t0, max_step)
    else:
        h = min(first_step, max_step, t1 - t0)
    h_old = None
    err_old = None
    faccon = 1.0
    Q_prev = None  # dense-output polynomial of the previous step
    t_prev = h_prev = None
    y_prev = None
    n_steps = n_rej = 0

    while t < t1:
        if n_steps + n_rej >= MAX_STEPS:
            raise IntegrationError("step budget exhausted", t)
        min_step = 10.0 * abs(np.nextafter(t, np.inf) - t)
        J = np.asarray(jac(t, y), dtype=float)
        if not np.all(np.isfinite(J)):
            raise IntegrationError("non-finite Jacobian", t)
        rejected = False
        while True:
            if not h >= min_step:  # also catches a NaN step
                raise IntegrationError("step size underflow", t)
            t_new = t + h
            if t_new >= t1:
                t_new = t1
            h = t_new - t

            if Q_prev is None:
                Z = np.zeros((3, n))
            else:
                x = (t + h * C - t_prev) / h_prev
                Z = (Q_prev @ np.vstack([x, x**2, x**3])).T + (y_prev - y)

            lu_real = lu_factor(MU_REAL / h * I_n - J)
            lu_cplx = lu_factor(MU_COMPLEX / h * I_n - J)
            scale = atol + np.abs(y) * rtol
            W = TI @ Z
            # contraction estimate carried over from earlier steps lets a
            # well-predicted step converge after a single iteration
            faccon = max(faccon, EPS) ** 0.8
            converged = False
            dw_old = None
            n_iter = 0
            for k in range(NEWTON_MAXITER):
                n_iter = k + 1
                F = np.array([f(t + C[i] * h, y + Z[i]) for i in range(3)])
                if not np.all(np.isfinite(F)):
                    break
                dw_real = lu_solve(lu_real, F.T @ TI_REAL - MU_REAL / h * W[0])
                dw_cplx = lu_solve(lu_cplx, F.T @ TI_COMPLEX - MU_COMPLEX / h * (W[1] + 1j * W[2]))
                dW = np.array([dw_real, dw_cplx.real, dw_cplx.imag])
                dw_norm = _rms(dW / scale)
                if dw_old is not None:
                    rate = dw_norm / dw_old
                    if not rate < 1.0 or rate ** (NEWTON_MAXITER - k) / (1.0 - rate) * dw_norm > newton_tol:
                        break
                    faccon = rate / (1.0 - rate)
                W += dW
                Z = T @ W
                if faccon * dw_norm <= newton_tol:
                    converged = True
                    break
                dw_old = max(dw_norm, EPS)
            if not converged:
                h *= 0.5
                rejected = True
                continue

            y_new = y + Z[2]
            ZE = (E @ Z) / h
            err = lu_solve(lu_real, fy + ZE)
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err_norm = _rms(err / scale)
            safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + n_iter)
            if rejected and not err_norm <= 1.0:
                err = lu_solve(lu_real, f(t, y + err) + ZE)
                err_norm = _rms(err / scale)
            if not err_norm <= 1.0:
                factor = safety * _predict_factor(h, h_old, err_norm, err_old)
                h *= factor if factor >= MIN_FACTOR else MIN_FACTOR
                rejected = True
                n_rej += 1
                continue
            break

        factor = min(MAX_FACTOR, safety * _predict_factor(h, h_old, err_norm, err_old))
        Q = Z.T @ P
        while k_out < t_eval.size and t_eval[k_out] <= t_new:
            x = (t_eval[k_out] - t) / h
            out[k_out] = y + Q @ np.array([x, x * x, x * x * x])
            k_out += 1
        Q_prev, t_prev, h_prev, y_prev = Q, t, h, y
        h_old, err_old = h, err_norm
        t, y = t_new, y_new
        fy = f(t, y)
        n_steps += 1
        h = min(h * factor, max_step)

    return RadauResult(t=t_eval.copy(), y=out, n_steps=n_steps, n_rejected=n_rej, n_fev=n_fev)
