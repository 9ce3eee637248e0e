# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Radau IIA integrator for the reduced electron-nuclear system.

Mirrors ``cqdsim.radau.solve_radau`` step for step, specialised to the
4-component state ``(e_x, e_y, e_z, phi_n)`` and a field linear in time,
so a whole trajectory runs without touching the interpreter.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt, fabs, pow, isfinite, nextafter, INFINITY

cnp.import_array()

DEF NS = 4          # state size
DEF NZ = 12         # 3 stages x NS
DEF NEWTON_MAXITER = 6
DEF MIN_FACTOR = 0.2
DEF MAX_FACTOR = 10.0
DEF MAX_STEPS = 50000000

cdef double S6 = sqrt(6.0)
cdef double C1 = (4.0 - S6) / 10.0
cdef double C2 = (4.0 + S6) / 10.0
cdef double[3] CC
cdef double[3][3] AA
cdef double[3] EE
cdef double[3][3] PP
cdef double MU_REAL = 3.0 + pow(3.0, 2.0 / 3.0) - pow(3.0, 1.0 / 3.0)

CC[0] = C1; CC[1] = C2; CC[2] = 1.0
AA[0][0] = (88.0 - 7.0 * S6) / 360.0
AA[0][1] = (296.0 - 169.0 * S6) / 1800.0
AA[0][2] = (-2.0 + 3.0 * S6) / 225.0
AA[1][0] = (296.0 + 169.0 * S6) / 1800.0
AA[1][1] = (88.0 + 7.0 * S6) / 360.0
AA[1][2] = (-2.0 - 3.0 * S6) / 225.0
AA[2][0] = (16.0 - S6) / 36.0
AA[2][1] = (16.0 + S6) / 36.0
AA[2][2] = 1.0 / 9.0
EE[0] = (-13.0 - 7.0 * S6) / 3.0
EE[1] = (-13.0 + 7.0 * S6) / 3.0
EE[2] = -1.0 / 3.0
PP[0][0] = 13.0 / 3.0 + 7.0 * S6 / 3.0
PP[0][1] = -23.0 / 3.0 - 22.0 * S6 / 3.0
PP[0][2] = 10.0 / 3.0 + 5.0 * S6
PP[1][0] = 13.0 / 3.0 - 7.0 * S6 / 3.0
PP[1][1] = -23.0 / 3.0 + 22.0 * S6 / 3.0
PP[1][2] = 10.0 / 3.0 - 5.0 * S6
PP[2][0] = 1.0 / 3.0
PP[2][1] = -8.0 / 3.0
PP[2][2] = 10.0 / 3.0


# eigenvector transform of A^-1 shared with the pure-Python route
from .radau import T as _T, TI as _TI, MU_COMPLEX as _MU_COMPLEX

cdef double[3][3] TT
cdef double[3][3] TTI
cdef double MU_CPLX_RE = _MU_COMPLEX.real
cdef double MU_CPLX_IM = _MU_COMPLEX.imag
cdef double EPS = 2.220446049250313e-16
for _i in range(3):
    for _j in range(3):
        TT[_i][_j] = _T[_i, _j]
        TTI[_i][_j] = _TI[_i, _j]


cdef struct Params:
    double ge, gn, Be, Bn, cn, sn, cotn
    double b0x, b0y, b0z, b1x, b1y, b1z


cdef inline void rhs(const Params* p, double t, const double* y, double* dy) noexcept nogil:
    cdef double bx = p.b0x + p.b1x * t
    cdef double by = p.b0y + p.b1y * t
    cdef double bz = p.b0z + p.b1z * t
    cdef double cp = cos(y[3])
    cdef double sp = sin(y[3])
    cdef double hx = bx + p.Bn * p.sn * cp
    cdef double hy = by + p.Bn * p.sn * sp
    cdef double hz = bz + p.Bn * p.cn
    dy[0] = p.ge * (y[1] * hz - y[2] * hy)
    dy[1] = p.ge * (y[2] * hx - y[0] * hz)
    dy[2] = p.ge * (y[0] * hy - y[1] * hx)
    dy[3] = -p.gn * (bz + p.Be * y[2] - p.cotn * (bx * cp + by * sp + p.Be * (y[0] * cp + y[1] * sp)))


cdef inline void jac(const Params* p, double t, const double* y, double* J) noexcept nogil:
    # row-major NS x NS
    cdef double bx = p.b0x + p.b1x * t
    cdef double by = p.b0y + p.b1y * t
    cdef double bz = p.b0z + p.b1z * t
    cdef double cp = cos(y[3])
    cdef double sp = sin(y[3])
    cdef double hx = bx + p.Bn * p.sn * cp
    cdef double hy = by + p.Bn * p.sn * sp
    cdef double hz = bz + p.Bn * p.cn
    cdef double gx = -p.Bn * p.sn * sp
    cdef double gy = p.Bn * p.sn * cp
    cdef double ge = p.ge
    J[0] = 0.0;      J[1] = ge * hz;  J[2] = -ge * hy;  J[3] = ge * (-y[2] * gy)
    J[4] = -ge * hz; J[5] = 0.0;      J[6] = ge * hx;   J[7] = ge * (y[2] * gx)
    J[8] = ge * hy;  J[9] = -ge * hx; J[10] = 0.0;      J[11] = ge * (y[0] * gy - y[1] * gx)
    J[12] = p.gn * p.cotn * p.Be * cp
    J[13] = p.gn * p.cotn * p.Be * sp
    J[14] = -p.gn * p.Be
    J[15] = p.gn * p.cotn * (-bx * sp + by * cp + p.Be * (y[1] * cp - y[0] * sp))


cdef int lu_decomp(double* a, int n, int* piv) noexcept nogil:
    """In-place LU with partial pivoting; returns 1 if singular."""
    cdef int i, j, k, imax
    cdef double amax, tmp, f
    for k in range(n):
        imax = k
        amax = fabs(a[k * n + k])
        for i in range(k + 1, n):
            if fabs(a[i * n + k]) > amax:
                amax = fabs(a[i * n + k])
                imax = i
        piv[k] = imax
        if amax == 0.0:
            return 1
        if imax != k:
            for j in range(n):
                tmp = a[k * n + j]
                a[k * n + j] = a[imax * n + j]
                a[imax * n + j] = tmp
        for i in range(k + 1, n):
            f = a[i * n + k] / a[k * n + k]
            a[i * n + k] = f
            for j in range(k + 1, n):
                a[i * n + j] -= f * a[k * n + j]
    return 0


cdef void lu_solve(const double* a, int n, const int* piv, double* b) noexcept nogil:
    cdef int i, j
    cdef double tmp
    for i in range(n):
        if piv[i] != i:
            tmp = b[i]
            b[i] = b[piv[i]]
            b[piv[i]] = tmp
    for i in range(n):
        for j in range(i):
            b[i] -= a[i * n + j] * b[j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            b[i] -= a[i * n + j] * b[j]
        b[i] /= a[i * n + i]


cdef int lu_decomp_c(double* ar, double* ai, int n, int* piv) noexcept nogil:
    """Complex LU with partial pivoting on split real/imaginary storage."""
    cdef int i, j, k, imax
    cdef double amax, mag, tmp, fr, fi, den, pr, pi_
    for k in range(n):
        imax = k
        amax = fabs(ar[k * n + k]) + fabs(ai[k * n + k])
        for i in range(k + 1, n):
            mag = fabs(ar[i * n + k]) + fabs(ai[i * n + k])
            if mag > amax:
                amax = mag
                imax = i
        piv[k] = imax
        if amax == 0.0:
            return 1
        if imax != k:
            for j in range(n):
                tmp = ar[k * n + j]; ar[k * n + j] = ar[imax * n + j]; ar[imax * n + j] = tmp
                tmp = ai[k * n + j]; ai[k * n + j] = ai[imax * n + j]; ai[imax * n + j] = tmp
        pr = ar[k * n + k]
        pi_ = ai[k * n + k]
        den = pr * pr + pi_ * pi_
        for i in range(k + 1, n):
            # f = a[i,k] / a[k,k]
            fr = (ar[i * n + k] * pr + ai[i * n + k] * pi_) / den
            fi = (ai[i * n + k] * pr - ar[i * n + k] * pi_) / den
            ar[i * n + k] = fr
            ai[i * n + k] = fi
            for j in range(k + 1, n):
                ar[i * n + j] -= fr * ar[k * n + j] - fi * ai[k * n + j]
                ai[i * n + j] -= fr * ai[k * n + j] + fi * ar[k * n + j]
    return 0


cdef void lu_solve_c(const double* ar, const double* ai, int n, const int* piv,
                     double* br, double* bi) noexcept nogil:
    cdef int i, j
    cdef double tmp, den, xr, xi
    for i in range(n):
        if piv[i] != i:
            tmp = br[i]; br[i] = br[piv[i]]; br[piv[i]] = tmp
            tmp = bi[i]; bi[i] = bi[piv[i]]; bi[piv[i]] = tmp
    for i in range(n):
        for j in range(i):
            br[i] -= ar[i * n + j] * br[j] - ai[i * n + j] * bi[j]
            bi[i] -= ar[i * n + j] * bi[j] + ai[i * n + j] * br[j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            br[i] -= ar[i * n + j] * br[j] - ai[i * n + j] * bi[j]
            bi[i] -= ar[i * n + j] * bi[j] + ai[i * n + j] * br[j]
        den = ar[i * n + i] * ar[i * n + i] + ai[i * n + i] * ai[i * n + i]
        xr = (br[i] * ar[i * n + i] + bi[i] * ai[i * n + i]) / den
        xi = (bi[i] * ar[i * n + i] - br[i] * ai[i * n + i]) / den
        br[i] = xr
        bi[i] = xi


cdef inline double rms_scaled(const double* x, const double* scale, int n) noexcept nogil:
    cdef double s = 0.0, q
    cdef int i
    for i in range(n):
        q = x[i] / scale[i]
        s += q * q
    return sqrt(s / n)


cdef inline double predict_factor(double h, double h_old, double err, double err_old) noexcept nogil:
    cdef double mult = 1.0
    if err_old > 0.0 and h_old > 0.0 and err != 0.0:
        mult = h / h_old * sqrt(sqrt(err_old / err))
    if mult > 1.0:
        mult = 1.0
    if err == 0.0:
        return INFINITY
    return mult / sqrt(sqrt(err))


cdef double initial_step(const Params* p, double t0, const double* y0, const double* f0,
                         double rtol, double atol, double interval, double max_step) noexcept nogil:
    cdef double scale[NS]
    cdef double y1[NS]
    cdef double f1[NS]
    cdef double df[NS]
    cdef double d0, d1, d2, h0, h1, r
    cdef int i
    for i in range(NS):
        scale[i] = atol + fabs(y0[i]) * rtol
    d0 = rms_scaled(y0, scale, NS)
    d1 = rms_scaled(f0, scale, NS)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    if h0 > interval:
        h0 = interval
    for i in range(NS):
        y1[i] = y0[i] + h0 * f0[i]
    rhs(p, t0 + h0, y1, f1)
    for i in range(NS):
        df[i] = f1[i] - f0[i]
    d2 = rms_scaled(df, scale, NS) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        h1 = pow(0.01 / (d1 if d1 > d2 else d2), 0.25)
    r = 100.0 * h0
    if h1 < r:
        r = h1
    if interval < r:
        r = interval
    if max_step < r:
        r = max_step
    return r


cdef int radau_run(const Params* p, double t0, double t1, double* y, double rtol, double atol,
                   double max_step, const double* t_eval, int m, double* out,
                   long* n_steps_out, long* n_rej_out, long* n_fev_out, double* t_fail) noexcept nogil:
    cdef double t = t0, t_new, h, h_old = -1.0, err_old = -1.0, min_step
    cdef double newton_tol, dz_norm, dz_old, rate, err_norm, safety, factor, x, x2, x3, tmp
    cdef double fy[NS]
    cdef double Jm[NS * NS]
    cdef double Me[NS * NS]
    cdef double Mcr[NS * NS]
    cdef double Mci[NS * NS]
    cdef double fr[NS]
    cdef double fi[NS]
    cdef double mcr = MU_CPLX_RE, mci = MU_CPLX_IM
    cdef double faccon = 1.0
    cdef double W[NZ]
    cdef int pive[NS]
    cdef int pivc[NS]
    cdef double Z[NZ]
    cdef double dZ[NZ]
    cdef double F[NZ]
    cdef double ytmp[NS]
    cdef double scale[NS]
    cdef double scale3[NZ]
    cdef double y_new[NS]
    cdef double err[NS]
    cdef double ZE[NS]
    cdef double Q[NS * 3]
    cdef double Qp[NS * 3]
    cdef double yp[NS]
    cdef double tp = 0.0, hp = 0.0
    cdef bint have_prev = False, rejected, converged
    cdef int i, j, k, s, r, kk, n_iter, k_out = 0
    cdef long n_steps = 0, n_rej = 0, n_fev = 0

    while k_out < m and t_eval[k_out] == t0:
        for i in range(NS):
            out[k_out * NS + i] = y[i]
        k_out += 1

    newton_tol = 10.0 * 2.220446049250313e-16 / rtol
    tmp = sqrt(rtol)
    if tmp > 0.03:
        tmp = 0.03
    if tmp > newton_tol:
        newton_tol = tmp

    rhs(p, t, y, fy)
    n_fev += 1
    h = initial_step(p, t, y, fy, rtol, atol, t1 - t0, max_step)
    n_fev += 1

    while t < t1:
        if n_steps + n_rej >= MAX_STEPS:
            t_fail[0] = t
            return 2
        min_step = 10.0 * fabs(nextafter(t, INFINITY) - t)
        jac(p, t, y, Jm)
        for i in range(NS * NS):
            if not isfinite(Jm[i]):
                t_fail[0] = t
                return 3
        rejected = False
        while True:
            if not h >= min_step:  # also catches a NaN step
                t_fail[0] = t
                return 1
            t_new = t + h
            if t_new >= t1:
                t_new = t1
            h = t_new - t

            # Newton starting guess: extrapolate the previous collocation polynomial
            for s in range(3):
                if have_prev:
                    x = (t + h * CC[s] - tp) / hp
                    x2 = x * x
                    x3 = x2 * x
                    for i in range(NS):
                        Z[s * NS + i] = Qp[i * 3] * x + Qp[i * 3 + 1] * x2 + Qp[i * 3 + 2] * x3 + yp[i] - y[i]
                else:
                    for i in range(NS):
                        Z[s * NS + i] = 0.0

            # real and complex blocks of the transformed Newton matrix
            for i in range(NS):
                for j in range(NS):
                    Me[i * NS + j] = -Jm[i * NS + j]
                    Mcr[i * NS + j] = -Jm[i * NS + j]
                    Mci[i * NS + j] = 0.0
                Me[i * NS + i] += MU_REAL / h
                Mcr[i * NS + i] += mcr / h
                Mci[i * NS + i] = mci / h
            if lu_decomp(Me, NS, pive) or lu_decomp_c(Mcr, Mci, NS, pivc):
                h *= 0.5
                rejected = True
                continue

            for i in range(NS):
                scale[i] = atol + fabs(y[i]) * rtol
            for s in range(3):
                for i in range(NS):
                    scale3[s * NS + i] = scale[i]
            # W = TI Z
            for s in range(3):
                for i in range(NS):
                    W[s * NS + i] = TTI[s][0] * Z[i] + TTI[s][1] * Z[NS + i] + TTI[s][2] * Z[2 * NS + i]

            faccon = pow(faccon if faccon > EPS else EPS, 0.8)
            converged = False
            dz_old = -1.0
            n_iter = 0
            for k in range(NEWTON_MAXITER):
                n_iter = k + 1
                for s in range(3):
                    for i in range(NS):
                        ytmp[i] = y[i] + Z[s * NS + i]
                    rhs(p, t + CC[s] * h, ytmp, &F[s * NS])
                n_fev += 3
                kk = 0
                for i in range(NZ):
                    if not isfinite(F[i]):
                        kk = 1
                if kk:
                    break
                for i in range(NS):
                    dZ[i] = (TTI[0][0] * F[i] + TTI[0][1] * F[NS + i] + TTI[0][2] * F[2 * NS + i]
                             - MU_REAL / h * W[i])
                    fr[i] = (TTI[1][0] * F[i] + TTI[1][1] * F[NS + i] + TTI[1][2] * F[2 * NS + i]
                             - (mcr * W[NS + i] - mci * W[2 * NS + i]) / h)
                    fi[i] = (TTI[2][0] * F[i] + TTI[2][1] * F[NS + i] + TTI[2][2] * F[2 * NS + i]
                             - (mcr * W[2 * NS + i] + mci * W[NS + i]) / h)
                lu_solve(Me, NS, pive, dZ)
                lu_solve_c(Mcr, Mci, NS, pivc, fr, fi)
                for i in range(NS):
                    dZ[NS + i] = fr[i]
                    dZ[2 * NS + i] = fi[i]
                dz_norm = rms_scaled(dZ, scale3, NZ)
                if dz_old >= 0.0:
                    rate = dz_norm / dz_old
                    if not rate < 1.0:
                        break
                    tmp = dz_norm / (1.0 - rate)
                    for j in range(NEWTON_MAXITER - k):
                        tmp *= rate
                    if tmp > newton_tol:
                        break
                    faccon = rate / (1.0 - rate)
                for i in range(NZ):
                    W[i] += dZ[i]
                for s in range(3):
                    for i in range(NS):
                        Z[s * NS + i] = TT[s][0] * W[i] + TT[s][1] * W[NS + i] + TT[s][2] * W[2 * NS + i]
                if faccon * dz_norm <= newton_tol:
                    converged = True
                    break
                dz_old = dz_norm if dz_norm > EPS else EPS
            if not converged:
                h *= 0.5
                rejected = True
                continue

            for i in range(NS):
                y_new[i] = y[i] + Z[2 * NS + i]
                ZE[i] = (EE[0] * Z[i] + EE[1] * Z[NS + i] + EE[2] * Z[2 * NS + i]) / h
            for i in range(NS):
                err[i] = fy[i] + ZE[i]
            lu_solve(Me, NS, pive, err)
            for i in range(NS):
                scale[i] = atol + (fabs(y[i]) if fabs(y[i]) > fabs(y_new[i]) else fabs(y_new[i])) * rtol
            err_norm = rms_scaled(err, scale, NS)
            safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + n_iter)
            if rejected and not err_norm <= 1.0:
                for i in range(NS):
                    ytmp[i] = y[i] + err[i]
                rhs(p, t, ytmp, err)
                n_fev += 1
                for i in range(NS):
                    err[i] += ZE[i]
                lu_solve(Me, NS, pive, err)
                err_norm = rms_scaled(err, scale, NS)
            if not err_norm <= 1.0:
                factor = safety * predict_factor(h, h_old, err_norm, err_old)
                if not factor >= MIN_FACTOR:
                    factor = MIN_FACTOR
                h *= factor
                rejected = True
                n_rej += 1
                continue
            break

        factor = safety * predict_factor(h, h_old, err_norm, err_old)
        if factor > MAX_FACTOR:
            factor = MAX_FACTOR

        # dense output coefficients Q = Z^T P  (NS x 3)
        for i in range(NS):
            for j in range(3):
                Q[i * 3 + j] = Z[i] * PP[0][j] + Z[NS + i] * PP[1][j] + Z[2 * NS + i] * PP[2][j]
        while k_out < m and t_eval[k_out] <= t_new:
            x = (t_eval[k_out] - t) / h
            x2 = x * x
            x3 = x2 * x
            for i in range(NS):
                out[k_out * NS + i] = y[i] + Q[i * 3] * x + Q[i * 3 + 1] * x2 + Q[i * 3 + 2] * x3
            k_out += 1
        for i in range(NS * 3):
            Qp[i] = Q[i]
        for i in range(NS):
            yp[i] = y[i]
        tp = t
        hp = h
        have_prev = True
        h_old = h
        err_old = err_norm
        t = t_new
        for i in range(NS):
            y[i] = y_new[i]
        rhs(p, t, y, fy)
        n_fev += 1
        n_steps += 1
        h = h * factor
        if h > max_step:
            h = max_step

    n_steps_out[0] = n_steps
    n_rej_out[0] = n_rej
    n_fev_out[0] = n_fev
    return 0


def integrate_reduced(double t0, double t1, const double[::1] y0, const double[::1] params,
                      double rtol, double atol, double max_step, const double[::1] t_eval):
    """Integrate the reduced system; see ``cqdsim.dynamics.ReducedSystem``.

    ``params`` is ``(gamma_e, gamma_n, B_e, B_n, cos th_n, sin th_n,
    cot th_n, B0x, B0y, B0z, B1x, B1y, B1z)``.

    Returns ``(out, n_steps, n_rejected, n_fev, status, t_fail)`` where
    status 0 is success, 1 step underflow, 2 step budget exhausted,
    3 non-finite Jacobian.
    """
    if y0.shape[0] != NS or params.shape[0] != 13:
        raise ValueError("expected 4 state components and 13 parameters")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    cdef int m = t_eval.shape[0]
    cdef int i
    for i in range(m):
        if t_eval[i] < t0 or t_eval[i] > t1 or (i > 0 and t_eval[i] < t_eval[i - 1]):
            raise ValueError("t_eval must be ascending and inside [t0, t1]")
    cdef Params p
    p.ge = params[0]; p.gn = params[1]; p.Be = params[2]; p.Bn = params[3]
    p.cn = params[4]; p.sn = params[5]; p.cotn = params[6]
    p.b0x = params[7]; p.b0y = params[8]; p.b0z = params[9]
    p.b1x = params[10]; p.b1y = params[11]; p.b1z = params[12]
    cdef double y[NS]
    for i in range(NS):
        y[i] = y0[i]
    out = np.zeros((m, NS), dtype=np.float64)
    cdef double[:, ::1] out_v = out
    cdef long n_steps = 0, n_rej = 0, n_fev = 0
    cdef double t_fail = 0.0
    cdef int status
    cdef double* out_ptr = &out_v[0, 0] if m > 0 else NULL
    cdef const double* te_ptr = &t_eval[0] if m > 0 else NULL
    with nogil:
        status = radau_run(&p, t0, t1, y, rtol, atol, max_step, te_ptr, m, out_ptr,
                           &n_steps, &n_rej, &n_fev, &t_fail)
    return out, n_steps, n_rej, n_fev, status, t_fail
