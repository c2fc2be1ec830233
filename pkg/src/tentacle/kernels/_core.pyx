# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping kernels.

Same contract as ``_fallback``: node arrays use slot index ``i = k + 1``,
parameter rows are (rho, eps, nu, omega, mu, beta, gamma), failures are
reported through status codes.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

DEF OK = 0
DEF NO_CONVERGENCE = 1
DEF SINGULAR = 2


cdef inline void close_positions(double[:, ::1] q, int N, double ds) noexcept nogil:
    q[1, 0] = 0.0
    q[1, 1] = 0.0
    q[0, 0] = 0.0
    q[0, 1] = ds
    cdef int j
    for j in range(2):
        q[N + 1, j] = 2.0 * q[N, j] - q[N - 1, j]
        q[N + 2, j] = 2.0 * q[N + 1, j] - q[N, j]


cdef inline void close_velocities(double[:, ::1] v, int N) noexcept nogil:
    cdef int j
    for j in range(2):
        v[0, j] = 0.0
        v[1, j] = 0.0
        v[N + 1, j] = 2.0 * v[N, j] - v[N - 1, j]
        v[N + 2, j] = 2.0 * v[N + 1, j] - v[N, j]


cdef inline void close_adjoint(double[:, ::1] qb, int N, double ds, double jx, double jy) noexcept nogil:
    cdef int j
    cdef double ds3 = ds * ds * ds
    for j in range(2):
        qb[0, j] = 0.0
        qb[1, j] = 0.0
    qb[N + 1, 0] = 2.0 * qb[N, 0] - qb[N - 1, 0] - jx * ds3
    qb[N + 1, 1] = 2.0 * qb[N, 1] - qb[N - 1, 1] - jy * ds3
    for j in range(2):
        qb[N + 2, j] = 2.0 * qb[N + 1, j] - qb[N, j]


cdef void stencils(double[:, ::1] q, int N, double ds,
                   double[:, ::1] dm, double[:, ::1] d2) noexcept nogil:
    """dm, d2 on k = 0..N stored at index k."""
    cdef int k, i, j
    cdef double ids = 1.0 / ds, ids2 = 1.0 / (ds * ds)
    for k in range(N + 1):
        i = k + 1
        for j in range(2):
            dm[k, j] = (q[i, j] - q[i - 1, j]) * ids
            d2[k, j] = (q[i + 1, j] - 2.0 * q[i, j] + q[i - 1, j]) * ids2


cdef void elastic(double[:, ::1] q, double[::1] u, double[:, ::1] P, int N, double ds,
                  double[:, ::1] dm, double[:, ::1] d2, double[:, ::1] F, double[:, ::1] B,
                  double[:, ::1] out) noexcept nogil:
    """rho * a with sigma = 0 and no friction, on k = 1..N-1 (index k)."""
    cdef int k
    cdef double G, H, x, ids = 1.0 / ds, ids2 = 1.0 / (ds * ds)
    stencils(q, N, ds, dm, d2)
    for k in range(N + 1):
        x = d2[k, 0] * d2[k, 0] + d2[k, 1] * d2[k, 1] - P[3, k] * P[3, k]
        G = P[1, k] + (P[2, k] * x if x > 0.0 else 0.0)
        if k >= N - 1:
            H = 0.0
        else:
            H = P[4, k] * (P[3, k] * u[k] - (dm[k, 0] * d2[k, 1] - dm[k, 1] * d2[k, 0]))
        F[k, 0] = -H * d2[k, 1]
        F[k, 1] = H * d2[k, 0]
        B[k, 0] = G * d2[k, 0] + H * dm[k, 1]
        B[k, 1] = G * d2[k, 1] - H * dm[k, 0]
    for k in range(1, N):
        out[k, 0] = (F[k + 1, 0] - F[k, 0]) * ids - (B[k + 1, 0] - 2.0 * B[k, 0] + B[k - 1, 0]) * ids2
        out[k, 1] = (F[k + 1, 1] - F[k, 1]) * ids - (B[k + 1, 1] - 2.0 * B[k, 1] + B[k - 1, 1]) * ids2


cdef void friction(double[:, ::1] v, double[:, ::1] P, int N, double ds,
                   double[:, ::1] vv, double[:, ::1] d2v, double[:, ::1] out) noexcept nogil:
    """-beta v - gamma D2 D2 v on k = 1..N-1 (index k), v extended by the closures."""
    cdef int k, j
    cdef double ids2 = 1.0 / (ds * ds)
    for k in range(N + 3):
        vv[k, 0] = v[k, 0]
        vv[k, 1] = v[k, 1]
    close_velocities(vv, N)
    for k in range(N + 1):
        for j in range(2):
            d2v[k, j] = (vv[k + 2, j] - 2.0 * vv[k + 1, j] + vv[k, j]) * ids2
    for k in range(1, N):
        for j in range(2):
            out[k, j] = -P[5, k] * vv[k + 1, j] - P[6, k] * (d2v[k + 1, j] - 2.0 * d2v[k, j] + d2v[k - 1, j]) * ids2


cdef inline void tangents(double[:, ::1] q, int N, double ds, double[:, ::1] t) noexcept nogil:
    """D_- q on k = 1..N stored at index k."""
    cdef int k
    for k in range(1, N + 1):
        t[k, 0] = (q[k + 1, 0] - q[k, 0]) / ds
        t[k, 1] = (q[k + 1, 1] - q[k, 1]) / ds


cdef inline void add_tension(double[::1] s, double[:, ::1] t, double[:, ::1] P, int N, double ds,
                             double scale, double[:, ::1] out) noexcept nogil:
    """out_k += scale * (s_{k+1} t_{k+1} - s_k t_k) / (rho_k ds), s indexed by slot, k = 1..N-1."""
    cdef int k, j
    cdef double f
    for k in range(1, N):
        f = scale / (P[0, k] * ds)
        for j in range(2):
            out[k, j] += f * (s[k + 2] * t[k + 1, j] - s[k + 1] * t[k, j])


cdef int thomas(double[::1] lo, double[::1] di, double[::1] up, double[::1] rhs,
                double[::1] x, double[::1] cw, double[::1] dw, int m) noexcept nogil:
    cdef int i
    cdef double piv = di[0]
    if piv == 0.0:
        return SINGULAR
    cw[0] = up[0] / piv
    dw[0] = rhs[0] / piv
    for i in range(1, m):
        piv = di[i] - lo[i] * cw[i - 1]
        if piv == 0.0:
            return SINGULAR
        cw[i] = up[i] / piv if i < m - 1 else 0.0
        dw[i] = (rhs[i] - lo[i] * dw[i - 1]) / piv
    x[m - 1] = dw[m - 1]
    for i in range(m - 2, -1, -1):
        x[i] = dw[i] - cw[i] * x[i + 1]
    for i in range(m):
        if x[i] != x[i] or fabs(x[i]) > 1e300:
            return SINGULAR
    return OK


cdef inline void predict(double[:, ::1] p, double[::1] c, double[:, ::1] t, double[::1] s,
                         int N, double[:, ::1] out) noexcept nogil:
    """out_k = p_k + c_k (s_{k+1} t_{k+1} - s_k t_k), k = 1..N-1; s by slot with s_N ignored."""
    cdef int k, j
    cdef double sk1
    for k in range(1, N):
        sk1 = s[k + 2] if k + 1 < N else 0.0
        for j in range(2):
            out[k, j] = p[k, j] + c[k] * (sk1 * t[k + 1, j] - s[k + 1] * t[k, j])


cdef int orthogonal_solve(double[:, ::1] X, double[::1] c, double[:, ::1] t, double[:, ::1] tn,
                          double[::1] target, int N, double ds, double[::1] s,
                          double[::1] lo, double[::1] di, double[::1] up, double[::1] rhs,
                          double[::1] x, double[::1] cw, double[::1] dw) noexcept nogil:
    """s_1..s_{N-1} (slot-indexed) so that D_-(X + c D_+(s t)) . tn = target on k = 1..N-1."""
    cdef int k, r
    cdef double ckm, dx, dy
    for k in range(1, N):
        r = k - 1
        ckm = c[k - 1] if k > 1 else 0.0
        di[r] = -(c[k] + ckm) * (t[k, 0] * tn[k, 0] + t[k, 1] * tn[k, 1])
        up[r] = c[k] * (t[k + 1, 0] * tn[k, 0] + t[k + 1, 1] * tn[k, 1])
        lo[r] = ckm * (t[k - 1, 0] * tn[k, 0] + t[k - 1, 1] * tn[k, 1]) if k > 1 else 0.0
        if k > 1:
            dx = X[k, 0] - X[k - 1, 0]
            dy = X[k, 1] - X[k - 1, 1]
        else:
            dx = X[k, 0]
            dy = X[k, 1]
        rhs[r] = target[k] * ds - (dx * tn[k, 0] + dy * tn[k, 1])
    cdef int status = thomas(lo, di, up, rhs, x, cw, dw, N - 1)
    if status != OK:
        return status
    for k in range(1, N):
        s[k + 1] = x[k - 1]
    return OK


def forward_run(q0, v0, sigma0, U, P, wbar, double dt, bint with_friction, bint project,
                double tol, int maxit, int store_every, int kmax):
    cdef double[:, ::1] Um = np.array(U, dtype=float, order="C")
    cdef double[:, ::1] Pm = np.array(P, dtype=float, order="C")
    cdef double[::1] wb = np.array(wbar, dtype=float, order="C")
    cdef int M = Um.shape[0] - 1
    cdef int N = Pm.shape[1] - 1
    cdef double ds = 1.0 / N
    cdef int k, j, r, it, n, slot, status = OK, nlev
    cdef double res, val, Eq, Es, Jv, pot, x, kap, ids2 = 1.0 / (ds * ds)

    q_a = np.array(q0, dtype=float)
    v_a = np.array(v0, dtype=float)
    sig_a = np.array(sigma0, dtype=float)
    cdef double[:, ::1] q = q_a
    cdef double[:, ::1] v = v_a
    cdef double[::1] sig = sig_a
    close_positions(q, N, ds)
    close_velocities(v, N)
    sig[N + 1] = 0.0

    levels = list(range(0, M + 1, store_every))
    if levels[len(levels) - 1] != M:
        levels.append(M)
    nlev = len(levels)
    cdef long[::1] lev = np.array(levels, dtype=np.int64)
    Q_a = np.zeros((nlev, N + 3, 2))
    V_a = np.zeros((nlev, N + 3, 2))
    S_a = np.zeros((nlev, N + 3))
    S2_a = np.zeros((nlev, N + 3))
    D_a = np.zeros((M + 1, 6))
    cdef double[:, :, ::1] Qm = Q_a
    cdef double[:, :, ::1] Vm = V_a
    cdef double[:, ::1] Sm = S_a
    cdef double[:, ::1] S2m = S2_a
    cdef double[:, ::1] Dm = D_a

    cdef double[:, ::1] qn = np.zeros((N + 3, 2))
    cdef double[:, ::1] vn = np.zeros((N + 3, 2))
    cdef double[::1] seff = np.array(sig_a)
    cdef double[:, ::1] dm = np.zeros((N + 1, 2))
    cdef double[:, ::1] d2 = np.zeros((N + 1, 2))
    cdef double[:, ::1] F = np.zeros((N + 1, 2))
    cdef double[:, ::1] B = np.zeros((N + 1, 2))
    cdef double[:, ::1] ael = np.zeros((N + 1, 2))
    cdef double[:, ::1] ael_new = np.zeros((N + 1, 2))
    cdef double[:, ::1] fr = np.zeros((N + 1, 2))
    cdef double[:, ::1] vv = np.zeros((N + 3, 2))
    cdef double[:, ::1] d2v = np.zeros((N + 1, 2))
    cdef double[:, ::1] a0 = np.zeros((N + 1, 2))
    cdef double[:, ::1] a1 = np.zeros((N + 1, 2))
    cdef double[:, ::1] pp = np.zeros((N + 1, 2))
    cdef double[:, ::1] t = np.zeros((N + 2, 2))
    cdef double[:, ::1] tn = np.zeros((N + 2, 2))
    cdef double[:, ::1] dd = np.zeros((N + 1, 2))
    cdef double[::1] c = np.zeros(N + 1)
    cdef double[::1] cp = np.zeros(N + 1)
    cdef double[::1] zero = np.zeros(N + 3)
    cdef double[::1] lam = np.zeros(N + 3)
    cdef double[::1] lo = np.zeros(N), di = np.zeros(N), up = np.zeros(N)
    cdef double[::1] rhs = np.zeros(N), xs = np.zeros(N), cw = np.zeros(N), dw = np.zeros(N)
    for k in range(1, N):
        c[k] = dt * dt / (2.0 * Pm[0, k] * ds)
        cp[k] = 1.0 / (Pm[0, k] * ds)

    with nogil:
        elastic(q, Um[0], Pm, N, ds, dm, d2, F, B, ael)
        n = 0
        slot = 0
        while True:
            if with_friction:
                friction(v, Pm, N, ds, vv, d2v, fr)
            for k in range(1, N):
                for j in range(2):
                    a0[k, j] = (ael[k, j] + (fr[k, j] if with_friction else 0.0)) / Pm[0, k]
                    pp[k, j] = q[k + 1, j] + dt * v[k + 1, j] + 0.5 * dt * dt * a0[k, j]
            tangents(q, N, ds, t)

            # Newton on the tension
            it = 0
            while True:
                predict(pp, c, t, sig, N, qn)
                res = 0.0
                for k in range(1, N):
                    if k > 1:
                        dd[k, 0] = qn[k, 0] - qn[k - 1, 0]
                        dd[k, 1] = qn[k, 1] - qn[k - 1, 1]
                    else:
                        dd[k, 0] = qn[k, 0]
                        dd[k, 1] = qn[k, 1]
                    val = (dd[k, 0] * dd[k, 0] + dd[k, 1] * dd[k, 1]) * ids2 - 1.0
                    rhs[k - 1] = val
                    if fabs(val) > res:
                        res = fabs(val)
                # at least one correction, so a warm start inside tol is still refined
                if res <= tol and it > 0:
                    break
                if it >= maxit:
                    status = NO_CONVERGENCE
                    break
                for k in range(1, N):
                    r = k - 1
                    x = c[k - 1] if k > 1 else 0.0
                    di[r] = -2.0 * (c[k] + x) * (dd[k, 0] * t[k, 0] + dd[k, 1] * t[k, 1]) * ids2
                    up[r] = 2.0 * c[k] * (dd[k, 0] * t[k + 1, 0] + dd[k, 1] * t[k + 1, 1]) * ids2
                    lo[r] = 2.0 * x * (dd[k, 0] * t[k - 1, 0] + dd[k, 1] * t[k - 1, 1]) * ids2 if k > 1 else 0.0
                if thomas(lo, di, up, rhs, xs, cw, dw, N - 1) != OK:
                    status = SINGULAR
                    break
                for k in range(1, N):
                    sig[k + 1] -= xs[k - 1]
                it += 1
            if status != OK:
                break
            sig[N + 1] = 0.0

            # diagnostics at level n
            stencils(q, N, ds, dm, d2)
            Eq = 0.0
            Es = 0.0
            pot = 0.0
            for k in range(N + 1):
                x = sqrt(d2[k, 0] * d2[k, 0] + d2[k, 1] * d2[k, 1])
                if k <= kmax and fabs(x - wb[k]) > Eq:
                    Eq = fabs(x - wb[k])
                if 1 <= k <= kmax and fabs(sig[k + 1] - Pm[1, k] * wb[k] * wb[k]) > Es:
                    Es = fabs(sig[k + 1] - Pm[1, k] * wb[k] * wb[k])
                if k <= N - 2:
                    val = x * x - Pm[3, k] * Pm[3, k]
                    val = val if val > 0.0 else 0.0
                    kap = dm[k, 0] * d2[k, 1] - dm[k, 1] * d2[k, 0]
                    kap = Pm[3, k] * Um[n, k] - kap
                    pot += 0.25 * Pm[2, k] * val * val + 0.5 * Pm[1, k] * x * x + 0.5 * Pm[4, k] * kap * kap
            Jv = 0.0
            for k in range(1, N):
                Jv += Pm[0, k] * (v[k + 1, 0] * v[k + 1, 0] + v[k + 1, 1] * v[k + 1, 1])
            Jv *= 0.5 * ds
            Dm[n, 0] = Eq
            Dm[n, 1] = Es
            Dm[n, 2] = Jv
            Dm[n, 3] = Jv + ds * pot
            Dm[n, 4] = res
            Dm[n, 5] = it
            if slot < nlev and lev[slot] == n:
                for k in range(N + 3):
                    for j in range(2):
                        Qm[slot, k, j] = q[k, j]
                        Vm[slot, k, j] = v[k, j]
                    Sm[slot, k] = sig[k]
                    S2m[slot, k] = seff[k]
                slot += 1
            if n == M:
                break

            # advance to level n + 1
            add_tension(sig, t, Pm, N, ds, 1.0, a0)
            for k in range(1, N):
                for j in range(2):
                    q[k + 1, j] = qn[k, j]
            close_positions(q, N, ds)
            elastic(q, Um[n + 1], Pm, N, ds, dm, d2, F, B, ael_new)
            tangents(q, N, ds, tn)
            for k in range(1, N):
                for j in range(2):
                    a1[k, j] = (ael_new[k, j] + (fr[k, j] if with_friction else 0.0)) / Pm[0, k]
            add_tension(sig, tn, Pm, N, ds, 1.0, a1)
            for k in range(1, N):
                for j in range(2):
                    v[k + 1, j] = v[k + 1, j] + 0.5 * dt * (a0[k, j] + a1[k, j])
            for k in range(N + 3):
                seff[k] = sig[k]
            if project:
                for k in range(1, N):
                    for j in range(2):
                        pp[k, j] = v[k + 1, j]
                if orthogonal_solve(pp, cp, tn, tn, zero, N, ds, lam,
                                    lo, di, up, rhs, xs, cw, dw) != OK:
                    status = SINGULAR
                    n += 1
                    break
                predict(pp, cp, tn, lam, N, vn)
                for k in range(1, N):
                    for j in range(2):
                        v[k + 1, j] = vn[k, j]
                    seff[k + 1] += 2.0 * lam[k + 1] / dt
            close_velocities(v, N)
            for k in range(1, N):
                for j in range(2):
                    ael[k, j] = ael_new[k, j]
            n += 1

    if status != OK:
        return Q_a[:slot], V_a[:slot], S_a[:slot], S2_a[:slot], D_a[:n], status, n
    return Q_a, V_a, S_a, S2_a, D_a, status, n


cdef void adjoint_accel(double[:, ::1] qb, double[::1] sb, double[:, ::1] w, double[:, ::1] q,
                        double[::1] sig, double[::1] u, double[:, ::1] P, int N, double ds,
                        bint with_friction, double[:, ::1] dm, double[:, ::1] d2,
                        double[:, ::1] dmb, double[:, ::1] d2b, double[:, ::1] F, double[:, ::1] B,
                        double[:, ::1] vv, double[:, ::1] d2v, double[:, ::1] fr,
                        double[:, ::1] out) noexcept nogil:
    """Linearized acceleration (already divided by rho) on k = 1..N-1 (index k)."""
    cdef int k, j
    cdef double G, H, Gb, Hb, x, ids = 1.0 / ds, ids2 = 1.0 / (ds * ds)
    stencils(q, N, ds, dm, d2)
    stencils(qb, N, ds, dmb, d2b)
    for k in range(N + 1):
        x = d2[k, 0] * d2[k, 0] + d2[k, 1] * d2[k, 1] - P[3, k] * P[3, k]
        G = P[1, k] + (P[2, k] * x if x > 0.0 else 0.0)
        Gb = (2.0 * P[2, k] if x >= 0.0 else 0.0) * (d2[k, 0] * d2b[k, 0] + d2[k, 1] * d2b[k, 1])
        if k >= N - 1:
            H = 0.0
            Hb = 0.0
        else:
            H = P[4, k] * (P[3, k] * u[k] - (dm[k, 0] * d2[k, 1] - dm[k, 1] * d2[k, 0]))
            Hb = -P[4, k] * ((dmb[k, 0] * d2[k, 1] - dmb[k, 1] * d2[k, 0])
                             + (dm[k, 0] * d2b[k, 1] - dm[k, 1] * d2b[k, 0]))
        F[k, 0] = sig[k + 1] * dmb[k, 0] - H * d2b[k, 1] + sb[k + 1] * dm[k, 0] - Hb * d2[k, 1]
        F[k, 1] = sig[k + 1] * dmb[k, 1] + H * d2b[k, 0] + sb[k + 1] * dm[k, 1] + Hb * d2[k, 0]
        B[k, 0] = G * d2b[k, 0] + H * dmb[k, 1] + Gb * d2[k, 0] + Hb * dm[k, 1]
        B[k, 1] = G * d2b[k, 1] - H * dmb[k, 0] + Gb * d2[k, 1] - Hb * dm[k, 0]
    if with_friction:
        friction(w, P, N, ds, vv, d2v, fr)
    for k in range(1, N):
        for j in range(2):
            out[k, j] = ((F[k + 1, j] - F[k, j]) * ids
                         - (B[k + 1, j] - 2.0 * B[k, j] + B[k - 1, j]) * ids2
                         + (fr[k, j] if with_friction else 0.0)) / P[0, k]


cdef inline void adjoint_tip(double[:, ::1] q, double[:, ::1] P, int N, double ds,
                             double tx, double ty, double inv_tau,
                             double* sbN, double* jx, double* jy) noexcept nogil:
    cdef double ux = (q[N + 1, 0] - q[N, 0]) / ds
    cdef double uy = (q[N + 1, 1] - q[N, 1]) / ds
    cdef double mx = q[N + 1, 0] - tx, my = q[N + 1, 1] - ty
    sbN[0] = -inv_tau * (mx * ux + my * uy)
    # perp(t) = (t_y, -t_x)
    cdef double f = inv_tau / P[1, N - 1] * (mx * uy - my * ux)
    jx[0] = f * uy
    jy[0] = -f * ux


def adjoint_run(Q, V, S, S2, U, P, target, double inv_tau, double dt, bint with_friction, bint project,
                qb0=None, w0=None):
    cdef double[:, :, ::1] Qm = np.array(Q, dtype=float, order="C")
    cdef double[:, :, ::1] Vm = np.array(V, dtype=float, order="C")
    cdef double[:, ::1] Sm = np.array(S, dtype=float, order="C")
    cdef double[:, ::1] S2m = np.array(S2, dtype=float, order="C")
    cdef double[:, ::1] Um = np.array(U, dtype=float, order="C")
    cdef double[:, ::1] Pm = np.array(P, dtype=float, order="C")
    cdef double tx = float(target[0]), ty = float(target[1])
    cdef int M = Um.shape[0] - 1
    cdef int N = Pm.shape[1] - 1
    cdef double ds = 1.0 / N
    cdef int k, j, n, status = OK, nfail = -1
    cdef double sbN, sbN_prev, jx, jy

    QB_a = np.zeros((M + 1, N + 3, 2))
    SB_a = np.zeros((M + 1, N + 3))
    WB_a = np.zeros((M + 1, N + 3, 2))
    cdef double[:, :, ::1] QB = QB_a
    cdef double[:, :, ::1] WB = WB_a
    cdef bint given = qb0 is not None
    cdef double[:, ::1] qb_init = np.array(qb0 if given else np.zeros((N + 3, 2)), dtype=float, order="C")
    cdef double[:, ::1] SB = SB_a

    cdef double[:, ::1] qb = np.zeros((N + 3, 2))
    cdef double[:, ::1] qbn = np.zeros((N + 3, 2))
    cdef double[:, ::1] w = np.array(np.zeros((N + 3, 2)) if w0 is None else w0, dtype=float, order="C")
    cdef double[::1] sb = np.zeros(N + 3)
    cdef double[:, ::1] dm = np.zeros((N + 1, 2)), d2 = np.zeros((N + 1, 2))
    cdef double[:, ::1] dmb = np.zeros((N + 1, 2)), d2b = np.zeros((N + 1, 2))
    cdef double[:, ::1] F = np.zeros((N + 1, 2)), B = np.zeros((N + 1, 2))
    cdef double[:, ::1] vv = np.zeros((N + 3, 2)), d2v = np.zeros((N + 1, 2)), fr = np.zeros((N + 1, 2))
    cdef double[:, ::1] a0 = np.zeros((N + 1, 2)), a1 = np.zeros((N + 1, 2))
    cdef double[:, ::1] pp = np.zeros((N + 1, 2)), tmp = np.zeros((N + 1, 2))
    cdef double[:, ::1] t = np.zeros((N + 2, 2)), tp = np.zeros((N + 2, 2))
    cdef double[::1] c = np.zeros(N + 1), cp = np.zeros(N + 1)
    cdef double[::1] zero = np.zeros(N + 3), hid = np.zeros(N + 3), lam = np.zeros(N + 3)
    cdef double[::1] lo = np.zeros(N), di = np.zeros(N), up = np.zeros(N)
    cdef double[::1] rhs = np.zeros(N), xs = np.zeros(N), cw = np.zeros(N), dw = np.zeros(N)
    for k in range(1, N):
        c[k] = dt * dt / (2.0 * Pm[0, k] * ds)
        cp[k] = 1.0 / (Pm[0, k] * ds)

    with nogil:
        adjoint_tip(Qm[M], Pm, N, ds, tx, ty, inv_tau, &sbN, &jx, &jy)
        if given:
            for k in range(N + 3):
                for j in range(2):
                    qb[k, j] = qb_init[k, j]
        else:
            for k in range(N + 3):
                for j in range(2):
                    qb[k, j] = -Vm[M, k, j]
            close_adjoint(qb, N, ds, jx, jy)
        for k in range(N + 3):
            for j in range(2):
                QB[M, k, j] = qb[k, j]
                WB[M, k, j] = w[k, j]
        n = M
        while n >= 0:
            for k in range(N + 3):
                sb[k] = 0.0
            sb[N + 1] = sbN
            if n > 0:
                adjoint_accel(qb, sb, w, Qm[n], S2m[n], Um[n], Pm, N, ds, with_friction,
                              dm, d2, dmb, d2b, F, B, vv, d2v, fr, a0)
            else:
                adjoint_accel(qb, sb, w, Qm[0], Sm[0], Um[0], Pm, N, ds, with_friction,
                              dm, d2, dmb, d2b, F, B, vv, d2v, fr, a0)
            for k in range(1, N):
                for j in range(2):
                    pp[k, j] = qb[k + 1, j] + dt * w[k + 1, j] + 0.5 * dt * dt * a0[k, j]
            tangents(Qm[n], N, ds, t)
            if n > 0:
                tangents(Qm[n - 1], N, ds, tp)
            else:
                tangents(Qm[0], N, ds, tp)
            if orthogonal_solve(pp, c, t, tp, zero, N, ds, sb, lo, di, up, rhs, xs, cw, dw) != OK:
                status = SINGULAR
                nfail = n
                break
            for k in range(N + 3):
                SB[n, k] = sb[k]
            if n == 0:
                break

            predict(pp, c, t, sb, N, tmp)
            for k in range(1, N):
                for j in range(2):
                    qbn[k + 1, j] = tmp[k, j]
            adjoint_tip(Qm[n - 1], Pm, N, ds, tx, ty, inv_tau, &sbN_prev, &jx, &jy)
            close_adjoint(qbn, N, ds, jx, jy)
            # a0 -> full level-n acceleration by adding the interior sigbar
            sb[N + 1] = 0.0
            add_tension(sb, t, Pm, N, ds, 1.0, a0)
            sb[N + 1] = sbN_prev
            adjoint_accel(qbn, sb, w, Qm[n - 1], Sm[n - 1], Um[n - 1], Pm, N, ds, with_friction,
                          dm, d2, dmb, d2b, F, B, vv, d2v, fr, a1)
            for k in range(1, N):
                for j in range(2):
                    w[k + 1, j] = w[k + 1, j] + 0.5 * dt * (a0[k, j] + a1[k, j])
            if project:
                for k in range(1, N):
                    hid[k] = ((qbn[k + 1, 0] - qbn[k, 0]) * (Vm[n - 1, k + 1, 0] - Vm[n - 1, k, 0])
                              + (qbn[k + 1, 1] - qbn[k, 1]) * (Vm[n - 1, k + 1, 1] - Vm[n - 1, k, 1])) / (ds * ds)
                    for j in range(2):
                        pp[k, j] = w[k + 1, j]
                if orthogonal_solve(pp, cp, tp, tp, hid, N, ds, lam, lo, di, up, rhs, xs, cw, dw) != OK:
                    status = SINGULAR
                    nfail = n
                    break
                predict(pp, cp, tp, lam, N, tmp)
                for k in range(1, N):
                    for j in range(2):
                        w[k + 1, j] = tmp[k, j]
            close_velocities(w, N)
            for k in range(N + 3):
                for j in range(2):
                    qb[k, j] = qbn[k, j]
                    QB[n - 1, k, j] = qb[k, j]
                    WB[n - 1, k, j] = w[k, j]
            sbN = sbN_prev
            n -= 1

    return QB_a, WB_a, SB_a, status, nfail
