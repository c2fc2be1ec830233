"""Pure NumPy implementation of the time-stepping kernels.

Every array uses the slot layout of :mod:`tentacle.fd`: index ``i`` holds
grid slot ``k = i - 1``. Parameter rows come from ``ParamSet.stacked()``
(rho, eps, nu, omega, mu, beta, gamma).

Both marches return a status code instead of raising so the compiled and
the fallback backends report failures the same way:
0 ok, 1 Newton did not converge, 2 singular tridiagonal system.
"""

import numpy as np

OK, NO_CONVERGENCE, SINGULAR = 0, 1, 2
DIAG_COLUMNS = ("E_q", "E_sigma", "J_v", "energy", "residual", "newton_iters")


def _perp(a):
    return np.stack([a[:, 1], -a[:, 0]], axis=1)


def _cross(a, b):
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def _dot(a, b):
    return a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]


def close_positions(q, ds):
    """Anchor, fixed tangent and the two linear tip closures, in place."""
    n = len(q) - 1
    q[1] = 0.0
    q[0] = (0.0, ds)
    q[n - 1] = 2.0 * q[n - 2] - q[n - 3]
    q[n] = 2.0 * q[n - 1] - q[n - 2]


def close_velocities(v):
    n = len(v) - 1
    v[0] = 0.0
    v[1] = 0.0
    v[n - 1] = 2.0 * v[n - 2] - v[n - 3]
    v[n] = 2.0 * v[n - 1] - v[n - 2]


def _stencils(q, ds):
    dm = np.zeros_like(q)
    dm[1:] = (q[1:] - q[:-1]) / ds
    d2 = np.zeros_like(q)
    d2[1:-1] = (q[2:] - 2.0 * q[1:-1] + q[:-2]) / ds**2
    return dm, d2


def gh(q, u, P, ds):
    """G and H on slots k = 0..N (returned with length N+1)."""
    dm, d2 = _stencils(q, ds)
    dm, d2 = dm[1:-1], d2[1:-1]
    eps, nu, om, mu = P[1], P[2], P[3], P[4]
    G = eps + nu * np.maximum(_dot(d2, d2) - om**2, 0.0)
    H = mu * (om * u - _cross(dm, d2))
    return G, H


def _divergence(F, B, ds):
    """``D_+ F - D2 B`` on k = 1..N-1 from F on k = 1..N and B on k = 0..N."""
    return (F[1:] - F[:-1]) / ds - (B[2:] - 2.0 * B[1:-1] + B[:-2]) / ds**2


def _friction(v, P, ds):
    w = np.zeros_like(v)
    w[:] = v
    close_velocities(w)
    d2 = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / ds**2           # k = 0..N
    d4 = (d2[2:] - 2.0 * d2[1:-1] + d2[:-2]) / ds**2        # k = 1..N-1
    beta, gamma = P[5, 1:-1], P[6, 1:-1]
    return -beta[:, None] * w[2:-2] - gamma[:, None] * d4


def acceleration(q, sigma, u, P, ds, v=None):
    """``a_k`` for k = 1..N-1 (shape ``(N-1, 2)``). Friction when ``v`` is given."""
    dm, d2 = _stencils(q, ds)
    G, H = gh(q, u, P, ds)
    dm, d2 = dm[1:-1], d2[1:-1]                       # k = 0..N
    # the curvature-penalty moment vanishes on the closure nodes k = N-1, N
    H = H.copy()
    H[-2:] = 0.0
    F = sigma[2:-1, None] * dm[1:] - H[1:, None] * _perp(d2[1:])
    B = G[:, None] * d2 + H[:, None] * _perp(dm)
    out = _divergence(F, B, ds)
    if v is not None:
        out = out + _friction(v, P, ds)
    return out / P[0, 1:-1, None]


def _thomas(lo, di, up, rhs):
    """Tridiagonal solve without pivoting; returns None on a zero pivot."""
    n = len(di)
    c = np.empty(n)
    d = np.empty(n)
    piv = di[0]
    if piv == 0.0:
        return None
    c[0] = up[0] / piv
    d[0] = rhs[0] / piv
    for i in range(1, n):
        piv = di[i] - lo[i] * c[i - 1]
        if piv == 0.0:
            return None
        c[i] = up[i] / piv if i < n - 1 else 0.0
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / piv
    x = np.empty(n)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def _predict(p, c, t, sig):
    """Positions ``p_k + c_k (sig_{k+1} t_{k+1} - sig_k t_k)`` for k = 1..N-1.

    ``sig`` and ``t`` cover k = 1..N with ``sig_N`` taken as zero.
    """
    s = sig.copy()
    s[-1] = 0.0
    flux = s[:, None] * t
    return p + c[:, None] * (flux[1:] - flux[:-1])


def _segments(qn):
    d = np.empty_like(qn)
    d[0] = qn[0]
    d[1:] = qn[1:] - qn[:-1]
    return d


def solve_tension(p, c, t, sig0, ds, tol, maxit):
    """Newton on ``|q_k - q_{k-1}|^2 / ds^2 = 1`` for sigma_1..sigma_{N-1}.

    Returns ``(sigma, positions, residual, iterations, status)``.
    """
    sig = sig0.copy()
    m = len(p)
    it = 0
    while True:
        qn = _predict(p, c, t, sig)
        d = _segments(qn)
        F = _dot(d, d) / ds**2 - 1.0
        res = float(np.max(np.abs(F)))
        # at least one correction, so a warm start inside tol is still refined
        if res <= tol and it > 0:
            return sig, qn, res, it, OK
        if it >= maxit:
            return sig, qn, res, it, NO_CONVERGENCE
        ck = c
        ckm = np.concatenate([[0.0], c[:-1]])
        tk = t[:-1]
        di = 2.0 * _dot(d, -(ck + ckm)[:, None] * tk) / ds**2
        up = 2.0 * _dot(d, ck[:, None] * t[1:]) / ds**2
        lo = np.zeros(m)
        lo[1:] = 2.0 * _dot(d[1:], ckm[1:, None] * t[:-2]) / ds**2
        step = _thomas(lo, di, up, F)
        if step is None or not np.all(np.isfinite(step)):
            return sig, qn, res, it, SINGULAR
        sig[:-1] -= step
        it += 1


def _level_diag(q, v, sig, u, P, wbar, ds, kmax):
    dm, d2 = _stencils(q, ds)
    d2 = d2[1:-1]
    dm = dm[1:-1]
    rho, eps, nu, om, mu = P[0], P[1], P[2], P[3], P[4]
    curv = np.sqrt(_dot(d2, d2))
    E_q = float(np.max(np.abs(curv[: kmax + 1] - wbar[: kmax + 1])))
    E_s = float(np.max(np.abs(sig[2 : kmax + 2] - eps[1 : kmax + 1] * wbar[1 : kmax + 1] ** 2)))
    # kinetic energy of the free nodes k = 1..N-1
    vv = v[2:-2]
    J_v = 0.5 * ds * float(np.sum(rho[1:-1] * _dot(vv, vv)))
    x = np.maximum(_dot(d2, d2) - om**2, 0.0)
    kappa = _cross(dm, d2)
    w = 0.25 * nu * x**2 + 0.5 * eps * _dot(d2, d2) + 0.5 * mu * (om * u - kappa) ** 2
    # the closure nodes carry no elastic energy (see acceleration)
    pot = ds * float(np.sum(w[:-2]))
    return E_q, E_s, J_v, J_v + pot


def forward_run(q0, v0, sigma0, U, P, wbar, dt, with_friction, project, tol, maxit, store_every, kmax):
    """March the constrained Verlet scheme over ``len(U) - 1`` steps.

    Returns ``(Q, V, S, S2, diag, status, n_done)``. ``Q``/``V``/``S`` hold
    the levels ``0, store_every, ...`` plus the last one. ``S2[n]`` is the
    tension that acted in the second half of the step ending at level n
    (``sigma^{n-1}`` plus the velocity-projection multiplier); the adjoint
    needs it. ``diag`` has one row per level with columns
    :data:`DIAG_COLUMNS`. On failure ``n_done`` is the last level reached
    and the outputs are truncated there.
    """
    M = len(U) - 1
    N = P.shape[1] - 1
    ds = 1.0 / N
    q = np.array(q0, dtype=float)
    v = np.array(v0, dtype=float)
    sig = np.array(sigma0, dtype=float)
    close_positions(q, ds)
    close_velocities(v)
    sig[N + 1] = 0.0
    c = dt**2 / (2.0 * P[0, 1:-1] * ds)
    levels = list(range(0, M + 1, store_every))
    if levels[-1] != M:
        levels.append(M)
    Q = np.zeros((len(levels), N + 3, 2))
    V = np.zeros_like(Q)
    S = np.zeros((len(levels), N + 3))
    S2 = np.zeros_like(S)
    s_eff = sig.copy()
    diag = np.zeros((M + 1, len(DIAG_COLUMNS)))
    slot = 0
    status = OK
    n = 0
    while True:
        # tension at level n, from the position update it induces
        a0 = acceleration(q, np.zeros(N + 3), U[n], P, ds, v if with_friction else None)
        p = q[2:-2] + v[2:-2] * dt + 0.5 * dt**2 * a0
        t = (q[2:-1] - q[1:-2]) / ds
        s_new, qn, res, it, status = solve_tension(p, c, t, sig[2:-1], ds, tol, maxit)
        if status != OK:
            break
        sig[2:-1] = s_new
        sig[N + 1] = 0.0
        diag[n, :4] = _level_diag(q, v, sig, U[n], P, wbar, ds, kmax)
        diag[n, 4] = res
        diag[n, 5] = it
        if slot < len(levels) and levels[slot] == n:
            Q[slot], V[slot], S[slot], S2[slot] = q, v, sig, s_eff
            slot += 1
        if n == M:
            break
        fric = v if with_friction else None
        a_old = acceleration(q, sig, U[n], P, ds, fric)
        q_new = q.copy()
        q_new[2:-2] = qn
        close_positions(q_new, ds)
        a_new = acceleration(q_new, sig, U[n + 1], P, ds, fric)
        v_new = v.copy()
        v_new[2:-2] = v[2:-2] + 0.5 * dt * (a_old + a_new)
        s_eff = sig.copy()
        if project:
            tn = (q_new[2:-1] - q_new[1:-2]) / ds
            cc = 1.0 / (P[0, 1:-1] * ds)
            lam = _orthogonal_solve(v_new[2:-2], cc, tn, tn[:-1], ds)
            if lam is None or not np.all(np.isfinite(lam)):
                status = SINGULAR
                n += 1
                break
            v_new[2:-2] = _predict(v_new[2:-2], cc, tn, np.append(lam, 0.0))
            s_eff[2:-2] += 2.0 * lam / dt
        close_velocities(v_new)
        q, v = q_new, v_new
        n += 1
    if status != OK:
        Q, V, S, S2, diag = Q[:slot], V[:slot], S[:slot], S2[:slot], diag[:n]
    return Q, V, S, S2, diag, status, n


# ---------------------------------------------------------------- adjoint


def adjoint_acceleration(qb, sb, w, q, sig, u, P, ds, with_friction):
    """Linearized acceleration at k = 1..N-1 for the adjoint pair (qb, sb)."""
    dm, d2 = _stencils(q, ds)
    dmb, d2b = _stencils(qb, ds)
    dm, d2, dmb, d2b = dm[1:-1], d2[1:-1], dmb[1:-1], d2b[1:-1]
    eps, nu, om, mu = P[1], P[2], P[3], P[4]
    x = _dot(d2, d2) - om**2
    G = eps + nu * np.maximum(x, 0.0)
    H = mu * (om * u - _cross(dm, d2))
    g = 2.0 * nu * (x >= 0.0)
    Hb = -mu * (_cross(dmb, d2) + _cross(dm, d2b))
    H[-2:] = 0.0
    Hb[-2:] = 0.0
    Gb = g * _dot(d2, d2b)
    F = (
        sig[2:-1, None] * dmb[1:]
        - H[1:, None] * _perp(d2b[1:])
        + sb[2:-1, None] * dm[1:]
        - Hb[1:, None] * _perp(d2[1:])
    )
    B = G[:, None] * d2b + H[:, None] * _perp(dmb) + Gb[:, None] * d2 + Hb[:, None] * _perp(dm)
    out = _divergence(F, B, ds)
    if with_friction:
        out = out + _friction(w, P, ds)
    return out / P[0, 1:-1, None]


def _adjoint_tip(q, P, target, inv_tau, ds):
    """Tip data tied to a forward level: ``(sigbar_N, third-difference jump)``.

    The jump is divided by the bending coefficient of node N-1, the node
    whose moment carries it in the stencil (G_{N-1} = eps_{N-1} there since
    D2q_{N-1} = 0).
    """
    N = len(q) - 3
    tN = (q[N + 1] - q[N]) / ds
    miss = q[N + 1] - target
    sbN = -inv_tau * float(miss @ tN)
    tp = np.array([tN[1], -tN[0]])
    jump = (inv_tau / P[1, N - 1]) * float(miss @ tp) * tp
    return sbN, jump


def close_adjoint(qb, jump, ds):
    n = len(qb) - 1
    qb[0] = 0.0
    qb[1] = 0.0
    qb[n - 1] = 2.0 * qb[n - 2] - qb[n - 3] - jump * ds**3
    qb[n] = 2.0 * qb[n - 1] - qb[n - 2]


def _orthogonal_solve(P_, c, t, t_new, ds, target=0.0):
    """sigbar_1..sigbar_{N-1} making ``D_- qb . D_- q = 0`` on the new level."""
    m = len(P_)
    ck = c
    ckm = np.concatenate([[0.0], c[:-1]])
    di = -(ck + ckm) * _dot(t[:-1], t_new)
    up = ck * _dot(t[1:], t_new)
    lo = np.zeros(m)
    lo[1:] = ckm[1:] * _dot(t[:-2], t_new[1:])
    dP = _segments(P_)
    rhs = target * ds - _dot(dP, t_new)
    return _thomas(lo, di, up, rhs)


def adjoint_run(Q, V, S, S2, U, P, target, inv_tau, dt, with_friction, project, qb0=None, w0=None):
    """Backward march of the adjoint system over stored forward levels.

    ``Q``/``V``/``S`` must hold every level ``0..M``. The march starts from
    ``qb0``/``w0`` when given, else from the final conditions. Returns
    ``(QB, WB, SB, status, n_fail)``: adjoint positions, reversed-time
    velocities ``w = -qbar_t`` and tensions on all levels, a status code
    and the level at which a failure occurred.
    """
    M = len(U) - 1
    N = P.shape[1] - 1
    ds = 1.0 / N
    target = np.asarray(target, dtype=float)
    c = dt**2 / (2.0 * P[0, 1:-1] * ds)
    QB = np.zeros((M + 1, N + 3, 2))
    WB = np.zeros((M + 1, N + 3, 2))
    SB = np.zeros((M + 1, N + 3))
    sbN, jump = _adjoint_tip(Q[M], P, target, inv_tau, ds)
    if qb0 is None:
        qb = -np.array(V[M], dtype=float)
        close_adjoint(qb, jump, ds)
    else:
        qb = np.array(qb0, dtype=float)
    w = np.zeros((N + 3, 2)) if w0 is None else np.array(w0, dtype=float)
    WB[M] = w
    sb = np.zeros(N + 3)
    sb[N + 1] = sbN
    QB[M] = qb
    for n in range(M, 0, -1):
        q, q_prev = Q[n], Q[n - 1]
        sb[2:-2] = 0.0
        sb[N + 1] = sbN
        a0 = adjoint_acceleration(qb, sb, w, q, S2[n], U[n], P, ds, with_friction)
        Pk = qb[2:-2] + w[2:-2] * dt + 0.5 * dt**2 * a0
        t = (q[2:-1] - q[1:-2]) / ds
        t_prev = (q_prev[2:-2] - q_prev[1:-3]) / ds
        x = _orthogonal_solve(Pk, c, t, t_prev, ds)
        if x is None or not np.all(np.isfinite(x)):
            return QB, WB, SB, SINGULAR, n
        sb[2:-2] = x
        SB[n] = sb
        qb_new = qb.copy()
        qb_new[2:-2] = _predict(Pk, c, t, np.append(x, 0.0))
        sbN_prev, jump_prev = _adjoint_tip(q_prev, P, target, inv_tau, ds)
        close_adjoint(qb_new, jump_prev, ds)
        a_old = adjoint_acceleration(qb, sb, w, q, S2[n], U[n], P, ds, with_friction)
        sb_mid = sb.copy()
        sb_mid[N + 1] = sbN_prev
        a_new = adjoint_acceleration(qb_new, sb_mid, w, q_prev, S[n - 1], U[n - 1], P, ds, with_friction)
        w_new = w.copy()
        w_new[2:-2] = w[2:-2] + 0.5 * dt * (a_old + a_new)
        if project:
            cc = 1.0 / (P[0, 1:-1] * ds)
            tp = (q_prev[2:-1] - q_prev[1:-2]) / ds
            vp = V[n - 1]
            rhs = _dot(qb_new[2:-2] - qb_new[1:-3], vp[2:-2] - vp[1:-3]) / ds**2
            lam = _orthogonal_solve(w_new[2:-2], cc, tp, tp[:-1], ds, rhs)
            if lam is None or not np.all(np.isfinite(lam)):
                return QB, WB, SB, SINGULAR, n
            w_new[2:-2] = _predict(w_new[2:-2], cc, tp, np.append(lam, 0.0))
        close_velocities(w_new)
        qb, w, sbN = qb_new, w_new, sbN_prev
        QB[n - 1] = qb
        WB[n - 1] = w
    # tension at level 0 from one more solve
    q = Q[0]
    sb[2:-2] = 0.0
    sb[N + 1] = sbN
    a0 = adjoint_acceleration(qb, sb, w, q, S[0], U[0], P, ds, with_friction)
    Pk = qb[2:-2] + w[2:-2] * dt + 0.5 * dt**2 * a0
    t = (q[2:-1] - q[1:-2]) / ds
    x = _orthogonal_solve(Pk, c, t, t[:-1], ds)
    if x is None or not np.all(np.isfinite(x)):
        return QB, WB, SB, SINGULAR, 0
    sb[2:-2] = x
    SB[0] = sb
    return QB, WB, SB, OK, -1
