"""Independent reference formulas used as test oracles.

Written directly from the discrete equations with plain loops, sharing no
code with the package kernels.
"""

from fractions import Fraction

import numpy as np


def perp(a):
    return (a[1], -a[0])


def cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def accel_loops(q, sigma, u, P, ds, mask_tip=True):
    """a_k, k = 1..N-1, for q on slots -1..N+1 (index k+1). Works with floats or Fractions."""
    N = len(q) - 3
    rho, eps, nu, om, mu = P[0], P[1], P[2], P[3], P[4]
    Q = lambda k: q[k + 1]
    dm = lambda k: ((Q(k)[0] - Q(k - 1)[0]) / ds, (Q(k)[1] - Q(k - 1)[1]) / ds)
    d2 = lambda k: ((Q(k + 1)[0] - 2 * Q(k)[0] + Q(k - 1)[0]) / ds**2,
                    (Q(k + 1)[1] - 2 * Q(k)[1] + Q(k - 1)[1]) / ds**2)

    def G(k):
        c = d2(k)
        x = c[0] * c[0] + c[1] * c[1] - om[k] ** 2
        return eps[k] + nu[k] * (x if x > 0 else 0)

    def H(k):
        if mask_tip and k >= N - 1:
            return 0
        return mu[k] * (om[k] * u[k] - cross(dm(k), d2(k)))

    def F(k):   # sigma D_- q - H (D2 q)^perp
        a, b = dm(k), perp(d2(k))
        h = H(k)
        sk = sigma[k + 1]
        return (sk * a[0] - h * b[0], sk * a[1] - h * b[1])

    def B(k):   # G D2 q + H (D_- q)^perp
        a, b = d2(k), perp(dm(k))
        g, h = G(k), H(k)
        return (g * a[0] + h * b[0], g * a[1] + h * b[1])

    out = []
    for k in range(1, N):
        f1, f0 = F(k + 1), F(k)
        b1, b0, bm = B(k + 1), B(k), B(k - 1)
        out.append(tuple(((f1[i] - f0[i]) / ds - (b1[i] - 2 * b0[i] + bm[i]) / ds**2) / rho[k] for i in range(2)))
    return out


def straight(N, exact=False):
    one = Fraction(1) if exact else 1.0
    return [(0 * one, -(k - 1) * one / N) for k in range(N + 3)]


def closures(q):
    q = np.array(q, dtype=float)
    N = len(q) - 3
    q[1] = 0.0
    q[0] = q[1] + np.array([0.0, 1.0 / N])
    q[N + 1] = 2 * q[N] - q[N - 1]
    q[N + 2] = 2 * q[N + 1] - q[N]
    return q


def verlet_positions_dense(q, v, sig_guess, u, P, dt):
    """Solve q^{n+1}_k = q_k + v_k dt + dt^2/2 a_k(q, sigma), |D_- q^{n+1}_k|^2 = 1, k = 1..N-1, densely."""
    N = len(q) - 3
    ds = 1.0 / N
    sig_full = lambda s: np.concatenate([[0.0, 0.0], s, [0.0, 0.0]])   # slots -1..N+1, sigma_N = 0

    def new_q(s):
        a = np.array(accel_loops(q, sig_full(s), u, P, ds))
        qn = np.array(q, dtype=float)
        qn[2:N + 1] = q[2:N + 1] + v[2:N + 1] * dt + 0.5 * dt**2 * a
        return qn

    def res(s):
        qn = new_q(s)
        d = (qn[2:N + 1] - qn[1:N]) / ds
        return np.sum(d * d, axis=1) - 1.0

    # dense Newton with a central-difference Jacobian (the system is affine-quadratic in sigma)
    s = np.array(sig_guess, dtype=float)
    for _ in range(8):
        r = res(s)
        J = np.empty((N - 1, N - 1))
        h = 1e-6
        for j in range(N - 1):
            e = np.zeros(N - 1)
            e[j] = h
            J[:, j] = (res(s + e) - res(s - e)) / (2 * h)
        s = s - np.linalg.solve(J, r)
    return new_q(s), s, float(np.max(np.abs(res(s))))
