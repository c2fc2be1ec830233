"""Augmented Lagrangian solver for the stationary reach problem.

The curvature bound enters through the multiplier ``lambda`` and the cap
``Lambda = 1/omega_bar^2 + max(lambda + (|q_ss|^2 - omega_bar^2)/rho_lambda, 0)``;
each outer iteration solves the discrete optimality system with a
quasi-Newton method whose Jacobian freezes ``Lambda`` at the previous
iterate, then updates the multipliers.

Unknowns are ``q_1..q_N`` and ``sigma_1..sigma_N``. The tip ghost
``q_{N+1} = 2 q_N - q_{N-1}`` is eliminated, so ``D2 q_N = 0`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import minimize

from .equilibria import StationaryControl, curvature, synthesize_control
from .fd import Grid
from .output import csv_text, json_text
from .params import ParamSet

OMEGA_FLOOR = 1e-3
MAX_OUTER = 500
MAX_ESCALATIONS = 3
TILT = 1e-3


class StaticSetupError(ValueError):
    pass


class InnerSolveError(RuntimeError):
    """Quasi-Newton solve did not reach its tolerance; carries the last iterate."""

    def __init__(self, msg, residual=math.nan, iterate=None):
        super().__init__(msg)
        self.residual = residual
        self.iterate = iterate


class OuterLimitError(RuntimeError):
    def __init__(self, msg, iterate=None, history=None):
        super().__init__(msg)
        self.iterate = iterate
        self.history = history or []


@dataclass(frozen=True)
class StaticProblem:
    target: tuple
    tau: float = 1e-4
    rho_lambda: float = 1e2
    tol: float = 1e-8

    def __post_init__(self):
        t = tuple(float(x) for x in np.asarray(self.target, dtype=float).ravel())
        if len(t) != 2 or not all(math.isfinite(x) for x in t):
            raise StaticSetupError(f"target must be a finite 2-vector, got {self.target!r}")
        object.__setattr__(self, "target", t)
        for name in ("tau", "rho_lambda", "tol"):
            v = float(getattr(self, name))
            if not v > 0 or not math.isfinite(v):
                raise StaticSetupError(f"{name} must be positive, got {v!r}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True, eq=False)
class StaticIterate:
    """Node fields with N+3 slots (index k+1 holds node k).

    ``sigma`` lives on k = 1..N (``sigma_N`` is an unknown here), ``lam`` on
    k = 0..N-1; other slots are zero.
    """

    q: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    j_sharp: float = math.nan
    residual: float = math.nan
    inner_iters: int = 0

    @property
    def N(self) -> int:
        return len(self.q) - 3

    @property
    def tip(self) -> np.ndarray:
        return self.q[self.N + 1].copy()


# ---------------------------------------------------------------- basics

def _check(p: ParamSet, grid: Grid | None):
    if grid is not None and grid.N != p.N:
        raise StaticSetupError(f"grid has N={grid.N} but parameters have N={p.N}")
    if p.N < 3:
        raise StaticSetupError("static optimization needs N >= 3")


def weights(p: ParamSet) -> np.ndarray:
    """``1/omega_bar_k^2`` with the floor applied where ``omega_bar`` vanishes."""
    return 1.0 / np.maximum(p.omega_bar**2, OMEGA_FLOOR**2)


def lambda_cap(q_ss, lam, omega_bar, rho_lambda, floor: float = OMEGA_FLOOR):
    """Curvature weight ``Lambda``; ``q_ss`` may be a vector or an array of them."""
    q_ss = np.asarray(q_ss, dtype=float)
    w2 = np.asarray(omega_bar, dtype=float) ** 2
    if np.any(np.maximum(w2, floor**2) == 0.0):
        raise StaticSetupError("omega_bar = 0 with no floor: 1/omega_bar^2 is undefined")
    ss = np.sum(q_ss * q_ss, axis=-1)
    return 1.0 / np.maximum(w2, floor**2) + np.maximum(lam + (ss - w2) / rho_lambda, 0.0)


def straight_start(N: int) -> StaticIterate:
    ds = 1.0 / N
    q = np.zeros((N + 3, 2))
    q[:, 1] = -(np.arange(N + 3) - 1) * ds
    return StaticIterate(q, np.zeros(N + 3), np.zeros(N + 3))


def _close(q):
    """Fix the base ghost and rebuild the tip ghost in place."""
    N = len(q) - 3
    q[0] = (0.0, 1.0 / N)
    q[1] = 0.0
    q[N + 2] = 2.0 * q[N + 1] - q[N]
    return q


def _d2(q):
    """``D2_c q_k`` on k = 0..N with the closure value ``D2 q_N = 0``."""
    N = len(q) - 3
    d2 = (q[2:] - 2.0 * q[1:-1] + q[:-2]) * (N * N)
    d2[N] = 0.0
    return d2


def _caps(q, lam, p, rho_lambda):
    """``Lambda_k`` on k = 0..N (no multiplier at the tip, where ``D2 q_N = 0``)."""
    lam_k = np.zeros(p.N + 1)
    lam_k[:p.N] = lam[1:p.N + 1]
    return lambda_cap(_d2(q), lam_k, p.omega_bar, rho_lambda)


def signed_curvature(q) -> np.ndarray:
    """``kappa_k = D_- q_k x D2_c q_k`` on k = 0..N."""
    return curvature(q)


def j_sharp(q, prob: StaticProblem, p: ParamSet, grid: Grid | None = None) -> float:
    """Discrete objective: rectangle rule for the curvature cost plus the tip penalty."""
    q = np.asarray(q, dtype=float)
    N = p.N
    d2 = _d2(q)
    cost = 0.5 / N * float(np.sum(weights(p) * np.sum(d2 * d2, axis=1)))
    miss = q[N + 1] - np.asarray(prob.target)
    return cost + float(miss @ miss) / (2.0 * prob.tau)


# ---------------------------------------------------------------- system

def _unpack(x, N):
    q = np.zeros((N + 3, 2))
    blk = x.reshape(N, 3)
    q[2:N + 2] = blk[:, :2]
    _close(q)
    sigma = np.zeros(N + 3)
    sigma[2:N + 2] = blk[:, 2]
    return q, sigma


def _pack(q, sigma):
    N = len(q) - 3
    return np.column_stack([q[2:N + 2], sigma[2:N + 2]]).ravel()


def _rows(q, sigma, caps, target, tau):
    """Residual of the optimality system, ordered to match the unknowns.

    Row block k (k = 1..N-1) holds the two force rows at node k and the
    inextensibility row of segment k; block N holds the tip balance (two
    rows) and the inextensibility row of segment N.
    """
    N = len(q) - 3
    ds = 1.0 / N
    d2 = _d2(q)
    dm = (q[1:] - q[:-1]) * N                      # D_- q_k, k = 0..N+1
    m = caps[:, None] * d2                          # k = 0..N
    s = sigma[1:N + 2]                              # sigma_k, k = 0..N
    out = np.empty((N, 3))
    k = np.arange(1, N)
    bend = (m[k + 1] - 2.0 * m[k] + m[k - 1]) / ds**2
    tens = (s[k + 1, None] * dm[k + 1] - s[k, None] * dm[k]) / ds
    out[:N - 1, :2] = bend - tens
    out[N - 1, :2] = s[N] * dm[N] + (q[N + 1] - target) / tau
    out[:, 2] = np.sum(dm[1:N + 1] ** 2, axis=1) - 1.0
    return out.ravel()


def _jacobian_banded(q, sigma, caps, tau):
    """Frozen-cap Jacobian in LAPACK band storage, bandwidths (l, u)."""
    N = len(q) - 3
    ds = 1.0 / N
    n = 3 * N
    dm = (q[1:] - q[:-1]) * N
    s = sigma[1:N + 2]
    L = caps.copy()
    L[N] = 0.0                                     # D2 q_N vanishes identically
    rows, cols, vals = [], [], []

    def put(r, node, comp, v):
        if node <= 0:
            return
        if node == N + 1:                           # ghost: q_{N+1} = 2 q_N - q_{N-1}
            put(r, N, comp, 2.0 * v)
            put(r, N - 1, comp, -v)
            return
        rows.append(r)
        cols.append(3 * (node - 1) + comp)
        vals.append(v)

    h4 = 1.0 / ds**4
    for k in range(1, N):
        band = {
            k - 2: L[k - 1],
            k - 1: -2.0 * (L[k - 1] + L[k]),
            k: L[k - 1] + 4.0 * L[k] + L[k + 1],
            k + 1: -2.0 * (L[k] + L[k + 1]),
            k + 2: L[k + 1],
        }
        for c in range(2):
            r = 3 * (k - 1) + c
            for node, v in band.items():
                put(r, node, c, v * h4)
            put(r, k + 1, c, -s[k + 1] / ds**2)
            put(r, k, c, (s[k] + s[k + 1]) / ds**2)
            put(r, k - 1, c, -s[k] / ds**2)
            rows += [r, r]
            cols += [3 * k + 2, 3 * (k - 1) + 2]
            vals += [-dm[k + 1, c] / ds, dm[k, c] / ds]
    for c in range(2):
        r = 3 * (N - 1) + c
        rows.append(r)
        cols.append(3 * (N - 1) + 2)
        vals.append(dm[N, c])
        put(r, N, c, s[N] / ds + 1.0 / tau)
        put(r, N - 1, c, -s[N] / ds)
    for k in range(1, N + 1):
        r = 3 * (k - 1) + 2
        for c in range(2):
            put(r, k, c, 2.0 * dm[k, c] / ds)
            put(r, k - 1, c, -2.0 * dm[k, c] / ds)

    rows = np.asarray(rows)
    cols = np.asarray(cols)
    vals = np.asarray(vals)
    lo = int(max(0, np.max(rows - cols)))
    up = int(max(0, np.max(cols - rows)))
    ab = np.zeros((lo + up + 1, n))
    np.add.at(ab, (up + rows - cols, cols), vals)
    return ab, (lo, up)


def _full_residual(q, sigma, lam, prob, p):
    caps = _caps(q, lam, p, prob.rho_lambda)
    return _rows(q, sigma, caps, np.asarray(prob.target), prob.tau)


def residual(it: StaticIterate, prob: StaticProblem, p: ParamSet, grid: Grid | None = None) -> np.ndarray:
    """Stacked residual: force rows (k = 1..N-1), inextensibility (k = 1..N), tip balance.

    The returned vector is ``[force (2(N-1)), inextensibility (N), closure (2), tip (2)]``.
    The closure row ``q_{N+1} - 2 q_N + q_{N-1}`` is reported from the stored
    node field; the solver itself keeps it at zero by construction.
    """
    _check(p, grid)
    q = np.asarray(it.q, dtype=float)
    N = p.N
    r = _full_residual(q, np.asarray(it.sigma, dtype=float), np.asarray(it.lam, dtype=float), prob, p)
    blk = r.reshape(N, 3)
    closure = q[N + 2] - 2.0 * q[N + 1] + q[N]
    return np.concatenate([blk[:N - 1, :2].ravel(), blk[:, 2], closure, blk[N - 1, :2]])


# ---------------------------------------------------------------- inner solve

def _damping(q, caps, lam, p, rho_lambda) -> float:
    """Step length ``2/(2+beta)`` for the frozen-cap iteration.

    Freezing ``Lambda`` drops the term ``(2/rho_lambda) D2q D2q^T`` at nodes
    where the cap is active; relative to the kept ``Lambda`` it is at most
    ``beta``, so the frozen step has spectrum in [1, 1+beta] and this damping
    makes it a contraction. With no active node the full step is kept.
    """
    N = p.N
    d2 = _d2(q)
    ss = np.sum(d2 * d2, axis=1)
    lam_k = np.zeros(N + 1)
    lam_k[:N] = lam[1:N + 1]
    active = lam_k + (ss - p.omega_bar**2) / rho_lambda > 0.0
    if not np.any(active):
        return 1.0
    beta = float(np.max(2.0 * ss[active] / (rho_lambda * caps[active])))
    return 2.0 / (2.0 + beta)


def _newton(q, sigma, lam, prob, p, inner_tol, max_iter, max_step, window=10):
    """Damped quasi-Newton iterations; returns (q, sigma, residual, iterations).

    Steps are accepted against the largest residual norm of the last
    ``window`` iterates (non-monotone backtracking): the damped frozen-cap
    iteration contracts overall but not in every step.
    """
    N = p.N
    target = np.asarray(prob.target)
    x = _pack(q, sigma)
    q, sigma = _unpack(x, N)
    caps = _caps(q, lam, p, prob.rho_lambda)
    r = _rows(q, sigma, caps, target, prob.tau)
    res = float(np.max(np.abs(r)))
    recent = [float(np.linalg.norm(r))]
    it = 0
    while res > inner_tol or it == 0:
        if it >= max_iter:
            raise InnerSolveError(
                f"quasi-Newton did not converge in {max_iter} iterations (residual {res:.3e})",
                residual=res, iterate=(q, sigma),
            )
        ab, lu = _jacobian_banded(q, sigma, caps, prob.tau)
        try:
            dx = solve_banded(lu, ab, -r, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise InnerSolveError(f"singular quasi-Newton system: {exc}", residual=res, iterate=(q, sigma)) from exc
        dq = np.zeros((N + 1, 2))
        dq[1:] = dx.reshape(N, 3)[:, :2]
        turn = float(np.max(np.hypot(*np.diff(dq, axis=0).T))) * N     # largest |D_- dq|
        a = _damping(q, caps, lam, p, prob.rho_lambda)
        if turn > 0:
            a = min(a, max_step / turn)
        ref = max(recent)
        while True:
            qt, st = _unpack(x + a * dx, N)
            ct = _caps(qt, lam, p, prob.rho_lambda)
            rt = _rows(qt, st, ct, target, prob.tau)
            nt = float(np.linalg.norm(rt))
            if np.isfinite(nt) and nt <= (1.0 - 1e-4 * a) * ref:
                break
            a *= 0.5
            if a < 1e-12:
                if res <= inner_tol:            # already converged; roundoff blocks the forced step
                    return q, sigma, res, it
                raise InnerSolveError(
                    f"line search failed (residual {res:.3e})", residual=res, iterate=(q, sigma)
                )
        x = x + a * dx
        q, sigma, caps, r = qt, st, ct, rt
        res = float(np.max(np.abs(r)))
        recent = (recent + [nt])[-window:]
        it += 1
    return q, sigma, res, it


def quasi_newton_solve(start: StaticIterate, prob: StaticProblem, p: ParamSet, grid: Grid | None = None,
                       inner_tol: float = 1e-8, max_iter: int = 2000, max_step: float = 0.5) -> StaticIterate:
    """Solve the optimality system for fixed multipliers.

    Each step solves the banded system whose curvature block is
    ``Lambda D2 D2`` with ``Lambda`` taken from the current iterate. The step
    is damped where caps are active (see :func:`_damping`) and shortened so
    no segment turns by more than ``max_step``.
    """
    _check(p, grid)
    q, sigma, res, n = _newton(
        np.array(start.q, dtype=float), np.array(start.sigma, dtype=float),
        np.asarray(start.lam, dtype=float), prob, p, inner_tol, max_iter, max_step,
    )
    return StaticIterate(q, sigma, np.array(start.lam, dtype=float), j_sharp(q, prob, p), res, n)


def _angles(q) -> np.ndarray:
    """Segment angles ``theta_1..theta_N`` with ``D_- q_k = (sin, -cos)(theta_k)``."""
    N = len(q) - 3
    dm = (q[2:N + 2] - q[1:N + 1]) * N
    return np.unwrap(np.arctan2(dm[:, 0], -dm[:, 1]))


def _from_angles(theta) -> np.ndarray:
    N = len(theta)
    q = np.zeros((N + 3, 2))
    q[2:N + 2] = np.cumsum(np.column_stack([np.sin(theta), -np.cos(theta)]), axis=0) / N
    return _close(q)


def _al_energy(theta, lam_k, rho, w, wb2, target, tau):
    """Augmented Lagrangian with the slack eliminated, as a function of the angles."""
    N = len(theta)
    ds = 1.0 / N
    t = np.empty((N + 1, 2))
    t[0] = (0.0, -1.0)
    t[1:, 0] = np.sin(theta)
    t[1:, 1] = -np.cos(theta)
    d2 = np.zeros((N + 1, 2))
    d2[:N] = (t[1:] - t[:-1]) / ds
    miss = ds * t[1:].sum(axis=0) - target
    c = np.sum(d2 * d2, axis=1) - wb2
    m = np.maximum(lam_k + c / rho, 0.0)
    energy = ds * np.sum(0.5 * w * np.sum(d2 * d2, axis=1) + 0.25 * rho * (m * m - lam_k * lam_k))
    energy += float(miss @ miss) / (2.0 * tau)
    g = (w + m)[:N, None] * d2[:N]                  # ds * Lambda D2q / ds
    gt = np.zeros((N + 1, 2))
    gt[1:] += g
    gt[:N] -= g
    gt[1:] += ds * miss / tau
    dt = np.column_stack([np.cos(theta), np.sin(theta)])
    return energy, np.sum(gt[1:] * dt, axis=1)


def _predict(it: StaticIterate, prob: StaticProblem, p: ParamSet) -> StaticIterate:
    """Minimize the current augmented Lagrangian over segment angles.

    Inextensibility holds exactly in these coordinates and the iteration only
    descends, so it cannot stall at the stationary point where the rod points
    straight at the target, which a Newton solve started from the straight
    rod tends to find. The result seeds the quasi-Newton solve.
    """
    N = p.N
    lam_k = np.zeros(N + 1)
    lam_k[:N] = np.asarray(it.lam)[1:N + 1]
    w2 = np.asarray(p.omega_bar) ** 2
    args = (lam_k, prob.rho_lambda, weights(p), w2, np.asarray(prob.target), prob.tau)
    theta = _angles(np.asarray(it.q))
    if np.all(theta == 0.0) and prob.target[0] == 0.0:
        theta = TILT * np.arange(1, N + 1) / N      # the straight rod is stationary for on-axis targets
    res = minimize(_al_energy, theta, args=args, jac=True, method="BFGS",
                   options={"gtol": 1e-10, "maxiter": 50 * N})
    return replace(it, q=_from_angles(res.x))


def update_multipliers(it: StaticIterate, p: ParamSet, rho_lambda: float) -> np.ndarray:
    """``lambda_k <- max(lambda_k + (|D2 q_k|^2 - omega_bar_k^2)/rho_lambda, 0)`` on k = 0..N-1.

    The base node is included: its curvature involves the clamped tangent
    and would otherwise only see the (weak) penalty term.
    """
    N = p.N
    d2 = _d2(np.asarray(it.q, dtype=float))
    lam = np.zeros(N + 3)
    k = np.arange(0, N)
    viol = np.sum(d2[k] ** 2, axis=1) - p.omega_bar[k] ** 2
    lam[k + 1] = np.maximum(np.asarray(it.lam)[k + 1] + viol / rho_lambda, 0.0)
    return lam


# ---------------------------------------------------------------- outer loop

@dataclass(eq=False)
class StaticSolution:
    """Result of :func:`static_optimize`; unpacks as ``(iterate, control)``."""

    iterate: StaticIterate
    control: StationaryControl
    history: list = field(default_factory=list)
    rho_lambda: float = math.nan
    outer_iters: int = 0

    def __iter__(self):
        return iter((self.iterate, self.control))

    def csv(self, p: ParamSet) -> str:
        it = self.iterate
        N = p.N
        kappa = signed_curvature(it.q)
        rows = [
            (k / N, it.q[k + 1, 0], it.q[k + 1, 1], it.sigma[k + 1], it.lam[k + 1],
             self.control.u[k], kappa[k], p.omega_bar[k])
            for k in range(N + 1)
        ]
        return csv_text(("s", "qx", "qy", "sigma", "lambda", "u", "kappa", "omega_bar"), rows)

    def summary(self, prob: StaticProblem) -> dict:
        it = self.iterate
        return {
            "target": list(prob.target),
            "tau": prob.tau,
            "rho_lambda": self.rho_lambda,
            "tol": prob.tol,
            "outer_iterations": self.outer_iters,
            "j_sharp": it.j_sharp,
            "residual": it.residual,
            "tip": it.tip.tolist(),
            "clamped_nodes": int(np.sum(self.control.clamped)),
            "history": self.history,
        }

    def json(self, prob: StaticProblem) -> str:
        return json_text(self.summary(prob))


def static_optimize(prob: StaticProblem, p: ParamSet, grid: Grid | None = None, start: StaticIterate | None = None,
                    single_loop: bool = False, inner_tol: float = 1e-8, max_inner: int = 2000,
                    max_outer: int = MAX_OUTER, predict: bool = True) -> StaticSolution:
    """Method of multipliers with the change of ``J#`` as stopping rule.

    Every inner solve is seeded by :func:`_predict`. ``single_loop=True``
    replaces each inner solve by one quasi-Newton step followed by the
    multiplier update; it only settles when no curvature cap is active. On an
    inner failure ``rho_lambda`` is multiplied by 10 and the solve restarts
    from the last iterate, at most three times. The returned iterate is
    re-solved with its final multipliers.
    """
    _check(p, grid)
    N = p.N
    it = start if start is not None else straight_start(N)
    if it.N != N:
        raise StaticSetupError(f"start iterate has N={it.N}, parameters have N={N}")
    it = replace(it, q=_close(np.array(it.q, dtype=float)), j_sharp=j_sharp(it.q, prob, p))

    rho = prob.rho_lambda
    escalations = 0
    history = [{"outer": 0, "j_sharp": it.j_sharp, "residual": it.residual,
                "max_lambda": float(np.max(it.lam)), "rho_lambda": rho}]
    prev = history[0]["j_sharp"]
    step_iters = 1 if single_loop else max_inner
    outer = 0
    while True:
        outer += 1
        if outer > max_outer:
            raise OuterLimitError(f"no convergence in {max_outer} outer iterations", it, history)
        cur = replace(prob, rho_lambda=rho)
        try:
            if predict and (outer == 1 or not single_loop):
                it = _predict(it, cur, p)
            if single_loop:
                it = _single_step(it, cur, p, inner_tol)
            else:
                it = quasi_newton_solve(it, cur, p, None, inner_tol, step_iters)
        except InnerSolveError as exc:
            if escalations >= MAX_ESCALATIONS:
                raise
            escalations += 1
            rho *= 10.0
            if exc.iterate is not None:
                q, sigma = exc.iterate
                it = replace(it, q=q, sigma=sigma)
            outer -= 1
            continue
        lam = update_multipliers(it, p, rho)
        it = replace(it, lam=lam)
        history.append({"outer": outer, "j_sharp": it.j_sharp, "residual": it.residual,
                        "max_lambda": float(lam.max()), "rho_lambda": rho})
        if abs(it.j_sharp - prev) < prob.tol and (not single_loop or it.residual <= inner_tol):
            break
        prev = it.j_sharp

    # the stored multipliers moved after the last solve; re-solve so the
    # returned iterate satisfies the system with its own lambda
    it = quasi_newton_solve(it, replace(prob, rho_lambda=rho), p, None, inner_tol, max_inner)
    control = synthesize_control(it.q, p)
    return StaticSolution(it, control, history, rho, outer)


def _single_step(it, prob, p, inner_tol):
    """One quasi-Newton step (no inner convergence requirement)."""
    q, sigma = np.array(it.q, dtype=float), np.array(it.sigma, dtype=float)
    q, sigma, _, n = _newton(q, sigma, np.asarray(it.lam), prob, p, np.inf, 1, 0.5)
    r = _full_residual(q, sigma, np.asarray(it.lam), prob, p)
    return StaticIterate(q, sigma, np.array(it.lam, dtype=float), j_sharp(q, prob, p),
                         float(np.max(np.abs(r))), n)
