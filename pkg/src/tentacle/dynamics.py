"""Forward dynamics of the controlled tentacle.

The integrator is a constrained velocity Verlet scheme: each step solves a
Newton system for the tension that keeps every segment at unit length,
then updates velocities with the averaged acceleration and (by default)
projects them onto the tangent space of the constraint. The time loop runs
in :mod:`tentacle.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fd import Grid
from .kernels import _fallback as _ref
from .output import csv_text
from .params import ParamSet

E2 = np.array([0.0, 1.0])


class InputError(ValueError):
    pass


class StepError(RuntimeError):
    """The tension Newton solve failed.

    ``level`` is the time level whose step failed, ``residual`` the last
    constraint residual, ``state`` the last accepted state and
    ``trajectory`` the partial trajectory up to it (when available).
    """

    def __init__(self, message, level, residual, state=None, trajectory=None, status=None):
        super().__init__(message)
        self.level = level
        self.residual = residual
        self.state = state
        self.trajectory = trajectory
        self.status = status


@dataclass(frozen=True, eq=False)
class RodState:
    """Positions ``q`` (N+3, 2), velocities ``v`` (N+3, 2), tension ``sigma`` (N+3,), time ``t``."""

    q: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    t: float = 0.0

    @property
    def N(self) -> int:
        return len(self.q) - 3

    def tip(self) -> np.ndarray:
        return self.q[self.N + 1].copy()


def straight_rod(N: int) -> np.ndarray:
    """Rod hanging along ``-e2``: ``q_k = -k ds e2`` on every slot."""
    q = np.zeros((N + 3, 2))
    q[:, 1] = -(np.arange(N + 3) - 1) / N
    return q


def apply_closures(q: np.ndarray) -> np.ndarray:
    """Copy of ``q`` with the anchor, fixed tangent and tip closures imposed."""
    q = np.array(q, dtype=float)
    _ref.close_positions(q, 1.0 / (len(q) - 3))
    return q


def constraint_residual(q: np.ndarray) -> float:
    """``max_k | |D_- q_k|^2 - 1 |`` over k = 1..N-1."""
    N = len(q) - 3
    d = (q[2:N + 1] - q[1:N]) * N
    return float(np.max(np.abs(np.sum(d * d, axis=1) - 1.0)))


def gh_fields(q, u_row, p: ParamSet):
    """``G_k`` and ``H_k`` on k = 0..N as node fields (ghost slots left at 0).

    These are the plain formulas. The moment built from them in
    :func:`acceleration` drops ``H`` on the two closure nodes k = N-1, N.
    """
    N = p.N
    G, H = _ref.gh(np.asarray(q, dtype=float), np.asarray(u_row, dtype=float), p.stacked(), 1.0 / N)
    Gf = np.zeros(N + 3)
    Hf = np.zeros(N + 3)
    Gf[1:-1] = G
    Hf[1:-1] = H
    return Gf, Hf


def acceleration(state: RodState, u_row, p: ParamSet, with_friction: bool = False) -> np.ndarray:
    """Node field of accelerations; slots k = 1..N-1 are filled."""
    N = p.N
    q = apply_closures(state.q)
    sig = np.array(state.sigma, dtype=float)
    sig[N + 1] = 0.0
    v = np.asarray(state.v, dtype=float) if with_friction else None
    a = np.zeros((N + 3, 2))
    a[2:N + 1] = _ref.acceleration(q, sig, np.asarray(u_row, dtype=float), p.stacked(), 1.0 / N, v)
    return a


def energy(q, v, u_row, p: ParamSet) -> float:
    """Kinetic energy of the free nodes plus the elastic potential over k = 0..N-2."""
    N = p.N
    q = apply_closures(q)
    dm = (q[1:-1] - q[:-2]) * N
    d2 = (q[2:] - 2.0 * q[1:-1] + q[:-2]) * N * N
    curv2 = np.sum(d2 * d2, axis=1)
    kappa = dm[:, 0] * d2[:, 1] - dm[:, 1] * d2[:, 0]
    x = np.maximum(curv2 - p.omega**2, 0.0)
    w = 0.25 * p.nu * x**2 + 0.5 * p.eps * curv2 + 0.5 * p.mu * (p.omega * np.asarray(u_row) - kappa) ** 2
    vv = np.asarray(v)[2:N + 1]
    kin = 0.5 / N * float(np.sum(p.rho[1:N] * np.sum(vv * vv, axis=1)))
    return kin + float(np.sum(w[: N - 1])) / N


@dataclass(frozen=True)
class SimOptions:
    with_friction: bool = True
    project_velocity: bool = True
    tol: float = 1e-10
    max_newton: int = 50
    store_every: int = 1
    backend: str | None = None
    #: largest node index in the E_q / E_sigma maxima (default N-2, the last node carrying curvature)
    kmax: int | None = None
    #: tolerance on the initial shape's segment lengths
    initial_tol: float = 1e-8


DIAG_COLUMNS = kernels.DIAG_COLUMNS


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored levels of a forward run plus per-level diagnostics.

    ``Q``, ``V``, ``S`` are indexed by stored level (``levels`` gives the
    time index of each); ``S2`` is the second-half tension of the step that
    ended at each stored level. ``diagnostics`` has one row per time level
    ``0..M`` with columns :data:`DIAG_COLUMNS`.
    """

    grid: Grid
    levels: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    S: np.ndarray
    S2: np.ndarray
    diagnostics: np.ndarray
    U: np.ndarray = field(repr=False)
    options: SimOptions = SimOptions()

    def __len__(self):
        return len(self.levels)

    @property
    def times(self) -> np.ndarray:
        return self.levels * self.grid.dt

    @property
    def states(self):
        return [self.state(i) for i in range(len(self.levels))]

    def state(self, i: int) -> RodState:
        return RodState(self.Q[i], self.V[i], self.S[i], float(self.levels[i] * self.grid.dt))

    @property
    def final(self) -> RodState:
        return self.state(len(self.levels) - 1)

    def diag(self, name: str) -> np.ndarray:
        return self.diagnostics[:, DIAG_COLUMNS.index(name)]

    @property
    def complete(self) -> bool:
        return self.levels[-1] == self.grid.M if len(self.levels) else False

    def trajectory_csv(self) -> str:
        N = self.grid.N
        s = self.grid.s
        rows = []
        for i, n in enumerate(self.levels):
            t = n * self.grid.dt
            q, v, sig = self.Q[i], self.V[i], self.S[i]
            for k in range(N + 1):
                rows.append((int(n), t, k, s[k], q[k + 1, 0], q[k + 1, 1], v[k + 1, 0], v[k + 1, 1],
                             sig[k + 1] if k >= 1 else 0.0))
        return csv_text(("n", "t", "k", "s", "qx", "qy", "vx", "vy", "sigma"), rows)

    def diagnostics_csv(self) -> str:
        D = self.diagnostics
        rows = [(n, n * self.grid.dt, D[n, 0], D[n, 1], D[n, 2], D[n, 4], int(D[n, 5])) for n in range(len(D))]
        return csv_text(("n", "t", "E_q", "E_sigma", "J_v", "residual", "newton_iters"), rows)


def _control_array(u, grid: Grid) -> np.ndarray:
    N, M = grid.N, grid.M
    if callable(u):
        s, t = grid.s, grid.t
        U = np.array([[u(sk, tn) for sk in s] for tn in t], dtype=float)
    else:
        U = np.asarray(u, dtype=float)
        if U.ndim == 0:
            U = np.full((M + 1, N + 1), float(U))
        elif U.ndim == 1:
            U = np.broadcast_to(U, (M + 1, N + 1)).copy()
    if U.shape != (M + 1, N + 1):
        raise InputError(f"control has shape {U.shape}, expected {(M + 1, N + 1)}")
    if not np.all(np.isfinite(U)):
        raise InputError("control contains non-finite values")
    if np.max(np.abs(U)) > 1.0 + 1e-12:
        raise InputError(f"control leaves [-1, 1] (max |u| = {np.max(np.abs(U))!r})")
    return np.ascontiguousarray(U)


def _initial_fields(q0, v0, N):
    q = np.zeros((N + 3, 2))
    q0 = np.asarray(q0, dtype=float)
    if q0.shape == (N + 1, 2):
        q[1:-1] = q0
    elif q0.shape == (N + 3, 2):
        q[:] = q0
    else:
        raise InputError(f"initial shape has shape {q0.shape}, expected {(N + 3, 2)} or {(N + 1, 2)}")
    v = np.zeros((N + 3, 2))
    if v0 is not None:
        v0 = np.asarray(v0, dtype=float)
        if v0.shape == (N + 1, 2):
            v[1:-1] = v0
        elif v0.shape == (N + 3, 2):
            v[:] = v0
        else:
            raise InputError(f"initial velocity has shape {v0.shape}")
    return q, v


def simulate(q0, v0, u, p: ParamSet, grid: Grid, opts: SimOptions = SimOptions(), sigma0=None) -> Trajectory:
    """March from ``(q0, v0)`` over ``grid.M`` steps under the control ``u``.

    ``u`` is an array ``(M+1, N+1)``, a row broadcast over time, a scalar,
    or a callable ``u(s, t)``. Raises :class:`StepError` when the tension
    Newton fails; the error carries the partial trajectory.
    """
    if p.N != grid.N:
        raise InputError(f"parameters sampled on N={p.N}, grid has N={grid.N}")
    N = grid.N
    U = _control_array(u, grid)
    q, v = _initial_fields(q0, v0, N)
    if np.max(np.abs(q[1])) > 1e-12:
        raise InputError(f"initial shape is not anchored: q_0 = {q[1].tolist()}")
    q = apply_closures(q)
    res = constraint_residual(q)
    if res > opts.initial_tol:
        raise InputError(f"initial shape violates inextensibility (residual {res:.3e})")
    sig = np.zeros(N + 3) if sigma0 is None else np.array(sigma0, dtype=float)
    kmax = N - 2 if opts.kmax is None else int(opts.kmax)
    Q, V, S, S2, D, status, n_done = kernels.forward_run(
        q, v, sig, U, p.stacked(), np.ascontiguousarray(p.omega_bar), float(grid.dt),
        bool(opts.with_friction), bool(opts.project_velocity), float(opts.tol), int(opts.max_newton),
        int(opts.store_every), int(kmax), backend=opts.backend,
    )
    levels = list(range(0, grid.M + 1, opts.store_every))
    if levels[-1] != grid.M:
        levels.append(grid.M)
    levels = np.array(levels[: len(Q)], dtype=int)
    traj = Trajectory(grid, levels, Q, V, S, S2, D, U, opts)
    if status != kernels.OK:
        reason = "did not converge" if status == kernels.NO_CONVERGENCE else "hit a singular system"
        last = traj.final if len(levels) else None
        raise StepError(
            f"tension solve {reason} in the step from level {n_done} (t = {n_done * grid.dt:.6g})",
            level=n_done, residual=float("nan"), state=last, trajectory=traj, status=status,
        )
    return traj


def verlet_step(state: RodState, u_row, p: ParamSet, grid: Grid, tol: float = 1e-10,
                u_next=None, with_friction: bool = True, project_velocity: bool = True,
                max_newton: int = 50, backend: str | None = None) -> RodState:
    """Advance one step of size ``grid.dt``.

    ``u_row`` is the control at the current level and ``u_next`` the one at
    the new level (defaults to ``u_row``). The returned state carries the
    tension solved at the new level, i.e. the one its own next step uses.
    """
    N = p.N
    u0 = np.asarray(u_row, dtype=float)
    u1 = u0 if u_next is None else np.asarray(u_next, dtype=float)
    U = np.ascontiguousarray(np.stack([u0, u1]))
    Q, V, S, S2, D, status, n_done = kernels.forward_run(
        apply_closures(state.q), np.array(state.v, dtype=float), np.array(state.sigma, dtype=float),
        U, p.stacked(), np.ascontiguousarray(p.omega_bar), float(grid.dt), with_friction,
        project_velocity, float(tol), int(max_newton), 1, N - 2, backend=backend,
    )
    if status != kernels.OK:
        res = float(D[-1, 4]) if len(D) else float("nan")
        raise StepError(f"tension solve failed at t = {state.t:.6g}", level=n_done, residual=res,
                        state=state, status=status)
    return RodState(Q[1], V[1], S[1], state.t + grid.dt)
