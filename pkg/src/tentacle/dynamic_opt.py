"""Adjoint-based projected gradient descent for time-dependent controls.

Each iteration runs the forward model under the current control, marches
the linear adjoint system backward over the stored trajectory, forms the
pointwise gradient ``u + omega * Hbar[q, qbar]`` and takes a fixed step
followed by clipping to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import SimOptions, Trajectory, simulate, straight_rod
from .fd import Grid
from .kernels import _fallback as _ref
from .output import csv_text, json_text
from .params import ParamSet

MAX_ITER = 5000
ADJOINT_LIMIT = 1e100   # beyond this the backward march has lost all accuracy


class DynamicInputError(ValueError):
    pass


class AdjointSolveError(RuntimeError):
    """The adjoint tension system was singular at time level ``level``."""

    def __init__(self, message, level, iteration=None):
        super().__init__(message)
        self.level = level
        self.iteration = iteration


class DynamicLimitError(RuntimeError):
    """Iteration cap reached; carries the last control and the history."""

    def __init__(self, message, control, history):
        super().__init__(message)
        self.control = control
        self.history = history


@dataclass(frozen=True, eq=False)
class ControlField:
    """Control values ``u[n, k]`` for n = 0..M, k = 0..N, all in [-1, 1]."""

    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2:
            raise DynamicInputError(f"control field must be 2-D (M+1, N+1), got shape {u.shape}")
        if not np.all(np.isfinite(u)):
            raise DynamicInputError("control field contains non-finite values")
        if np.max(np.abs(u)) > 1.0:
            raise DynamicInputError(f"control leaves [-1, 1] (max |u| = {np.max(np.abs(u))!r})")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def constant_in_time(cls, row, grid: Grid) -> "ControlField":
        row = np.asarray(getattr(row, "u", row), dtype=float)
        return cls(np.broadcast_to(row, (grid.M + 1, grid.N + 1)))

    @property
    def shape(self):
        return self.u.shape

    def csv(self, grid: Grid) -> str:
        rows = [(n, n * grid.dt, k, k * grid.ds, self.u[n, k])
                for n in range(self.u.shape[0]) for k in range(self.u.shape[1])]
        return csv_text(("n", "t", "k", "s", "u"), rows)


def project(u) -> np.ndarray:
    return np.clip(u, -1.0, 1.0)


@dataclass(frozen=True)
class DynamicProblem:
    target: tuple
    tau: float = 1e-4
    T: float = 4.0
    alpha: float = 1e-4
    tol: float = 1e-6

    def __post_init__(self):
        t = tuple(float(x) for x in self.target)
        if len(t) != 2 or not all(np.isfinite(t)):
            raise DynamicInputError(f"target must be a finite 2-vector, got {self.target!r}")
        object.__setattr__(self, "target", t)
        for name in ("tau", "T", "alpha", "tol"):
            v = float(getattr(self, name))
            if not v > 0:
                raise DynamicInputError(f"{name} must be positive, got {v!r}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True, eq=False)
class AdjointState:
    """Adjoint positions, time derivative and tension at time ``t``.

    ``sigbar`` holds, on k = 1..N-1, the tension solved on this level's
    orthogonality rows; slot N carries the tip value tied to the forward
    state at the same level.
    """

    qbar: np.ndarray
    vbar: np.ndarray
    sigbar: np.ndarray
    t: float


@dataclass(frozen=True, eq=False)
class DynamicCost:
    J: float
    J_u: np.ndarray
    J_qstar: np.ndarray
    J_v: np.ndarray

    @property
    def totals(self) -> dict:
        return {"J_u_total": float(np.sum(self.J_u[:-1])), "J_qstar_total": float(np.sum(self.J_qstar[:-1])),
                "J_v_final": float(self.J_v[-1])}

    def csv(self, grid: Grid) -> str:
        rows = [(n, n * grid.dt, self.J_u[n], self.J_qstar[n], self.J_v[n]) for n in range(len(self.J_u))]
        return csv_text(("n", "t", "J_u", "J_qstar", "J_v"), rows)


def _U(u) -> np.ndarray:
    return u.u if isinstance(u, ControlField) else np.asarray(u, dtype=float)


def _check_full(traj: Trajectory, grid: Grid):
    if traj.grid != grid or len(traj.levels) != grid.M + 1:
        raise DynamicInputError("trajectory must store every level of the given grid")


def dynamic_functional(traj: Trajectory, u, prob: DynamicProblem, p: ParamSet, grid: Grid) -> DynamicCost:
    """Cost with left-endpoint time quadrature plus the terminal kinetic term.

    ``J_v`` sums the free nodes k = 1..N-1 (the anchor has zero velocity
    and the tip velocity is a closure extrapolation).
    """
    U = _U(u)
    N, M = grid.N, grid.M
    if U.shape != (M + 1, N + 1) or traj.Q.shape[1] != N + 3:
        raise DynamicInputError(f"control shape {U.shape} does not match grid ({M + 1}, {N + 1})")
    _check_full(traj, grid)
    ds = grid.ds
    J_u = 0.5 * ds * np.sum(U * U, axis=1)
    miss = traj.Q[:, N + 1] - np.asarray(prob.target)
    J_q = 0.5 / prob.tau * np.sum(miss * miss, axis=1)
    v = traj.V[:, 2:N + 1]
    J_v = 0.5 * ds * np.sum(p.rho[1:N] * np.sum(v * v, axis=2), axis=1)
    J = grid.dt * float(np.sum(J_u[:M] + J_q[:M])) + float(J_v[M])
    return DynamicCost(J, J_u, J_q, J_v)


def _adjoint_states(QB, WB, SB, grid: Grid, t0_level: int = 0):
    return [AdjointState(QB[i], -WB[i], SB[i], (t0_level + i) * grid.dt) for i in range(len(QB))]


def solve_adjoint(traj: Trajectory, u, prob: DynamicProblem, p: ParamSet, grid: Grid,
                  target_forcing: bool = True, final_scale: float = 1.0, backend=None):
    """All M+1 adjoint states, from the final conditions back to t = 0.

    ``target_forcing=False`` drops the tip terms (the limit tau -> inf);
    ``final_scale`` multiplies the final data.
    """
    _check_full(traj, grid)
    U = _U(u)
    P = p.stacked()
    opts = traj.options
    inv_tau = 1.0 / prob.tau if target_forcing else 0.0
    qb0 = None
    if final_scale != 1.0:
        qb0 = -final_scale * np.array(traj.V[-1])
        _, jump = _ref._adjoint_tip(traj.Q[-1], P, np.asarray(prob.target), inv_tau, grid.ds)
        _ref.close_adjoint(qb0, jump, grid.ds)
    QB, WB, SB, status, n_fail = kernels.adjoint_run(
        traj.Q, traj.V, traj.S, traj.S2, U, P, np.asarray(prob.target), inv_tau, grid.dt,
        bool(opts.with_friction), bool(opts.project_velocity), qb0, None, backend=backend,
    )
    if status != kernels.OK:
        raise AdjointSolveError(f"adjoint tension system singular at level {n_fail}", level=n_fail)
    _check_growth(QB)
    return _adjoint_states(QB, WB, SB, grid)


def _check_growth(QB):
    mag = np.max(np.abs(QB), axis=(1, 2))
    bad = ~(mag <= ADJOINT_LIMIT)
    if bad.any():
        level = int(np.nonzero(bad)[0].max())
        raise AdjointSolveError(f"adjoint diverged (|qbar| = {mag[level]:.3g} at level {level})", level=level)


def adjoint_step(astate: AdjointState, traj: Trajectory, n: int, u, prob: DynamicProblem, p: ParamSet,
                 grid: Grid, target_forcing: bool = True, backend=None) -> AdjointState:
    """One backward step from level ``n`` (where ``astate`` lives) to level ``n - 1``.

    The returned state's tension comes from the orthogonality solve on
    level n-1 against the stored forward tension there.
    """
    if not 1 <= n <= grid.M:
        raise DynamicInputError(f"level must be in 1..{grid.M}, got {n}")
    _check_full(traj, grid)
    U = _U(u)
    P = p.stacked()
    sl = slice(n - 1, n + 1)
    inv_tau = 1.0 / prob.tau if target_forcing else 0.0
    QB, WB, SB, status, n_fail = kernels.adjoint_run(
        traj.Q[sl], traj.V[sl], traj.S[sl], traj.S2[sl], U[sl], P, np.asarray(prob.target), inv_tau,
        grid.dt, bool(traj.options.with_friction), bool(traj.options.project_velocity),
        np.asarray(astate.qbar, dtype=float), -np.asarray(astate.vbar, dtype=float), backend=backend,
    )
    if status != kernels.OK:
        raise AdjointSolveError(f"adjoint tension system singular at level {n - 1 + n_fail}", level=n - 1 + n_fail)
    return AdjointState(QB[0], -WB[0], SB[0], (n - 1) * grid.dt)


def _stencils_all(X, ds):
    dm = (X[:, 1:-1] - X[:, :-2]) / ds
    d2 = (X[:, 2:] - 2.0 * X[:, 1:-1] + X[:, :-2]) / ds**2
    return dm, d2


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def control_gradient(traj: Trajectory, adj, u, p: ParamSet, grid: Grid) -> np.ndarray:
    """Pointwise gradient ``u + omega * Hbar`` on every (n, k).

    ``Hbar`` is zeroed on the closure nodes k = N-1, N, as the moment
    field is in the forward and adjoint operators.
    """
    U = _U(u)
    QB = np.stack([a.qbar for a in adj]) if not isinstance(adj, np.ndarray) else adj
    if QB.shape != traj.Q.shape or U.shape != (QB.shape[0], grid.N + 1):
        raise DynamicInputError("trajectory, adjoint and control shapes differ")
    dm, d2 = _stencils_all(traj.Q, grid.ds)
    dmb, d2b = _stencils_all(QB, grid.ds)
    Hb = -p.mu * (_cross(dmb, d2) + _cross(dm, d2b))
    Hb[:, -2:] = 0.0
    return U + p.omega * Hb


@dataclass
class DynamicResult:
    control: ControlField
    history: list
    cost: DynamicCost
    trajectory: Trajectory = field(repr=False)
    iterations: int = 0

    def __iter__(self):
        yield self.control
        yield self.history

    def history_json(self) -> str:
        return json_text(self.history)


def static_initial_control(prob: DynamicProblem, p: ParamSet, grid: Grid) -> ControlField:
    """Time-constant extension of the static optimum for the same target and tau."""
    from .static_opt import StaticProblem, static_optimize

    sol = static_optimize(StaticProblem(prob.target, tau=prob.tau), p)
    return ControlField.constant_in_time(sol.control.u, grid)


def evaluate(u, prob: DynamicProblem, p: ParamSet, grid: Grid, q0=None, v0=None,
             opts: SimOptions = SimOptions()):
    """Forward run plus cost for a control field."""
    q0 = straight_rod(grid.N) if q0 is None else q0
    traj = simulate(q0, v0, _U(u), p, grid, opts)
    return traj, dynamic_functional(traj, u, prob, p, grid)


def dynamic_optimize(u0, prob: DynamicProblem, p: ParamSet, grid: Grid, q0=None, v0=None,
                     opts: SimOptions = SimOptions(), max_iter: int = MAX_ITER, backtrack: bool = False,
                     callback=None) -> DynamicResult:
    """Projected descent with a fixed step until the max-norm control change drops below tol.

    ``u0=None`` starts from the static optimum held constant in time. Each
    history entry records the cost of the control the iteration started
    from. With ``backtrack`` the step is halved until the cost does not
    increase (off by default).
    """
    if opts.store_every != 1:
        raise DynamicInputError("the adjoint needs every forward level (store_every = 1)")
    if abs(grid.T - prob.T) > 1e-9 * prob.T:
        raise DynamicInputError(f"grid horizon {grid.T!r} differs from problem horizon {prob.T!r}")
    u = static_initial_control(prob, p, grid) if u0 is None else u0
    U = np.array(_U(u), dtype=float)
    ControlField(U)
    history = []
    traj, cost = evaluate(U, prob, p, grid, q0, v0, opts)
    for it in range(1, max_iter + 1):
        try:
            adj = solve_adjoint(traj, U, prob, p, grid)
        except AdjointSolveError as exc:
            exc.iteration = it
            raise
        QB = np.stack([a.qbar for a in adj])
        g = control_gradient(traj, QB, U, p, grid)
        step = prob.alpha
        U_new = project(U - step * g)
        try:
            traj_new, cost_new = evaluate(U_new, prob, p, grid, q0, v0, opts)
        except Exception as exc:
            exc.iteration = it
            raise
        while backtrack and cost_new.J > cost.J and step > prob.alpha * 1e-6:
            step *= 0.5
            U_new = project(U - step * g)
            traj_new, cost_new = evaluate(U_new, prob, p, grid, q0, v0, opts)
        change = float(np.max(np.abs(U_new - U)))
        entry = {"iter": it - 1, "J": cost.J, **cost.totals, "grad_norm": float(np.max(np.abs(g))),
                 "u_change": change}
        history.append(entry)
        if callback is not None:
            callback(entry)
        U, traj, cost = U_new, traj_new, cost_new
        if change < prob.tol:
            history.append({"iter": it, "J": cost.J, **cost.totals, "grad_norm": float("nan"), "u_change": 0.0})
            return DynamicResult(ControlField(U), history, cost, traj, it)
    raise DynamicLimitError(f"no convergence within {max_iter} iterations", ControlField(U), history)


def variational_gap(g, u) -> float:
    """Most negative pointwise value of ``g (v - u)`` over v in {-1, +1, u}."""
    g = np.asarray(g)
    u = np.asarray(u)
    return float(min(0.0, np.min(g * (-1.0 - u)), np.min(g * (1.0 - u))))
