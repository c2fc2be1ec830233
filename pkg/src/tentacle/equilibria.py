"""Closed-form static equilibria and control synthesis from a shape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fd import Grid
from .output import csv_text
from .params import ParamSet


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StationaryControl:
    """Control values ``u_k`` on k = 0..N; ``clamped`` marks nodes cut back to +-1."""

    u: np.ndarray
    clamped: np.ndarray | None = None

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if np.any(np.abs(u) > 1.0 + 1e-12):
            raise ValueError(f"stationary control leaves [-1, 1] (max |u| = {np.max(np.abs(u))!r})")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        if self.clamped is None:
            object.__setattr__(self, "clamped", np.zeros(len(u), dtype=bool))

    @property
    def any_clamped(self) -> bool:
        return bool(np.any(self.clamped))


def _as_u(u, N):
    arr = u.u if isinstance(u, StationaryControl) else np.asarray(u, dtype=float)
    if arr.ndim == 0:
        arr = np.full(N + 1, float(arr))
    if arr.shape != (N + 1,):
        raise ValueError(f"control has shape {arr.shape}, expected {(N + 1,)}")
    return arr


def turning_angles(rate, ds) -> np.ndarray:
    """``theta_k = ds * sum_{j<k} rate_j`` for k = 0..len(rate) (left-endpoint rule)."""
    return np.concatenate([[0.0], np.cumsum(rate) * ds])


def integrate_shape(rate, ds) -> np.ndarray:
    """Positions ``q_0..q_N`` of a unit-speed curve with curvature samples ``rate_k``.

    Segment ``k`` (from ``q_{k-1}`` to ``q_k``) points along angle
    ``theta_k``, so segment 0 is the fixed tangent ``-e2`` and the turning
    at node k acts between segments k and k+1, where the stencils put it.
    Every segment has exactly length ``ds``.
    """
    theta = turning_angles(rate[:-1], ds)[1:]                          # theta_1..theta_N
    tang = np.stack([np.sin(theta), -np.cos(theta)], axis=1)
    q = np.zeros((len(rate), 2))
    q[1:] = np.cumsum(tang, axis=0) * ds
    return q


def equilibrium_shape(u, p: ParamSet, grid: Grid | None = None):
    """Equilibrium positions (node field) and tension for a stationary control.

    The curvature ``omega_bar * u`` is integrated twice with rectangle sums
    (see :func:`integrate_shape`). The tip ghost is the linear continuation
    of the last segment.
    """
    N = p.N
    ds = 1.0 / N
    u = _as_u(u, N)
    rate = p.omega_bar * u
    q = np.zeros((N + 3, 2))
    q[0] = (0.0, ds)
    q[1:N + 2] = integrate_shape(rate, ds)
    q[N + 2] = 2.0 * q[N + 1] - q[N]
    sigma = np.zeros(N + 3)
    sigma[1:N + 2] = p.eps * rate**2
    return q, sigma


def curvature(q) -> np.ndarray:
    """Signed curvature ``D_- q_k x D2 q_k`` on k = 0..N."""
    N = len(q) - 3
    dm = (q[1:-1] - q[:-2]) * N
    d2 = (q[2:] - 2.0 * q[1:-1] + q[:-2]) * N * N
    return dm[:, 0] * d2[:, 1] - dm[:, 1] * d2[:, 0]


def synthesize_control(q, p: ParamSet, grid: Grid | None = None, flat_tol: float = 1e-8) -> StationaryControl:
    """Control whose equilibrium curvature matches the shape, clamped to [-1, 1]."""
    q = np.asarray(q, dtype=float)
    N = p.N
    d2 = (q[2:] - 2.0 * q[1:-1] + q[:-2]) * N * N
    kappa = curvature(q)
    wbar = p.omega_bar
    u = np.zeros(N + 1)
    zero = wbar == 0.0
    flat = np.sqrt(np.sum(d2 * d2, axis=1)) <= flat_tol
    bad = np.flatnonzero(zero & ~flat)
    if bad.size:
        k = int(bad[0])
        raise SynthesisError(f"curvature {kappa[k]!r} at k={k} cannot be held: omega_bar_k = 0")
    raw = np.divide(kappa, wbar, out=np.zeros(N + 1), where=~zero)
    u = np.clip(raw, -1.0, 1.0)
    return StationaryControl(u, clamped=np.abs(raw) > 1.0)


def equilibrium_csv(q, sigma, u, p: ParamSet) -> str:
    N = p.N
    u = _as_u(u, N)
    rows = [(k / N, q[k + 1, 0], q[k + 1, 1], sigma[k + 1], u[k]) for k in range(N + 1)]
    return csv_text(("s", "qx", "qy", "sigma", "u"), rows)
