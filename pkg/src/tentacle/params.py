"""Sampled material parameters shared by every solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .expr import ParamExpr
from .fd import Grid

log = logging.getLogger(__name__)

FIELDS = ("rho", "eps", "nu", "omega", "mu", "beta", "gamma")

#: settings used for the forward simulations of the full-contraction experiment
PAPER_EXPRS = {
    "rho": "exp(-s)",
    "eps": "1e-3*(1-0.9*s)",
    "nu": "1e-3*(1-0.09*s)",
    "omega": "2*pi*(1+s^2)",
    "mu": "(1-s)*exp(-0.1*s^2/(1-s^2))",
    "beta": "4-s",
    "gamma": "1e-6*(4-s)",
}

#: friction used for the dynamic optimal control runs
DYNAMIC_FRICTION = {"beta": "2-s", "gamma": "1e-6*(2-s)"}

CONSTANT_TOL = 1e-12


class ParamError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Material fields sampled at ``s_k``, ``k = 0..N`` (arrays of length ``N+1``)."""

    rho: np.ndarray
    eps: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    omega_bar: np.ndarray = field(init=False)
    eps0: float = field(init=False)
    constant_omega_bar: bool = field(init=False)
    exprs: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in FIELDS:
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        with np.errstate(divide="ignore", invalid="ignore"):
            wbar = self.mu * self.omega / (self.mu + self.eps)
        wbar.setflags(write=False)
        object.__setattr__(self, "omega_bar", wbar)
        object.__setattr__(self, "eps0", float(self.eps.min()))
        object.__setattr__(
            self, "constant_omega_bar", bool(np.max(np.abs(wbar - wbar[0])) <= CONSTANT_TOL)
        )

    @property
    def N(self) -> int:
        return len(self.rho) - 1

    def stacked(self) -> np.ndarray:
        """``(7, N+1)`` array in :data:`FIELDS` order, as the kernels expect."""
        return np.ascontiguousarray(np.stack([getattr(self, f) for f in FIELDS]))

    def with_fields(self, **arrays) -> "ParamSet":
        data = {f: getattr(self, f) for f in FIELDS}
        data.update(arrays)
        return validate(ParamSet(**data, exprs=dict(self.exprs)), check_tip=False)

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in FIELDS)


def _fail(name, k, value, rule):
    raise ParamError(f"{name} violates {rule} at k={k} (value {value!r})")


def validate(p: ParamSet, check_tip: bool = True) -> ParamSet:
    ds = 1.0 / p.N
    for name, arr in zip(FIELDS, p.stacked()):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            _fail(name, int(bad[0]), arr[bad[0]], "finiteness")
    checks = [
        ("rho", p.rho > 0, "ρ > 0"),
        ("eps", p.eps > 0, "ε ≥ ε₀"),
        ("nu", p.nu >= 0, "ν ≥ 0"),
        ("mu", p.mu >= 0, "μ ≥ 0"),
        ("beta", p.beta >= 0, "β ≥ 0"),
        ("gamma", p.gamma >= 0, "γ ≥ 0"),
        ("omega", p.omega > 0, "ω > 0"),
    ]
    for name, ok, rule in checks:
        bad = np.flatnonzero(~ok)
        if bad.size:
            _fail(name, int(bad[0]), getattr(p, name)[bad[0]], rule)
    if not check_tip:
        return p

    # discrete stand-in for mu(1) = mu_s(1) = 0: warn up to 10x over, fail beyond
    allowed = 10 * ds
    slope = abs(p.mu[-1] - p.mu[-2]) / ds
    excess = max(abs(p.mu[-1]), slope) / allowed
    if p.mu[-1] != 0 or excess > 1:
        msg = (
            f"mu does not vanish smoothly at the tip: mu_N={p.mu[-1]:.3g}, "
            f"|D_- mu_N|={slope:.3g} (allowed {allowed:.3g})"
        )
        if excess > 10:
            raise ParamError(msg)
        log.warning(msg)
    return p


def build_params(exprs: dict, grid: Grid | int, check_tip: bool = True) -> ParamSet:
    """Sample the seven material formulas on the grid nodes and validate them.

    ``exprs`` maps each name in :data:`FIELDS` to an expression (text or
    :class:`ParamExpr`). ``check_tip=False`` skips the smooth-vanishing test
    on ``mu`` at ``s = 1``; constant-coefficient test problems need that.
    """
    N = grid.N if isinstance(grid, Grid) else int(grid)
    missing = [f for f in FIELDS if f not in exprs]
    if missing:
        raise ParamError(f"missing parameter expressions: {', '.join(missing)}")
    s = np.arange(N + 1) / N
    parsed = {f: exprs[f] if isinstance(exprs[f], ParamExpr) else ParamExpr(exprs[f]) for f in FIELDS}
    arrays = {f: np.array(parsed[f].sample(s)) for f in FIELDS}
    return validate(ParamSet(**arrays, exprs={f: parsed[f].source for f in FIELDS}), check_tip)


def paper_params(N: int, dynamic_friction: bool = False, **overrides) -> ParamSet:
    exprs = dict(PAPER_EXPRS)
    if dynamic_friction:
        exprs.update(DYNAMIC_FRICTION)
    exprs.update(overrides)
    return build_params(exprs, N)
