"""Uniform space-time grid and the finite-difference stencils.

Node fields are numpy arrays whose first axis has length ``N + 3`` and
holds the slots ``k = -1, 0, ..., N + 1``; slot ``k`` lives at array
index ``k + 1``. Scalar fields have shape ``(N + 3,)``, planar vector
fields ``(N + 3, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: array offset of physical slot k = 0
OFFSET = 1


@dataclass(frozen=True)
class Grid:
    """``N`` space cells on ``[0, 1]`` and ``M`` time steps of size ``dt``."""

    N: int
    M: int
    dt: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 4:
            raise ValueError(f"N must be an integer >= 4, got {self.N!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be an integer >= 1, got {self.M!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")

    @classmethod
    def from_horizon(cls, N: int, T: float, dt: float) -> "Grid":
        """Grid covering ``[0, T]`` with steps as close to ``dt`` as divides ``T``."""
        M = max(1, int(round(T / dt)))
        return cls(N=N, M=M, dt=T / M)

    @property
    def ds(self) -> float:
        return 1.0 / self.N

    @property
    def T(self) -> float:
        return self.M * self.dt

    @property
    def s(self) -> np.ndarray:
        """Arclength of the physical nodes ``k = 0..N``."""
        return np.arange(self.N + 1) * self.ds

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    def node_field(self, dim: int | None = None) -> np.ndarray:
        shape = (self.N + 3,) if dim is None else (self.N + 3, dim)
        return np.zeros(shape)


def _slot(f, k):
    i = k + OFFSET
    if i < 0 or i >= len(f):
        raise IndexError(f"slot k={k} outside node field of length {len(f)}")
    return f[i]


def d_minus(f, k: int, ds: float):
    """Backward difference ``(f_k - f_{k-1}) / ds``."""
    return (_slot(f, k) - _slot(f, k - 1)) / ds


def d_plus(f, k: int, ds: float):
    """Forward difference ``(f_{k+1} - f_k) / ds``."""
    return (_slot(f, k + 1) - _slot(f, k)) / ds


def d2_central(f, k: int, ds: float):
    """Central second difference ``(f_{k+1} - 2 f_k + f_{k-1}) / ds**2``."""
    return (_slot(f, k + 1) - 2.0 * _slot(f, k) + _slot(f, k - 1)) / ds**2


# Whole-field versions. Each returns the stencil on every slot where it is
# defined and leaves the rest at zero, so the result is again a node field.

def d_minus_field(f, ds):
    out = np.zeros_like(f, dtype=float)
    out[1:] = (f[1:] - f[:-1]) / ds
    return out


def d_plus_field(f, ds):
    out = np.zeros_like(f, dtype=float)
    out[:-1] = (f[1:] - f[:-1]) / ds
    return out


def d2_central_field(f, ds):
    out = np.zeros_like(f, dtype=float)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / ds**2
    return out


def perp(a):
    """Rotate planar vectors: ``(x, y) -> (y, -x)``."""
    a = np.asarray(a, dtype=float)
    return np.stack([a[..., 1], -a[..., 0]], axis=-1)


def cross(a, b):
    """Planar cross product ``a . perp(b) = a_x b_y - a_y b_x``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
