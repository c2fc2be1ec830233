"""Simulation and optimal control of an inextensible, curvature-controlled planar rod."""

from .fd import Grid
from .kernels import BACKEND
from .params import ParamSet, build_params, paper_params

__version__ = "0.1.0"

__all__ = ["BACKEND", "Grid", "ParamSet", "__version__", "build_params", "paper_params"]
