"""Experiment configuration: TOML files with ``grid``, ``params``, ``control``, ``problem`` and ``output`` tables.

Example::

    [grid]
    N = 50
    dt = 1e-4
    T = 12

    [params]            # any of the seven fields; the rest keep their defaults
    beta = "4-s"

    [control]
    expr = "1"          # or: file = "u.npy"

    [problem]
    kind = "simulate"   # simulate | equilibrium | reach | static | dynamic

    [output]
    dir = "out"
    formats = ["csv", "svg", "json"]
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .expr import ExprSyntaxError, ParamExpr
from .params import FIELDS, PAPER_EXPRS

KINDS = ("simulate", "equilibrium", "reach", "static", "dynamic")
FORMATS = ("csv", "svg", "json")
TABLES = {
    "grid": {"N", "dt", "T"},
    "params": set(FIELDS),
    "control": {"expr", "file"},
    "problem": {"kind", "target", "targets", "tau", "rho_lambda", "tol", "alpha", "max_iter",
                "omega_bar0", "resolution", "friction", "frames"},
    "output": {"dir", "formats"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``line``/``column`` are 1-based when known."""

    def __init__(self, message, line=None, column=None, source=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        prefix = f"{source}: " if source else ""
        super().__init__(prefix + message + where)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    N: int = 50
    dt: float = 1e-4
    T: float = 1.0
    params: dict = field(default_factory=lambda: dict(PAPER_EXPRS))
    control: str | None = None
    control_file: str | None = None
    targets: tuple = ()
    tau: float = 1e-4
    rho_lambda: float = 1e2
    tol: float | None = None
    alpha: float = 1e-4
    max_iter: int | None = None
    omega_bar0: tuple = ()
    resolution: int = 256
    friction: bool = True
    frames: int = 12
    out: str = "out"
    formats: tuple = FORMATS
    name: str = "run"

    @property
    def target(self):
        return self.targets[0] if self.targets else None

    @property
    def M(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    def with_output(self, out=None, formats=None) -> "ExperimentConfig":
        kw = {}
        if out is not None:
            kw["out"] = str(out)
        if formats:
            kw["formats"] = tuple(dict.fromkeys(formats))
        return replace(self, **kw)

    def summary(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["targets"] = [list(t) for t in self.targets]
        d["omega_bar0"] = list(self.omega_bar0)
        d["formats"] = list(self.formats)
        return d


def _key_line(text, table, key):
    """Line and column of ``key`` inside ``[table]`` (best effort)."""
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        m = re.match(r"(\s*)([A-Za-z_][\w-]*)\s*=", line)
        if m and m.group(2) == key and current == table:
            val = line.find("=") + 1
            while val < len(line) and line[val] in " \t":
                val += 1
            return i, val + 1
    return None, None


def _fail(msg, text, table, key, source, col_offset=0):
    line, col = _key_line(text, table, key)
    if col is not None and col_offset:
        col += col_offset
    raise ConfigError(msg, line, col, source)


def _num(v, what, text, table, key, source, positive=True, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{what} must be a number, got {v!r}", text, table, key, source)
    if integer and int(v) != v:
        _fail(f"{what} must be an integer, got {v!r}", text, table, key, source)
    if not math.isfinite(v) or (positive and v <= 0):
        _fail(f"{what} must be positive and finite, got {v!r}", text, table, key, source)
    return int(v) if integer else float(v)


def _point(v, what, text, table, key, source):
    ok = isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
    if not ok:
        _fail(f"{what} must be a pair of numbers, got {v!r}", text, table, key, source)
    return (float(v[0]), float(v[1]))


def parse_config(text: str, source: str | None = None, base_dir: Path | None = None,
                 name: str = "run") -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"at line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigError(f"syntax error: {str(exc).split(' (at line')[0]}", line, col, source) from None

    for table, body in data.items():
        if table not in TABLES:
            line = next((i for i, ln in enumerate(text.splitlines(), 1)
                         if re.match(rf"\s*\[\s*{re.escape(table)}\s*\]", ln)), None)
            raise ConfigError(f"unknown section [{table}]", line, 1 if line else None, source)
        if not isinstance(body, dict):
            _fail(f"[{table}] must be a table", text, None, table, source)
        for key in body:
            if key not in TABLES[table]:
                _fail(f"unknown key {key!r} in [{table}]", text, table, key, source)

    prob = data.get("problem", {})
    kind = prob.get("kind")
    if kind not in KINDS:
        if kind is None:
            raise ConfigError(f"[problem] kind is required (one of {', '.join(KINDS)})", None, None, source)
        _fail(f"unknown problem kind {kind!r} (expected one of {', '.join(KINDS)})", text, "problem", "kind", source)
    kw = {"kind": kind, "name": name}

    grid = data.get("grid", {})
    if "N" in grid:
        kw["N"] = _num(grid["N"], "grid.N", text, "grid", "N", source, integer=True)
        if kw["N"] < 4:
            _fail("grid.N must be at least 4", text, "grid", "N", source)
    for key in ("dt", "T"):
        if key in grid:
            kw[key] = _num(grid[key], f"grid.{key}", text, "grid", key, source)

    params = dict(PAPER_EXPRS)
    for key, val in data.get("params", {}).items():
        if not isinstance(val, (str, int, float)) or isinstance(val, bool):
            _fail(f"params.{key} must be an expression string", text, "params", key, source)
        try:
            ParamExpr(str(val))
        except ExprSyntaxError as exc:
            # +1 for the opening quote of a string value
            _fail(f"params.{key}: {exc}", text, "params", key, source, col_offset=exc.column - 1 + isinstance(val, str))
        params[key] = str(val)
    kw["params"] = params

    ctl = data.get("control", {})
    if "expr" in ctl and "file" in ctl:
        _fail("control takes either expr or file, not both", text, "control", "file", source)
    if "expr" in ctl:
        val = ctl["expr"]
        try:
            ParamExpr(str(val))
        except ExprSyntaxError as exc:
            _fail(f"control.expr: {exc}", text, "control", "expr", source, col_offset=exc.column - 1 + isinstance(val, str))
        kw["control"] = str(val)
    if "file" in ctl:
        path = Path(ctl["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            _fail(f"control file {str(path)!r} does not exist", text, "control", "file", source)
        kw["control_file"] = str(path)

    if "target" in prob and "targets" in prob:
        _fail("give either target or targets", text, "problem", "targets", source)
    if "target" in prob:
        kw["targets"] = (_point(prob["target"], "problem.target", text, "problem", "target", source),)
    if "targets" in prob:
        if not isinstance(prob["targets"], list) or not prob["targets"]:
            _fail("problem.targets must be a non-empty list of pairs", text, "problem", "targets", source)
        kw["targets"] = tuple(_point(t, "problem.targets entry", text, "problem", "targets", source)
                              for t in prob["targets"])
    for key in ("tau", "rho_lambda", "tol", "alpha"):
        if key in prob:
            kw[key] = _num(prob[key], f"problem.{key}", text, "problem", key, source)
    for key in ("max_iter", "resolution", "frames"):
        if key in prob:
            kw[key] = _num(prob[key], f"problem.{key}", text, "problem", key, source, integer=True)
    if "friction" in prob:
        if not isinstance(prob["friction"], bool):
            _fail("problem.friction must be true or false", text, "problem", "friction", source)
        kw["friction"] = prob["friction"]
    if "omega_bar0" in prob:
        vals = prob["omega_bar0"]
        vals = vals if isinstance(vals, list) else [vals]
        out = []
        for v in vals:
            if isinstance(v, str):
                try:
                    out.append(ParamExpr(v)(0.0))
                except ExprSyntaxError as exc:
                    _fail(f"problem.omega_bar0: {exc}", text, "problem", "omega_bar0", source)
            else:
                out.append(_num(v, "problem.omega_bar0", text, "problem", "omega_bar0", source, positive=False))
        if any(v < 0 for v in out):
            _fail("problem.omega_bar0 values must be non-negative", text, "problem", "omega_bar0", source)
        kw["omega_bar0"] = tuple(out)

    if kind in ("static", "dynamic") and not kw.get("targets"):
        raise ConfigError(f"a {kind} problem needs problem.target", None, None, source)
    if kind == "reach" and not kw.get("omega_bar0"):
        raise ConfigError("a reach problem needs problem.omega_bar0", None, None, source)

    outp = data.get("output", {})
    if "dir" in outp:
        if not isinstance(outp["dir"], str):
            _fail("output.dir must be a string", text, "output", "dir", source)
        kw["out"] = outp["dir"]
    if "formats" in outp:
        fm = outp["formats"]
        if not isinstance(fm, list) or any(f not in FORMATS for f in fm):
            _fail(f"output.formats must be a list drawn from {', '.join(FORMATS)}", text, "output", "formats", source)
        kw["formats"] = tuple(dict.fromkeys(fm))
    return ExperimentConfig(**kw)


def load_config(path_or_preset) -> ExperimentConfig:
    """Load a TOML file, or a built-in preset by name."""
    from .presets import PRESETS

    key = str(path_or_preset)
    if key in PRESETS:
        return parse_config(PRESETS[key], source=f"preset {key}", name=key)
    path = Path(key)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"no such config file or preset: {key!r}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {key!r}: {exc}") from None
    return parse_config(text, source=str(path), base_dir=path.parent, name=path.stem)


def control_values(cfg: ExperimentConfig, N: int, M: int | None = None):
    """Control row (N+1,) or field (M+1, N+1) described by the config; None when unset."""
    s = np.arange(N + 1) / N
    if cfg.control is not None:
        return np.array(ParamExpr(cfg.control).sample(s))
    if cfg.control_file is not None:
        path = Path(cfg.control_file)
        arr = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=1)
        arr = np.asarray(arr, dtype=float)
        ok = arr.shape == (N + 1,) or (M is not None and arr.shape == (M + 1, N + 1))
        if not ok:
            raise ConfigError(f"control file {str(path)!r} has shape {arr.shape}, expected ({N + 1},)"
                              + (f" or ({M + 1}, {N + 1})" if M is not None else ""))
        return arr
    return None
