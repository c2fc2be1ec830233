"""Command-line runner: ``tentacle <subcommand> --config FILE`` or ``tentacle preset NAME``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import FORMATS, ConfigError, ExperimentConfig, control_values, load_config
from .dynamics import SimOptions, StepError, simulate, straight_rod
from .fd import Grid
from .output import Writer, csv_text, gray, json_text, svg_polylines
from .params import ParamError, build_params
from .presets import PRESETS

log = logging.getLogger("tentacle")

EXIT_CONFIG, EXIT_FORWARD, EXIT_OPTIMIZE, EXIT_IO = 1, 2, 3, 4
HELP = {
    "simulate": "forward simulation of the rod",
    "equilibrium": "equilibrium shape for a time-constant control",
    "reach": "reachable tip sets for curvature bounds",
    "static-opt": "static optimal control for target tips",
    "dynamic-opt": "optimal control of the dynamics",
}

SUBCOMMANDS = {
    "simulate": "simulate",
    "equilibrium": "equilibrium",
    "reach": "reach",
    "static-opt": "static",
    "dynamic-opt": "dynamic",
}


class Run:
    """Emits the artifacts of one experiment through a single writer."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.writer = Writer(cfg.out)
        self.summary = {}

    def want(self, fmt):
        return fmt in self.cfg.formats

    def emit(self, name, fmt, text_fn):
        if self.want(fmt):
            self.writer.write(name, text_fn())

    def params(self, N):
        return build_params(self.cfg.params, N)

    def grid(self):
        c = self.cfg
        return Grid(c.N, c.M, c.T / c.M)

    # ------------------------------------------------------------ kinds
    def simulate(self):
        c = self.cfg
        grid = self.grid()
        p = self.params(c.N)
        u = control_values(c, c.N, grid.M)
        u = np.ones(c.N + 1) if u is None else u
        traj = simulate(straight_rod(c.N), None, u, p, grid, SimOptions(with_friction=c.friction))
        self.emit("trajectory.csv", "csv", traj.trajectory_csv)
        self.emit("diagnostics.csv", "csv", traj.diagnostics_csv)
        self.emit("frames.svg", "svg", lambda: _frames_svg([traj.Q[i] for i in _frame_ids(len(traj), c.frames)]))
        final = traj.final
        self.summary = {"M": grid.M, "dt": grid.dt, "tip": final.tip(), "E_q_final": float(traj.diag("E_q")[-1]),
                        "E_sigma_final": float(traj.diag("E_sigma")[-1])}

    def equilibrium(self):
        from .equilibria import equilibrium_csv, equilibrium_shape

        c = self.cfg
        p = self.params(c.N)
        u = control_values(c, c.N)
        u = np.ones(c.N + 1) if u is None else u
        q, sigma = equilibrium_shape(u, p)
        self.emit("equilibrium.csv", "csv", lambda: equilibrium_csv(q, sigma, u, p))
        self.emit("equilibrium.svg", "svg", lambda: svg_polylines([q[1:-1]]))
        self.summary = {"tip": q[c.N + 1]}

    def reach(self):
        from .reachability import outer_circle_gap, reachable_boundary

        c = self.cfg
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            bounds = list(pool.map(lambda w: reachable_boundary(w, c.resolution), c.omega_bar0))
        rows = []
        for i, b in enumerate(bounds):
            tag = f"reach_{i}"
            self.emit(f"{tag}.svg", "svg", b.svg)
            self.emit(f"{tag}_tips.csv", "csv", b.tips_csv)
            self.emit(f"{tag}_boundary.csv", "csv", lambda b=b: csv_text(
                ("loop", "hole", "x", "y"),
                [(j, int(j >= len(b.outer)), x, y) for j, lp in enumerate(b.loops) for x, y in lp]))
            rows.append({"omega_bar0": b.omega_bar0, "loops": len(b.loops), "holes": len(b.holes),
                         "outer_circle_gap": outer_circle_gap(b)})
        self.summary = {"sets": rows}

    def static(self):
        from .static_opt import StaticProblem, static_optimize

        c = self.cfg
        p = self.params(c.N)
        probs = [StaticProblem(t, tau=c.tau, rho_lambda=c.rho_lambda, tol=c.tol or 1e-8) for t in c.targets]
        kw = {} if c.max_iter is None else {"max_outer": c.max_iter}
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            sols = list(pool.map(lambda pr: static_optimize(pr, p, **kw), probs))
        shapes, rows = [], []
        for i, (pr, sol) in enumerate(zip(probs, sols)):
            tag = f"static_{i}"
            self.emit(f"{tag}.csv", "csv", lambda sol=sol: sol.csv(p))
            self.emit(f"{tag}_history.csv", "csv", lambda sol=sol: csv_text(
                ("outer", "j_sharp", "residual", "max_lambda", "rho_lambda"),
                [(h["outer"], h["j_sharp"], h["residual"], h["max_lambda"], h["rho_lambda"]) for h in sol.history]))
            shapes.append(sol.iterate.q[1:-1])
            rows.append(sol.summary(pr))
        self.emit("static.svg", "svg", lambda: svg_polylines(
            shapes + [_marker(t) for t in c.targets], strokes=["#000000"] * len(shapes) + ["#888888"] * len(c.targets)))
        self.summary = {"targets": rows}

    def dynamic(self):
        from .dynamic_opt import (ControlField, DynamicProblem, dynamic_optimize, evaluate,
                                  static_initial_control)

        c = self.cfg
        grid = self.grid()
        p = self.params(c.N)
        prob = DynamicProblem(c.target, tau=c.tau, T=grid.T, alpha=c.alpha, tol=c.tol or 1e-6)
        u_static = static_initial_control(prob, p, grid)
        given = control_values(c, c.N, grid.M)
        u0 = u_static if given is None else ControlField(
            np.broadcast_to(given, (grid.M + 1, c.N + 1)))
        kw = {} if c.max_iter is None else {"max_iter": c.max_iter}
        res = dynamic_optimize(u0, prob, p, grid, **kw)
        traj_s, cost_s = evaluate(u_static, prob, p, grid)
        self.emit("control.csv", "csv", lambda: res.control.csv(grid))
        self.emit("energies_dynamic.csv", "csv", lambda: res.cost.csv(grid))
        self.emit("energies_static.csv", "csv", lambda: cost_s.csv(grid))
        self.emit("history.json", "json", res.history_json)
        ids = _frame_ids(grid.M + 1, c.frames)
        self.emit("frames.csv", "csv", lambda: csv_text(
            ("n", "t", "k", "qx_dynamic", "qy_dynamic", "qx_static", "qy_static"),
            [(n, n * grid.dt, k, res.trajectory.Q[n, k + 1, 0], res.trajectory.Q[n, k + 1, 1],
              traj_s.Q[n, k + 1, 0], traj_s.Q[n, k + 1, 1]) for n in ids for k in range(c.N + 1)]))
        for j, n in enumerate(ids):
            self.emit(f"frame_{j:02d}.svg", "svg", lambda n=n: svg_polylines(
                [traj_s.Q[n, 1:-1], res.trajectory.Q[n, 1:-1], _marker(c.target)],
                strokes=["#888888", "#000000", "#000000"]))
        self.summary = {"iterations": res.iterations, "J_dynamic": res.cost.J, "J_static": cost_s.J,
                        "J_v_final_dynamic": float(res.cost.J_v[-1]), "J_v_final_static": float(cost_s.J_v[-1])}

    def execute(self):
        getattr(self, self.cfg.kind)()
        if self.want("json"):
            self.writer.write("summary.json", json_text({"kind": self.cfg.kind, **self.summary}))
        self.writer.manifest({"config": self.cfg.summary(), "version": __version__})
        return self.writer.files


def _frame_ids(n_levels, frames):
    frames = max(2, min(frames, n_levels))
    return sorted(set(np.linspace(0, n_levels - 1, frames).round().astype(int).tolist()))


def _frames_svg(shapes):
    n = len(shapes)
    return svg_polylines([q[1:-1] for q in shapes], strokes=[gray((i + 1) / n) for i in range(n)])


def _marker(t, r=0.02):
    a = np.linspace(0.0, 2.0 * np.pi, 17)
    return np.column_stack([t[0] + r * np.cos(a), t[1] + r * np.sin(a)])


def run(cfg: ExperimentConfig, threads: int = 1) -> int:
    """Execute a config; returns the process exit status."""
    from .dynamic_opt import AdjointSolveError, DynamicLimitError
    from .static_opt import InnerSolveError, OuterLimitError, StaticSetupError

    try:
        Run(cfg, threads).execute()
    except (ConfigError, ParamError, StaticSetupError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except StepError as exc:
        log.error("forward solve failed: %s", exc)
        return EXIT_FORWARD
    except (InnerSolveError, OuterLimitError, DynamicLimitError, AdjointSolveError) as exc:
        log.error("optimization failed: %s", exc)
        return EXIT_OPTIMIZE
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    return 0


def _parser():
    ap = argparse.ArgumentParser(prog="tentacle", description="Controlled inextensible rod: simulation and optimal control.")
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML experiment file")
    common.add_argument("--out", metavar="DIR", help="output directory (TENTACLE_OUT overrides)")
    common.add_argument("--format", action="append", choices=FORMATS, dest="formats",
                        help="output format, repeatable (default: all)")
    common.add_argument("--threads", type=int, default=1, metavar="K", help="workers for sweep items")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    pre = sub.add_parser("preset", parents=[common], help="run a built-in preset")
    pre.add_argument("name", help=", ".join(PRESETS))
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "preset":
            if args.name not in PRESETS:
                raise ConfigError(f"unknown preset {args.name!r} (available: {', '.join(PRESETS)})")
            cfg = load_config(args.name)
        else:
            if not args.config:
                raise ConfigError(f"{args.command} needs --config PATH")
            cfg = load_config(args.config)
            if cfg.kind != SUBCOMMANDS[args.command]:
                raise ConfigError(f"config describes a {cfg.kind} problem, not {SUBCOMMANDS[args.command]}")
        out = os.environ.get("TENTACLE_OUT") or args.out
        cfg = cfg.with_output(out=out, formats=args.formats)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return run(cfg, args.threads)


if __name__ == "__main__":
    sys.exit(main())
