import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from tentacle import cli
from tentacle.config import ConfigError, control_values, load_config, parse_config

SIM = """\
[grid]
N = 8
dt = 1e-4
T = 0.01

[control]
expr = "1-s"

[problem]
kind = "simulate"
frames = 3
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def listing(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())


class TestPresets:
    def test_fig1(self):
        c = load_config("paper-fig1")
        assert (c.N, c.dt, c.T, c.kind) == (50, 1e-4, 12.0, "simulate")
        assert np.all(control_values(c, c.N) == 1.0)

    def test_fig3(self):
        c = load_config("paper-fig3")
        assert c.omega_bar0 == pytest.approx((math.pi, 1.5 * math.pi, 2 * math.pi, 2.25 * math.pi))

    def test_fig4(self):
        c = load_config("paper-fig4")
        assert (c.tau, c.rho_lambda, c.tol, len(c.targets)) == (1e-4, 1e2, 1e-8, 12)

    def test_fig5(self):
        c = load_config("paper-fig5")
        assert (c.N, c.T, c.alpha, c.tol, c.tau, c.max_iter) == (10, 4.0, 1e-4, 1e-6, 1e-4, 5000)
        assert c.params["beta"] == "2-s" and c.params["gamma"] == "1e-6*(2-s)"
        assert c.target == (0.5, -0.25)

    def test_bit_stable(self):
        assert load_config("paper-fig5").summary() == load_config("paper-fig5").summary()


class TestParseErrors:
    def test_unclosed_paren_column(self):
        with pytest.raises(ConfigError) as ei:
            parse_config('[params]\nmu = "exp(-s"\n[problem]\nkind = "simulate"\n')
        assert (ei.value.line, ei.value.column) == (2, 10)   # the '(' inside the quotes

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as ei:
            parse_config('[problem]\nkind = "simulate"\nspeed = 3\n')
        assert ei.value.line == 3

    def test_unknown_section_and_kind(self):
        with pytest.raises(ConfigError):
            parse_config('[plot]\nx = 1\n')
        with pytest.raises(ConfigError):
            parse_config('[problem]\nkind = "fly"\n')

    def test_syntax(self):
        with pytest.raises(ConfigError) as ei:
            parse_config('[grid]\nN = = 3\n')
        assert ei.value.line == 2

    def test_missing_control_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, '[control]\nfile = "nope.csv"\n[problem]\nkind = "simulate"\n'))

    def test_control_file(self, tmp_path):
        np.savetxt(tmp_path / "u.csv", np.linspace(-1, 1, 9)[None], delimiter=",")
        c = load_config(write(tmp_path, '[grid]\nN = 8\n[control]\nfile = "u.csv"\n[problem]\nkind = "simulate"\n'))
        assert np.allclose(control_values(c, 8), np.linspace(-1, 1, 9))


class TestRun:
    def test_unknown_preset(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["preset", "nope", "--out", str(out)]) == 1
        assert not out.exists() or listing(out) == []

    def test_kind_mismatch(self, tmp_path):
        assert cli.main(["reach", "--config", str(write(tmp_path, SIM)), "--out", str(tmp_path / "o")]) == 1

    def test_simulate_manifest_and_rerun(self, tmp_path):
        cfg = write(tmp_path, SIM)
        a = tmp_path / "a"
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
        first = {f: (a / f).read_bytes() for f in listing(a)}
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
        files = listing(a)
        assert {"trajectory.csv", "diagnostics.csv", "frames.svg", "summary.json", "manifest.json"} <= set(files)
        manifest = json.loads((a / "manifest.json").read_text())
        listed = {e["path"] for e in manifest["files"]}
        assert listed == set(files) - {"manifest.json"}
        for f in files:
            assert (a / f).read_bytes() == first[f], f

    def test_formats_and_env(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, SIM)
        env_out = tmp_path / "env"
        monkeypatch.setenv("TENTACLE_OUT", str(env_out))
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "ignored"), "--format", "csv"]) == 0
        assert not (tmp_path / "ignored").exists()
        assert set(listing(env_out)) == {"trajectory.csv", "diagnostics.csv", "manifest.json"}

    def test_forward_failure_exit(self, tmp_path):
        bad = SIM.replace("dt = 1e-4", "dt = 0.05").replace("T = 0.01", "T = 1.0").replace('"1-s"', '"1"')
        code = cli.main(["simulate", "--config", str(write(tmp_path, bad)), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_equilibrium_and_static(self, tmp_path):
        eq = '[grid]\nN = 16\n[control]\nexpr = "s"\n[problem]\nkind = "equilibrium"\n'
        assert cli.main(["equilibrium", "--config", str(write(tmp_path, eq, "e.toml")), "--out", str(tmp_path / "e")]) == 0
        assert (tmp_path / "e" / "equilibrium.csv").exists()
        st = '[grid]\nN = 16\n[problem]\nkind = "static"\ntargets = [[0.5, -0.25], [0.0, -1.0]]\n'
        assert cli.main(["static-opt", "--config", str(write(tmp_path, st, "s.toml")), "--out", str(tmp_path / "s"),
                         "--threads", "2"]) == 0
        assert {"static_0.csv", "static_1.csv", "static.svg"} <= set(listing(tmp_path / "s"))

    def test_reach_preset_four_sets(self, tmp_path):
        cfg = load_config("paper-fig3")
        from dataclasses import replace
        cfg = replace(cfg, resolution=32, out=str(tmp_path / "r"))
        assert cli.run(cfg, threads=2) == 0
        assert sum(f.endswith(".svg") for f in listing(tmp_path / "r")) == 4

    def test_dynamic_small(self, tmp_path):
        dyn = ('[grid]\nN = 8\ndt = 1e-3\nT = 0.02\n[params]\nbeta = "2-s"\ngamma = "1e-6*(2-s)"\n'
               '[problem]\nkind = "dynamic"\ntarget = [0.0, -1.0]\nmax_iter = 3\ntol = 1e-3\nframes = 3\n')
        code = cli.main(["dynamic-opt", "--config", str(write(tmp_path, dyn)), "--out", str(tmp_path / "d")])
        files = set(listing(tmp_path / "d"))
        assert code == 0, files
        assert {"control.csv", "energies_dynamic.csv", "energies_static.csv", "history.json", "frames.csv"} <= files

    def test_console_script(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "tentacle.cli", "preset", "missing"], capture_output=True,
                             text=True, env=dict(os.environ, TENTACLE_OUT=str(tmp_path / "x")))
        assert out.returncode == 1
        assert "unknown preset" in out.stderr
