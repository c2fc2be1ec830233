import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tentacle.expr import ExprEvalError, ExprSyntaxError, ParamExpr, eval_param
from tentacle.fd import Grid, d2_central, d_minus, d_plus
from tentacle.params import PAPER_EXPRS, ParamError, build_params, paper_params


def field_from(fn, N):
    k = np.arange(-1, N + 2)
    return np.array([fn(kk / N) for kk in k], dtype=float)


class TestGrid:
    def test_basic(self):
        g = Grid(N=50, M=120000, dt=1e-4)
        assert g.ds * g.N == pytest.approx(1.0, abs=1e-15)
        assert g.T == pytest.approx(12.0)
        assert len(g.node_field()) == 53

    @pytest.mark.parametrize("kw", [dict(N=3, M=1, dt=1.0), dict(N=10, M=0, dt=1.0), dict(N=10, M=1, dt=0.0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            Grid(**kw)

    def test_from_horizon(self):
        g = Grid.from_horizon(10, 4.0, 1e-4)
        assert g.M == 40000 and g.T == pytest.approx(4.0)


class TestStencils:
    def test_examples(self):
        ds = 0.5
        f = np.array([((k) * ds) ** 2 for k in range(-1, 6)])   # slots -1..5
        assert d_minus(f, 2, ds) == pytest.approx(1.5)
        assert d_minus(np.full(8, 3.0), 3, 0.1) == 0.0
        N = 10
        lin = field_from(lambda s: s, N)
        for k in range(0, N + 1):
            assert d_minus(lin, k, 1 / N) == pytest.approx(1.0)
            assert d_plus(lin, k, 1 / N) == pytest.approx(1.0)
            assert d2_central(lin, k, 1 / N) == pytest.approx(0.0, abs=1e-10)
        quad = field_from(lambda s: s * s, N)
        for k in range(0, N + 1):
            assert d2_central(quad, k, 1 / N) == pytest.approx(2.0, abs=1e-10)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            d_minus(np.zeros(13), -1, 0.1)
        with pytest.raises(IndexError):
            d_plus(np.zeros(13), 11, 0.1)

    @given(st.lists(st.floats(-5, 5), min_size=13, max_size=13), st.lists(st.floats(-5, 5), min_size=13, max_size=13),
           st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10))
    def test_linearity_and_composition(self, f, g, a, b, k):
        f, g = np.array(f), np.array(g)
        ds = 0.1
        for D in (d_minus, d_plus, d2_central):
            lhs = D(a * f + b * g, k, ds)
            rhs = a * D(f, k, ds) + b * D(g, k, ds)
            assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(lhs)) / ds**2)
        dm = np.array([d_minus(f, j, ds) if j >= 0 else 0.0 for j in range(-1, 12)])
        assert d2_central(f, k, ds) == pytest.approx(d_plus(dm, k, ds), abs=1e-9 / ds**2)


class TestExpr:
    def test_paper_values(self):
        assert eval_param("exp(-s)", 0.0) == 1.0
        assert eval_param("1e-3*(1-0.9*s)", 1.0) == pytest.approx(1e-4, rel=1e-12)
        assert eval_param("2*pi*(1+s^2)", 1.0) == pytest.approx(4 * math.pi)

    def test_precedence(self):
        assert eval_param("2^3^2", 0) == 512.0
        assert eval_param("-2^2", 0) == -4.0
        assert eval_param("1-2-3", 0) == -4.0
        assert eval_param("8/4/2", 0) == 1.0

    @pytest.mark.parametrize("src,col", [("exp(-s", 4), ("1+", 3), ("s $ 2", 3), ("foo(s)", 1), ("(s))", 4)])
    def test_syntax_errors(self, src, col):
        with pytest.raises(ExprSyntaxError) as ei:
            ParamExpr(src)
        assert ei.value.column == col

    def test_eval_error_names_subexpression(self):
        e = ParamExpr("1/(1-s)")
        with pytest.raises(ExprEvalError, match="s=1"):
            e(1.0)
        with pytest.raises(ExprEvalError):
            ParamExpr("sqrt(s-2)")(0.5)

    def test_endpoint_nudge(self):
        mu = ParamExpr(PAPER_EXPRS["mu"])
        vals = mu.sample([0.0, 0.5, 1.0])
        assert vals[-1] == pytest.approx(0.0, abs=1e-9)

    @settings(max_examples=50)
    @given(st.sampled_from(sorted(PAPER_EXPRS.values()) + ["-s^2+3", "sin(s)*cos(2*s)/(2+s)", "-(-(s))"]),
           st.lists(st.floats(0.0, 0.999), min_size=100, max_size=100))
    def test_roundtrip(self, src, samples):
        e = ParamExpr(src)
        back = ParamExpr(e.pretty())
        for s in samples:
            assert back(s) == pytest.approx(e(s), rel=1e-14, abs=1e-300)


class TestParams:
    def test_paper_set(self):
        p = paper_params(50)
        assert p.eps[-1] == pytest.approx(1e-4, rel=1e-12)
        assert p.mu[-1] == 0.0
        assert np.all(p.omega_bar < p.omega)
        assert np.all(p.omega_bar >= 0)
        assert p.eps0 == pytest.approx(1e-4, rel=1e-12)
        assert not p.constant_omega_bar

    def test_deterministic(self):
        a, b = paper_params(30), paper_params(30)
        assert a == b
        assert all(np.array_equal(x, y) for x, y in zip(a.stacked(), b.stacked()))

    def test_zero_mu(self):
        p = paper_params(20, mu="0")
        assert np.all(p.omega_bar == 0)

    def test_eps_zero_rejected(self):
        with pytest.raises(ParamError, match="eps violates ε ≥ ε₀"):
            paper_params(20, eps="0")

    def test_names_index(self):
        with pytest.raises(ParamError, match="rho .*k=0"):
            paper_params(20, rho="s")

    def test_tip_check(self, caplog):
        with pytest.raises(ParamError, match="mu does not vanish"):
            paper_params(20, mu="20")
        paper_params(20, mu="1")          # 2x over the bound: warning only
        assert "mu does not vanish" in caplog.text
        p = build_params(dict(PAPER_EXPRS, mu="1"), 20, check_tip=False)
        assert p.constant_omega_bar is False

    def test_constant_flag(self):
        p = build_params(dict(PAPER_EXPRS, mu="1", eps="1e-3", omega="3"), 16, check_tip=False)
        assert p.constant_omega_bar
