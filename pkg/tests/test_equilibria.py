import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tentacle import build_params, paper_params
from tentacle.dynamics import RodState, acceleration, apply_closures
from tentacle.equilibria import (StationaryControl, SynthesisError, curvature, equilibrium_csv, equilibrium_shape,
                                 synthesize_control)
from tentacle.params import PAPER_EXPRS


def const_params(N):
    # mu = 1, eps = 1e-3, omega = 3: constant omega_bar = 3/1.001
    return build_params(dict(PAPER_EXPRS, mu="1", eps="1e-3", omega="3"), N, check_tip=False)


def smooth_u(N):
    return 0.5 + 0.3 * np.sin(3 * np.linspace(0, 1, N + 1))


class TestShape:
    def test_zero_control(self):
        N = 25
        q, sigma = equilibrium_shape(0.0, paper_params(N))
        assert np.array_equal(q[1:N + 2, 0], np.zeros(N + 1))
        assert np.allclose(q[1:N + 2, 1], -np.arange(N + 1) / N, rtol=0, atol=1e-15)
        assert np.all(sigma == 0)

    def test_circular_arc(self):
        errs = []
        for N in (100, 200, 10_000):
            p = const_params(N)
            assert p.constant_omega_bar
            w = p.omega_bar[0]
            q, _ = equilibrium_shape(1.0, p)
            s = np.arange(N + 1) / N
            exact = np.column_stack([(1 - np.cos(w * s)) / w, -np.sin(w * s) / w])
            errs.append(np.max(np.abs(q[1:N + 2] - exact)))
        assert errs[0] <= 2.0 / 100
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
        assert errs[2] <= 2e-4

    def test_base_tension(self):
        p = paper_params(50)
        _, sigma = equilibrium_shape(1.0, p)
        mu, om, eps = np.exp(0.0), 2 * np.pi, 1e-3
        assert sigma[1] == pytest.approx(eps * (mu * om / (mu + eps)) ** 2, rel=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=31, max_size=31))
    def test_unit_tangents_and_tension_sign(self, u):
        p = paper_params(30)
        q, sigma = equilibrium_shape(np.array(u), p)
        seg = np.linalg.norm(np.diff(q[1:32], axis=0), axis=1) * 30
        assert np.max(np.abs(seg - 1)) <= 1e-12
        assert np.all(sigma >= 0)

    def test_consistent_with_dynamics(self):
        amax = []
        for N in (20, 40, 80):
            p = paper_params(N)
            u = smooth_u(N)
            q, sigma = equilibrium_shape(u, p)
            amax.append(np.max(np.abs(acceleration(RodState(q, np.zeros_like(q), sigma), u, p))))
        assert amax[0] / amax[1] >= 1.8 and amax[1] / amax[2] >= 1.8

    def test_csv(self):
        p = paper_params(10)
        q, s = equilibrium_shape(1.0, p)
        text = equilibrium_csv(q, s, 1.0, p)
        assert text.splitlines()[0] == "s,qx,qy,sigma,u"
        assert len(text.splitlines()) == 12


class TestSynthesis:
    def test_straight(self):
        p = paper_params(20)
        q, _ = equilibrium_shape(0.0, p)
        assert np.all(synthesize_control(q, p).u == 0)

    def test_round_trip_first_order(self):
        errs = []
        for N in (20, 40, 80):
            p = paper_params(N)
            u = smooth_u(N)
            q, _ = equilibrium_shape(u, p)
            # u_N is not identifiable: omega_bar_N = 0
            errs.append(np.max(np.abs(synthesize_control(q, p).u[:N] - u[:N])))
        assert errs[0] <= 1.0 / 20
        assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8

    def test_clamped(self):
        p = paper_params(40)
        w = 2.5 * p.omega_bar.max()
        s = np.arange(-1, 42) / 40
        q = apply_closures(np.column_stack([(1 - np.cos(w * s)) / w, -np.sin(w * s) / w]))
        sc = synthesize_control(q, p)
        inner = slice(1, 38)
        assert np.all(np.abs(sc.u[inner]) == 1.0)
        assert sc.any_clamped

    def test_unrealizable(self):
        p = paper_params(20, mu="0")
        q, _ = equilibrium_shape(0.0, paper_params(20))
        synthesize_control(q, p)                       # flat: fine
        q, _ = equilibrium_shape(1.0, paper_params(20))
        with pytest.raises(SynthesisError):
            synthesize_control(q, p)

    def test_control_type(self):
        with pytest.raises(ValueError):
            StationaryControl(np.array([0.0, 1.5]))
        assert curvature(equilibrium_shape(0.0, paper_params(8))[0]).shape == (9,)
