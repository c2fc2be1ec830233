from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import accel_loops, straight, verlet_positions_dense
from tentacle import Grid, paper_params
from tentacle.dynamics import (InputError, RodState, SimOptions, acceleration, apply_closures, constraint_residual,
                               energy, gh_fields, simulate, straight_rod, verlet_step)


def rest(N):
    q = straight_rod(N)
    return RodState(q, np.zeros_like(q), np.zeros(N + 3))


def bent(N, amp=0.05, seed=0):
    """Inextensible shape from small random segment angles."""
    rng = np.random.default_rng(seed)
    theta = np.concatenate([[0.0], np.cumsum(amp * rng.standard_normal(N - 1))])
    q = np.zeros((N + 3, 2))
    for k in range(1, N + 1):
        q[k + 1] = q[k] + np.array([np.sin(theta[k - 1]), -np.cos(theta[k - 1])]) / N
    return apply_closures(q)


class TestFields:
    def test_straight_rod(self):
        p = paper_params(12)
        G, H = gh_fields(straight_rod(12), np.zeros(13), p)
        assert np.allclose(G[1:-1], p.eps, rtol=0, atol=0)
        assert np.all(H == 0)

    def test_curvature_below_bound(self):
        p = paper_params(20)
        q = bent(20, amp=0.02)
        G, _ = gh_fields(q, np.ones(21), p)
        assert np.array_equal(G[1:-1], p.eps)

    def test_zero_mu(self):
        p = paper_params(20, mu="0")
        _, H = gh_fields(bent(20), np.linspace(-1, 1, 21), p)
        assert np.all(H == 0)


class TestAcceleration:
    def test_rest_equilibrium(self):
        p = paper_params(16)
        a = acceleration(rest(16), np.zeros(17), p)
        assert np.all(a == 0)

    def test_friction_only(self):
        N = 16
        p = paper_params(N, gamma="0")
        q = straight_rod(N)
        v = np.zeros_like(q)
        v[:, 0] = 1.0
        a = acceleration(RodState(q, v, np.zeros(N + 3)), np.zeros(N + 1), p, with_friction=True)
        expect = -p.beta[1:N] / p.rho[1:N]
        assert np.allclose(a[2:N + 1, 0], expect, rtol=1e-13, atol=0)
        assert np.allclose(a[2:N + 1, 1], 0.0, atol=1e-12)

    def test_exact_arithmetic_n4(self):
        N = 4
        p = paper_params(N)
        P = [[Fraction(float(x)) for x in row] for row in p.stacked()]
        exact = accel_loops(straight(N, exact=True), [Fraction(0)] * (N + 3), [Fraction(1)] * (N + 1), P,
                            Fraction(1, N))
        a = acceleration(rest(N), np.ones(N + 1), p)
        for k in range(1, N):
            for i in range(2):
                ref = float(exact[k - 1][i])
                assert a[k + 1, i] == pytest.approx(ref, rel=1e-12, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 0.2))
    def test_matches_loop_formula(self, seed, amp):
        N = 12
        p = paper_params(N)
        rng = np.random.default_rng(seed)
        q = bent(N, amp, seed)
        sig = np.zeros(N + 3)
        sig[2:N + 1] = rng.uniform(0, 1, N - 1)
        u = rng.uniform(-1, 1, N + 1)
        a = acceleration(RodState(q, np.zeros_like(q), sig), u, p)
        ref = np.array(accel_loops(q, sig, u, p.stacked(), 1.0 / N))
        assert np.allclose(a[2:N + 1], ref, rtol=1e-10, atol=1e-8)


class TestVerletStep:
    def test_rest_fixed_point(self):
        N = 20
        p = paper_params(N)
        g = Grid(N, 10, 1e-4)
        traj = simulate(straight_rod(N), None, 0.0, p, g)
        assert np.max(np.abs(traj.Q - traj.Q[0])) <= 1e-14   # roundoff only
        assert np.max(np.abs(traj.S)) < 1e-8
        assert traj.diag("newton_iters").max() <= 2
        s1 = verlet_step(rest(N), np.zeros(N + 1), p, g)
        assert s1.t == pytest.approx(1e-4)

    @pytest.mark.parametrize("N", [10, 50])
    def test_dense_oracle(self, N):
        p = paper_params(N)
        g = Grid(N, 1, 1e-4)
        s1 = verlet_step(rest(N), np.ones(N + 1), p, g)
        q = straight_rod(N)
        qn, _, res = verlet_positions_dense(q, np.zeros_like(q), np.zeros(N - 1), np.ones(N + 1), p.stacked(), 1e-4)
        assert res < 1e-13
        assert np.max(np.abs(qn[1:N + 1] - s1.q[1:N + 1])) <= 1e-12

    def test_constraint_after_step(self):
        N = 16
        p = paper_params(N)
        g = Grid(N, 1, 1e-4)
        st_ = RodState(bent(N, 0.1), np.zeros((N + 3, 2)), np.zeros(N + 3))
        s1 = verlet_step(st_, np.linspace(-1, 1, N + 1), p, g, tol=1e-10)
        assert constraint_residual(s1.q) <= 1e-10


@pytest.fixture(scope="module")
def run():
    N = 16
    p = paper_params(N)
    g = Grid(N, 400, 1e-4)
    rng = np.random.default_rng(3)
    U = rng.uniform(-1, 1, (g.M + 1, N + 1))
    return simulate(bent(N, 0.1), None, U, p, g), (N, p, g, U)


class TestSimulate:

    def test_invariants(self, run):
        traj, (N, *_rest) = run
        for i in range(len(traj)):
            q = traj.Q[i]
            assert np.all(q[1] == 0.0)
            assert np.array_equal(q[0], q[1] + np.array([0.0, 1.0 / N]))
            assert traj.S[i][N + 1] == 0.0
            assert constraint_residual(q) <= 1e-10
        assert np.allclose(np.diff(traj.times), 1e-4, rtol=1e-12)

    def test_deterministic(self, run):
        traj, (N, p, g, U) = run
        again = simulate(bent(N, 0.1), None, U, p, g)
        assert np.array_equal(traj.Q, again.Q)
        assert np.array_equal(traj.S, again.S)
        assert traj.trajectory_csv() == again.trajectory_csv()

    def test_input_errors(self):
        N = 8
        p = paper_params(N)
        g = Grid(N, 4, 1e-4)
        with pytest.raises(InputError):
            simulate(straight_rod(N), None, 1.5, p, g)
        q = straight_rod(N)
        q[4] *= 1.1
        with pytest.raises(InputError):
            simulate(q, None, 0.0, p, g)

    def test_short_energy_drift(self):
        N = 10
        p = paper_params(N, beta="0", gamma="0")
        g = Grid(N, 10_000, 1e-4)
        q0 = bent(N, 0.05, seed=7)
        traj = simulate(q0, None, 0.0, p, g, SimOptions(with_friction=False))
        E = np.array([energy(traj.Q[i], traj.V[i], np.zeros(N + 1), p) for i in range(0, len(traj), 100)])
        assert np.max(np.abs(E - E[0])) <= 0.02 * (abs(E[0]) + 1)
        assert traj.diag("energy")[0] == pytest.approx(E[0], rel=1e-12)
