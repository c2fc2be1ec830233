import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tentacle import Grid, paper_params
from tentacle.dynamic_opt import (AdjointSolveError, ControlField, DynamicInputError, DynamicLimitError,
                                  DynamicProblem, adjoint_step, control_gradient, dynamic_functional,
                                  dynamic_optimize, evaluate, project, solve_adjoint, variational_gap)
from tentacle.dynamics import simulate, straight_rod
from tentacle.kernels import _fallback as ref


def setup(N, M, T=0.02, seed=1):
    p = paper_params(N, dynamic_friction=True)
    g = Grid(N, M, T / M)
    prob = DynamicProblem((0.5, -0.25), tau=1e-4, T=T)
    rng = np.random.default_rng(seed)
    U = np.clip(0.5 + 0.4 * rng.standard_normal((M + 1, N + 1)), -0.99, 0.99)
    traj, cost = evaluate(U, prob, p, g)
    return p, g, prob, U, traj, cost


def fd_error(N, M):
    p, g, prob, U, traj, _ = setup(N, M)
    G = control_gradient(traj, solve_adjoint(traj, U, prob, p, g), U, p, g) * g.ds * g.dt
    h = 1e-5
    levels = sorted({1, M // 4, M // 2, 3 * M // 4, M - 1})
    fd = np.zeros_like(U)
    for n in levels:
        for k in range(N + 1):
            up, um = U.copy(), U.copy()
            up[n, k] += h
            um[n, k] -= h
            fd[n, k] = (evaluate(up, prob, p, g)[1].J - evaluate(um, prob, p, g)[1].J) / (2 * h)
    return np.max(np.abs(G[levels] - fd[levels])) / np.max(np.abs(fd[levels]))


@pytest.fixture(scope="module")
def small():
    return setup(8, 50)


class TestFunctional:
    def test_rest_on_target(self):
        N = 8
        p = paper_params(N)
        g = Grid(N, 20, 1e-3)
        prob = DynamicProblem((0.0, -1.0), T=0.02)
        _, cost = evaluate(np.zeros((21, N + 1)), prob, p, g)
        assert cost.J == 0.0

    def test_control_energy(self):
        N = 8
        p = paper_params(N)
        g = Grid(N, 10, 1e-3)
        U = np.zeros((11, N + 1))
        U[4] = 1.0
        traj = simulate(straight_rod(N), None, U, p, g)
        cost = dynamic_functional(traj, U, DynamicProblem((0, -1), T=0.01), p, g)
        assert cost.J_u[4] == pytest.approx(0.5 / N * (N + 1), rel=1e-15)
        assert cost.J_u[3] == 0.0

    def test_shape_mismatch(self, small):
        p, g, prob, U, traj, _ = small
        with pytest.raises(DynamicInputError):
            dynamic_functional(traj, U[:-1], prob, p, g)

    def test_csv(self, small):
        p, g, prob, U, traj, cost = small
        assert cost.csv(g).splitlines()[0] == "n,t,J_u,J_qstar,J_v"


class TestAdjoint:
    def test_final_condition(self, small):
        p, g, prob, U, traj, _ = small
        adj = solve_adjoint(traj, U, prob, p, g)
        N = g.N
        assert np.array_equal(adj[-1].qbar[2:N + 1], -traj.V[-1][2:N + 1])
        assert np.all(adj[-1].vbar == 0)

    def test_boundary_rows(self, small):
        p, g, prob, U, traj, _ = small
        for a in solve_adjoint(traj, U, prob, p, g):
            assert np.all(a.qbar[0] == 0) and np.all(a.qbar[1] == 0)

    def test_orthogonality(self, small):
        p, g, prob, U, traj, _ = small
        N = g.N
        adj = solve_adjoint(traj, U, prob, p, g)
        for a, q in zip(adj, traj.Q):
            dqb = (a.qbar[2:N + 1] - a.qbar[1:N]) * N
            dq = (q[2:N + 1] - q[1:N]) * N
            assert np.max(np.abs(np.sum(dqb * dq, axis=1))) <= 1e-10 * max(1.0, np.max(np.abs(a.qbar)))

    def test_tip_tension(self, small):
        p, g, prob, U, traj, _ = small
        N = g.N
        adj = solve_adjoint(traj, U, prob, p, g)
        for n in (0, 10, g.M):
            q = traj.Q[n]
            expect = -(1 / prob.tau) * (q[N + 1] - np.array(prob.target)) @ ((q[N + 1] - q[N]) * N)
            assert adj[n].sigbar[N + 1] == pytest.approx(expect, rel=1e-12)

    def test_step_matches_run(self, small):
        p, g, prob, U, traj, _ = small
        adj = solve_adjoint(traj, U, prob, p, g)
        for n in range(g.M, 0, -7):
            s = adjoint_step(adj[n], traj, n, U, prob, p, g)
            assert np.array_equal(s.qbar, adj[n - 1].qbar)
            assert np.array_equal(s.vbar, adj[n - 1].vbar)
        with pytest.raises(DynamicInputError):
            adjoint_step(adj[0], traj, 0, U, prob, p, g)

    def test_dense_oracle_one_step(self):
        N, M = 6, 4
        p, g, prob, U, traj, _ = setup(N, M, T=4e-4, seed=5)
        adj = solve_adjoint(traj, U, prob, p, g)
        n = M
        P = p.stacked()
        ds, dt = g.ds, g.dt
        qb, w = adj[n].qbar, -adj[n].vbar
        q, q_prev = traj.Q[n], traj.Q[n - 1]
        sbN = adj[n].sigbar[N + 1]

        def new_interior(x):
            sb = np.zeros(N + 3)
            sb[2:N + 1] = x
            sb[N + 1] = sbN
            a = ref.adjoint_acceleration(qb, sb, w, q, traj.S2[n], U[n], P, ds, True)
            return qb[2:N + 1] + w[2:N + 1] * dt + 0.5 * dt**2 * a

        def rows(x):
            qn = np.zeros((N, 2))
            qn[1:] = new_interior(x)
            dqn = (qn[1:] - qn[:-1]) / ds
            dq = (q_prev[2:N + 1] - q_prev[1:N]) / ds
            return np.sum(dqn * dq, axis=1)

        r0 = rows(np.zeros(N - 1))
        A = np.column_stack([rows(e) - r0 for e in np.eye(N - 1)])
        x = np.linalg.solve(A, -r0)
        assert np.max(np.abs(x - adj[n].sigbar[2:N + 1])) <= 1e-12 * max(1.0, np.max(np.abs(x)))
        assert np.max(np.abs(new_interior(x) - adj[n - 1].qbar[2:N + 1])) <= 1e-12 * max(1.0, np.max(np.abs(qb)))

    def test_zero_propagation(self):
        N, M = 8, 30
        p = paper_params(N)
        g = Grid(N, M, 1e-3)
        prob = DynamicProblem((0.0, -1.0), T=M * 1e-3)
        U = np.zeros((M + 1, N + 1))
        traj, _ = evaluate(U, prob, p, g)
        adj = solve_adjoint(traj, U, prob, p, g, target_forcing=False)
        assert max(np.max(np.abs(a.qbar)) for a in adj) == 0.0
        assert np.array_equal(control_gradient(traj, adj, U, p, g), U)

    def test_linearity(self, small):
        p, g, prob, U, traj, _ = small
        a1 = solve_adjoint(traj, U, prob, p, g, target_forcing=False)
        a2 = solve_adjoint(traj, U, prob, p, g, target_forcing=False, final_scale=2.0)
        for x, y in zip(a2, a1):
            assert np.allclose(x.qbar, 2 * y.qbar, rtol=1e-13, atol=1e-15)

    def test_divergence_guard(self, small):
        p, g, prob, U, traj, _ = small
        with pytest.raises(AdjointSolveError) as ei:
            solve_adjoint(traj, U, prob, p, g, target_forcing=False, final_scale=1e120)
        assert ei.value.level == g.M


class TestGradient:
    def test_zero_adjoint_and_zero_mu(self, small):
        p, g, prob, U, traj, _ = small
        assert np.array_equal(control_gradient(traj, np.zeros_like(traj.Q), U, p, g), U)
        p0 = paper_params(g.N, mu="0")
        adj = solve_adjoint(traj, U, prob, p, g)
        assert np.array_equal(control_gradient(traj, adj, U, p0, g), U)

    def test_finite_differences_refine(self):
        coarse, fine = fd_error(8, 50), fd_error(16, 100)
        assert coarse <= 0.10
        assert fine < coarse


class TestOptimize:
    def test_projection(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(-3, 3, (5, 4))
        pu = project(u)
        assert np.max(np.abs(pu)) <= 1.0
        assert np.array_equal(project(pu), pu)
        assert np.array_equal(project(pu - 0.0 * rng.standard_normal(pu.shape)), pu)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1, 1), min_size=6, max_size=6), st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6))
    def test_variational_inequality_of_projection(self, u, g):
        u, g = np.array(u), np.array(g)
        new = project(u - g)
        # the projected point satisfies (new - (u - g)) . (v - new) >= 0 for v in the box
        for v in (-np.ones(6), np.ones(6), u):
            assert np.sum((new - (u - g)) * (v - new)) >= -1e-9

    def test_control_field(self):
        with pytest.raises(DynamicInputError):
            ControlField(np.full((3, 3), 1.5))
        with pytest.raises(DynamicInputError):
            ControlField(np.zeros(4))
        g = Grid(8, 5, 1e-3)
        cf = ControlField.constant_in_time(np.linspace(-1, 1, 9), g)
        assert cf.shape == (6, 9)
        with pytest.raises(ValueError):
            cf.u[0, 0] = 0.0

    def test_rest_fixed_point(self):
        N, M = 8, 20
        p = paper_params(N)
        g = Grid(N, M, 1e-3)
        prob = DynamicProblem((0.0, -1.0), T=0.02)
        res = dynamic_optimize(np.zeros((M + 1, N + 1)), prob, p, g)
        assert res.iterations == 1
        control, history = res
        assert np.all(control.u == 0)
        assert history[0]["J"] == 0.0
        assert set(json.loads(res.history_json())[0]) == {"iter", "J", "J_u_total", "J_qstar_total", "J_v_final",
                                                          "grad_norm", "u_change"}

    def test_small_descent(self):
        # short horizon at the default step: J decreases, iterates stay in the box
        p, g, prob, U, traj, cost = setup(8, 50)
        prob = DynamicProblem(prob.target, tau=prob.tau, T=prob.T, alpha=1e-4, tol=1e-12)
        seen = []
        with pytest.raises(DynamicLimitError) as ei:
            dynamic_optimize(U, prob, p, g, max_iter=15, callback=seen.append)
        Js = [h["J"] for h in ei.value.history]
        assert Js[-1] < Js[0]
        assert sum(b <= a for a, b in zip(Js, Js[1:])) >= 0.95 * (len(Js) - 1)
        assert np.max(np.abs(ei.value.control.u)) <= 1.0
        assert len(seen) == 15

    def test_variational_gap_helper(self):
        u = np.array([1.0, -1.0, 0.2])
        g = np.array([-2.0, 3.0, 0.0])
        assert variational_gap(g, u) >= -1e-12

    def test_problem_validation(self):
        with pytest.raises(DynamicInputError):
            DynamicProblem((0, 0), alpha=0)
        with pytest.raises(DynamicInputError):
            DynamicProblem((0, 0, 0))
