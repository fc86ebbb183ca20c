import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from wpod.errors import InputError
from wpod.optimizer import (
    LinearConstraint,
    Oracle,
    Schedule,
    StepFailure,
    constrained_step,
    damped_bfgs,
    kkt_residual,
    outer_loop,
    project_feasible,
    qp_direction,
)


class Quadratic(Oracle):
    """``J = ||D (mu - target)||^2 + offset`` with call logging."""

    def __init__(self, target, diag=None, offset=1.0):
        self.target = np.asarray(target, float)
        self.diag = np.ones_like(self.target) if diag is None else np.asarray(diag, float)
        self.offset = offset
        self.eps_log = []
        self.reinits = []

    def value(self, mu):
        return float(np.sum((self.diag * (mu - self.target)) ** 2)) + self.offset

    def gradient(self, mu):
        return 2 * self.diag**2 * (mu - self.target)

    def set_eps_r(self, eps_r):
        self.eps_log.append(eps_r)

    def reinit(self, mu):
        self.reinits.append((np.array(mu), self.value(mu)))


class Rosenbrock(Oracle):
    def value(self, mu):
        x = 10 * np.asarray(mu)
        return float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2)) + 1.0

    def gradient(self, mu):
        x = 10 * np.asarray(mu)
        g = np.zeros_like(x)
        g[:-1] = -400 * x[:-1] * (x[1:] - x[:-1] ** 2) - 2 * (1 - x[:-1])
        g[1:] += 200 * (x[1:] - x[:-1] ** 2)
        return 10 * g


def box(n, lo=0.0, hi=1.0):
    return np.full(n, lo), np.full(n, hi)


class TestProjection:
    @given(st.integers(0, 2**32 - 1), st.integers(2, 6))
    def test_matches_generic_solver(self, seed, n):
        r = np.random.default_rng(seed)
        lb, ub = box(n)
        a = r.uniform(0.5, 2.0, n)
        b = float(a @ r.uniform(0.2, 0.8, n))
        y = r.normal(0.5, 1.0, n)
        x = project_feasible(y, lb, ub, a, b)
        assert np.all(x >= lb) and np.all(x <= ub)
        assert abs(a @ x - b) <= 1e-8
        ref = minimize(lambda z: 0.5 * np.sum((z - y) ** 2), np.clip(y, lb, ub),
                       jac=lambda z: z - y, bounds=list(zip(lb, ub)), method="SLSQP",
                       constraints=[{"type": "eq", "fun": lambda z: a @ z - b, "jac": lambda z: a}],
                       options={"ftol": 1e-14, "maxiter": 500})
        assert np.sum((x - y) ** 2) <= np.sum((ref.x - y) ** 2) + 1e-9

    def test_feasible_point_is_fixed(self):
        lb, ub = box(3)
        x = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(project_feasible(x, lb, ub, np.ones(3), 1.0), x, atol=1e-15)

    def test_infeasible_constraint(self):
        lb, ub = box(2)
        with pytest.raises(InputError):
            project_feasible([0.5, 0.5], lb, ub, np.ones(2), 5.0)


class TestStep:
    def test_quadratic_converges(self):
        n = 6
        target = np.linspace(0.2, 0.7, n)
        con = LinearConstraint(np.ones(n), float(target.sum()))
        oracle = Quadratic(target)
        sch = Schedule(reinit_period=100, min_halvings=0, max_iters=50, kkt_tol=1e-12)
        rep = outer_loop(oracle, np.full(n, target.mean()) + 0.01 * np.arange(n), con, box(n), sch)
        assert rep.iterations <= 50
        assert np.max(np.abs(rep.mu_opt - target)) <= 1e-6

    def test_collinear_gradient(self):
        n = 4
        a = np.ones(n)
        mu = np.full(n, 0.5)
        grad = 3.0 * a
        assert kkt_residual(mu, grad, LinearConstraint(a, 2.0), box(n)) <= 1e-8
        d, lam = qp_direction(mu, grad, 0.0, a, box(n), np.eye(n))
        assert np.max(np.abs(d)) <= 1e-12
        assert lam == pytest.approx(-3.0)

    def test_bound_active_optimum(self):
        n = 4
        target = np.array([1.4, 0.3, 0.2, -0.3])
        con = LinearConstraint(np.ones(n), 1.6)
        oracle = Quadratic(target)
        sch = Schedule(reinit_period=100, min_halvings=0, max_iters=100, kkt_tol=1e-10)
        rep = outer_loop(oracle, np.full(n, 0.4), con, box(n), sch)
        # projected analytic optimum: clip(target - theta) with sum 1.6
        expected = project_feasible(target, *box(n), np.ones(n), 1.6)
        np.testing.assert_allclose(rep.mu_opt, expected, atol=1e-6)
        assert rep.mu_opt[0] == 1.0 and rep.mu_opt[3] == 0.0

    def test_non_descent_raises(self):
        n = 3
        mu = np.full(n, 0.5)
        with pytest.raises(StepFailure):
            constrained_step(lambda x: 0.0, mu, 0.0, np.zeros(n), LinearConstraint(np.ones(n), 1.5),
                             box(n), np.eye(n))

    def test_step_stays_feasible(self, rng):
        n = 5
        con = LinearConstraint(np.ones(n), 2.5)
        oracle = Quadratic(rng.uniform(-1, 2, n))
        mu = np.full(n, 0.5)
        res = constrained_step(oracle.value, mu, oracle.value(mu), oracle.gradient(mu), con,
                               box(n), np.eye(n) * 2)
        assert np.all(res.mu >= 0) and np.all(res.mu <= 1)
        assert abs(con.value(res.mu)) <= 1e-8
        assert res.f < oracle.value(mu)


@given(st.integers(0, 2**32 - 1))
def test_damped_bfgs_stays_positive_definite(seed):
    r = np.random.default_rng(seed)
    n = 5
    H = np.eye(n)
    for k in range(10):
        H = damped_bfgs(H, r.standard_normal(n), r.standard_normal(n), rescale=(k == 0))
        assert np.min(np.linalg.eigvalsh(H)) > 0
        np.testing.assert_array_equal(H, H.T)


class TestOuterLoop:
    def test_zero_budget(self):
        rep = outer_loop(Quadratic(np.full(3, 0.2)), np.full(3, 0.5), LinearConstraint(np.ones(3), 1.5),
                         box(3), Schedule(max_iters=0))
        assert rep.iterations == 0 and rep.reason == "budget"

    def test_period_three_schedule(self):
        n = 6
        oracle = Rosenbrock()
        con = LinearConstraint(np.ones(n), 0.6)
        sch = Schedule(reinit_period=3, min_halvings=2, eps_r0=0.1, max_iters=60)
        rep = outer_loop(oracle, np.linspace(0.0, 0.2, n), con, box(n), sch)
        trace = rep.eps_trace
        assert trace[0] == (3, 0.05, "period")
        assert trace[1] == (6, 0.025, "period")
        prev = 0
        for i, (it, eps, cause) in enumerate(trace):
            assert eps == 0.1 * 0.5 ** (i + 1)
            if cause == "period":
                assert it - prev == 3
            prev = it
        assert rep.halvings == len(trace)

    def test_eps_handed_to_oracle(self):
        n = 6
        oracle = Quadratic(np.linspace(0.1, 0.9, n), diag=np.geomspace(1, 30, n))
        sch = Schedule(reinit_period=2, min_halvings=3, eps_r0=0.4, max_iters=40)
        rep = outer_loop(oracle, np.full(n, 0.5), LinearConstraint(np.ones(n), 3.0), box(n), sch)
        assert oracle.eps_log == [0.4 * 0.5**k for k in range(rep.halvings + 1)]
        assert rep.halvings >= 3

    def test_best_objective_monotone_across_boundaries(self):
        n = 6
        oracle = Quadratic(np.linspace(0.1, 0.9, n), diag=np.geomspace(1, 30, n))
        sch = Schedule(reinit_period=2, min_halvings=4, max_iters=40)
        outer_loop(oracle, np.full(n, 0.5), LinearConstraint(np.ones(n), 3.0), box(n), sch)
        values = [v for _, v in oracle.reinits]
        assert len(values) >= 4
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_converged_requires_halvings(self):
        n = 3
        target = np.array([0.2, 0.3, 0.5])
        oracle = Quadratic(target)
        sch = Schedule(reinit_period=50, min_halvings=2, kkt_tol=1e-9)
        rep = outer_loop(oracle, target, LinearConstraint(np.ones(n), 1.0), box(n), sch)
        assert rep.reason == "converged"
        assert rep.halvings == 2
        assert [c for _, _, c in rep.eps_trace] == ["converged", "converged"]
        assert rep.C_rel == pytest.approx(1.0)
