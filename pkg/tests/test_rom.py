import numpy as np
import pytest
from hypothesis import given, strategies as st

from wpod.basis import build_basis
from wpod.errors import DegenerateBasisError, EmptyDataError, InputError
from wpod.hdm import ChainProblem, adjoint_gradient, assemble, residuals, solve_hdm
from wpod.rom import (
    RomSolution,
    relative_error,
    residual_acceptance,
    rom_adjoint_gradient,
    solve_rom,
)
from wpod.snapshots import SnapshotStore, inner_product_factor, time_weights
from wpod.weighting import uniform_weights

from conftest import rel


def e_orthonormal(rng, E, n_r):
    F = inner_product_factor(E)
    Q, _ = np.linalg.qr(rng.standard_normal((E.shape[0], n_r)))
    return np.linalg.solve(F, Q)


def own_store(problem, mu):
    store = SnapshotStore(problem.n_x, problem.n_t, problem.dt, problem.E)
    store.append_snapshot(mu, solve_hdm(problem, mu).trajectory)
    return store


def fake_rom(norms):
    norms = np.asarray(norms, float)
    return RomSolution(np.zeros(1), np.eye(2), np.zeros((2, norms.size)), norms, 0.0, 0.0,
                       np.zeros(2))


class TestSolveRom:
    def test_full_basis_identity_norm(self):
        p = ChainProblem(n_e=6, T=3.0, norm="identity")
        mu = np.linspace(0.05, 0.15, 6)
        rom = solve_rom(p, mu, np.eye(p.n_x))
        hdm = solve_hdm(p, mu)
        assert rel(rom.trajectory, hdm.trajectory) <= 1e-10
        assert abs(rom.J - hdm.J) <= 1e-10 * abs(hdm.J)

    def test_full_basis_energy_norm(self, small_problem):
        p = small_problem
        phi = np.linalg.inv(inner_product_factor(p.E))
        mu = p.mu_init
        assert rel(solve_rom(p, mu, phi).trajectory, solve_hdm(p, mu).trajectory) <= 1e-10

    def test_self_projection(self):
        # fewer steps than states: the trajectory is genuinely rank deficient
        p = ChainProblem(n_e=6, T=0.5)
        mu = np.linspace(0.04, 0.18, p.n_p)
        store = own_store(p, mu)
        rank = store.running_svd.rank
        b = build_basis(store, uniform_weights(1), rank)
        assert solve_rom(p, mu, b.phi).residual_metric(p.n_x) <= 1e-10

    def test_monotone_enrichment(self, small_problem):
        p = small_problem
        mu = np.linspace(0.04, 0.18, p.n_p)
        store = own_store(p, mu)
        rank = store.running_svd.rank
        metrics = [
            solve_rom(p, mu, build_basis(store, uniform_weights(1), n).phi).residual_metric(p.n_x)
            for n in range(2, rank + 1, 2)
        ]
        assert all(b <= a * (1 + 1e-8) for a, b in zip(metrics, metrics[1:]))

    def test_lifted_trajectory_in_span(self, small_problem, rng):
        p = small_problem
        phi = e_orthonormal(rng, p.E, 1)
        Y = solve_rom(p, p.mu_init, phi).trajectory
        P = np.eye(p.n_x) - phi @ phi.T @ p.E
        assert np.linalg.norm(P @ Y) <= 1e-12 * max(np.linalg.norm(Y), 1.0)

    def test_galerkin_consistency(self, small_problem, rng):
        p = small_problem
        mu = rng.uniform(0.05, 0.15, p.n_p)
        phi = e_orthonormal(rng, p.E, 5)
        rom = solve_rom(p, mu, phi)
        R = residuals(p, assemble(p, mu), rom.trajectory)
        proj = phi.T @ p.E @ R
        assert np.max(np.abs(proj)) <= 1e-10 * max(np.max(np.abs(p.E @ R)), 1.0)

    def test_rest_initial_state(self, small_problem, rng):
        rom = solve_rom(small_problem, small_problem.mu_init, e_orthonormal(rng, small_problem.E, 3))
        np.testing.assert_array_equal(rom.a0, 0.0)

    def test_degenerate_basis(self, small_problem):
        with pytest.raises(DegenerateBasisError):
            solve_rom(small_problem, small_problem.mu_init, np.zeros((small_problem.n_x, 2)))

    def test_bad_shape(self, small_problem):
        with pytest.raises(InputError):
            solve_rom(small_problem, small_problem.mu_init, np.eye(3))


class TestAcceptance:
    def test_zero_residual(self):
        assert residual_acceptance(fake_rom([0.0, 0.0]), 1e-12, 48)

    def test_boundary_is_inclusive(self):
        eps, n_x = 0.1, 48
        assert residual_acceptance(fake_rom([0.0, eps * n_x]), eps, n_x)

    def test_just_above_rejected(self):
        eps, n_x = 0.1, 48
        assert not residual_acceptance(fake_rom([1.01 * eps * n_x]), eps, n_x)

    def test_empty(self):
        with pytest.raises(EmptyDataError):
            residual_acceptance(fake_rom([]), 0.1, 2)

    @given(st.floats(1e-6, 1.0), st.floats(0.0, 0.999), st.floats(1.001, 2.0))
    def test_threshold_property(self, eps, below, above):
        assert residual_acceptance(fake_rom([below * eps * 10]), eps, 10)
        assert not residual_acceptance(fake_rom([above * eps * 10]), eps, 10)


class TestRomGradient:
    def test_exact_basis_matches_hdm(self, small_problem, rng):
        p = small_problem
        phi = np.linalg.inv(inner_product_factor(p.E))
        for _ in range(10):
            mu = rng.uniform(p.lower, p.upper, p.n_p)
            g_rom = rom_adjoint_gradient(p, mu, phi, solve_rom(p, mu, phi))
            assert rel(g_rom, adjoint_gradient(p, mu, solve_hdm(p, mu))) <= 1e-8

    def test_finite_difference_frozen_basis(self, small_problem, rng):
        p = small_problem
        mu = rng.uniform(0.05, 0.15, p.n_p)
        phi = e_orthonormal(rng, p.E, 4)
        g = rom_adjoint_gradient(p, mu, phi, solve_rom(p, mu, phi))
        fd = np.empty(p.n_p)
        for i in range(p.n_p):
            h = 1e-6 * (1 + abs(mu[i]))
            e = np.zeros(p.n_p)
            e[i] = h
            fd[i] = (solve_rom(p, mu + e, phi).J - solve_rom(p, mu - e, phi).J) / (2 * h)
        assert rel(g, fd) <= 1e-4

    def test_zero_forcing(self, rng):
        p = ChainProblem(n_e=4, load=0.0, T=1.0)
        phi = e_orthonormal(rng, p.E, 3)
        g = rom_adjoint_gradient(p, p.mu_init, phi, solve_rom(p, p.mu_init, phi))
        np.testing.assert_array_equal(g, 0.0)


class TestRelativeError:
    def test_identical(self, rng):
        Y = rng.standard_normal((4, 6))
        assert relative_error(Y, Y, np.ones(6), np.eye(4)) == 0.0

    def test_zero_rom(self, rng):
        Y = rng.standard_normal((4, 6))
        assert relative_error(Y, np.zeros_like(Y), time_weights(6, 0.1), np.eye(4)) == pytest.approx(1.0)

    def test_naive_sum(self, rng):
        n_x, n_t = 5, 7
        Y = rng.standard_normal((n_x, n_t))
        Yr = rng.standard_normal((n_x, n_t))
        E = np.diag(rng.uniform(1, 2, n_x))
        w = time_weights(n_t, 0.2)
        num = den = 0.0
        for k in range(n_t):
            d = Y[:, k] - Yr[:, k]
            num += w[k] * sum(E[i, i] * d[i] ** 2 for i in range(n_x))
            den += w[k] * sum(E[i, i] * Y[i, k] ** 2 for i in range(n_x))
        assert relative_error(Y, Yr, w, E) == pytest.approx(np.sqrt(num / den), rel=1e-12)

    def test_zero_reference(self):
        with pytest.raises(InputError):
            relative_error(np.zeros((2, 3)), np.ones((2, 3)), np.ones(3), np.eye(2))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            relative_error(np.ones((2, 3)), np.ones((2, 4)), np.ones(3), np.eye(2))
