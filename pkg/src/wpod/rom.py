"""POD-Galerkin reduced solver, residual acceptance and reduced adjoint."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateBasisError, EmptyDataError, InputError
from .hdm import (
    ChainProblem,
    HdmSolution,
    Operators,
    _contract,
    assemble,
    e_norms,
    objective,
    objective_weights,
    residuals,
)


@dataclass
class RomSolution:
    mu: np.ndarray
    phi: np.ndarray
    reduced: np.ndarray
    residual_norms: np.ndarray
    J: float
    wall_time: float
    a0: np.ndarray
    accepted: bool | None = None

    @property
    def trajectory(self) -> np.ndarray:
        return self.phi @ self.reduced

    def residual_metric(self, n_x: int | None = None) -> float:
        n_x = self.phi.shape[0] if n_x is None else n_x
        return float(self.residual_norms.max() / n_x)


def _test_basis(problem: ChainProblem, phi):
    return problem.E @ phi


def _reduced_system(problem: ChainProblem, ops: Operators, phi):
    h = 0.5 * problem.dt
    AP = ops.A @ phi
    psi = _test_basis(problem, phi)
    lhs = psi.T @ (phi - h * AP)
    rhs = psi.T @ (phi + h * AP)
    forcing = problem.dt * psi.T @ ops.b
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            lu = sla.lu_factor(lhs, check_finite=True)
    except (ValueError, np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
        raise DegenerateBasisError("reduced operator is not factorizable") from exc
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= 1e-14 * max(diag.max(), 1.0):
        raise DegenerateBasisError("reduced operator is singular")
    return lu, rhs, forcing


def solve_rom(problem: ChainProblem, mu, phi, z0=None) -> RomSolution:
    """Galerkin-projected midpoint recursion in the span of `phi`.

    The test space is ``E phi``, so the step residual is E-orthogonal to the
    basis and ``phi`` is expected to be E-orthonormal.
    """
    t0 = time.perf_counter()
    mu = problem.check(mu)
    phi = np.asarray(phi, float)
    if phi.ndim != 2 or phi.shape[0] != problem.n_x or phi.shape[1] < 1:
        raise InputError(f"basis must be {problem.n_x} x n_r with n_r >= 1, got {phi.shape}")
    ops = assemble(problem, mu)
    lu, rhs, forcing = _reduced_system(problem, ops, phi)
    a0 = np.zeros(phi.shape[1]) if z0 is None else phi.T @ (problem.E @ z0)
    a = a0
    R = np.empty((phi.shape[1], problem.n_t))
    for k in range(problem.n_t):
        a = sla.lu_solve(lu, rhs @ a + forcing, check_finite=False)
        R[:, k] = a
    Z = phi @ R
    z_start = None if z0 is None else phi @ a0
    res = e_norms(problem.E, residuals(problem, ops, Z, z_start))
    J = objective(Z, problem.force, problem.dt, z_start)
    return RomSolution(mu.copy(), phi, R, res, J, time.perf_counter() - t0, a0)


def residual_acceptance(rom: RomSolution, eps_r: float, n_x: int) -> bool:
    """Accept iff ``max_k ||r^k||_E / n_x <= eps_r``."""
    if rom.residual_norms.size == 0:
        raise EmptyDataError("no residual norms recorded")
    # multiply rather than divide so the boundary stays inclusive in floating point
    return bool(rom.residual_norms.max() <= eps_r * n_x)


def rom_adjoint_gradient(problem: ChainProblem, mu, phi, rom: RomSolution) -> np.ndarray:
    """``dJ/dmu`` of the reduced model with the basis held fixed."""
    mu = problem.check(mu)
    ops = assemble(problem, mu)
    lu, rhs, _ = _reduced_system(problem, ops, phi)
    G = phi.T @ objective_weights(problem)
    n_t = problem.n_t
    lam = np.zeros(phi.shape[1])
    Lam = np.empty((phi.shape[1], n_t))
    for k in range(n_t - 1, -1, -1):
        b = G[:, k] + (rhs.T @ lam if k < n_t - 1 else 0.0)
        lam = sla.lu_solve(lu, b, trans=1, check_finite=False)
        Lam[:, k] = lam
    z_start = None if np.all(rom.a0 == 0) else phi @ rom.a0
    return _contract(problem, mu, _test_basis(problem, phi) @ Lam, phi @ rom.reduced, z_start)


def relative_error(hdm, rom, time_weights, E) -> float:
    """Time-weighted E-norm error of `rom` relative to `hdm`.

    Both arguments may be solutions or raw ``n_x x n_t`` trajectories.
    """
    Y = hdm.trajectory if hasattr(hdm, "trajectory") else np.asarray(hdm, float)
    Yr = rom.trajectory if hasattr(rom, "trajectory") else np.asarray(rom, float)
    if Y.shape != Yr.shape:
        raise InputError(f"trajectory shapes differ: {Y.shape} vs {Yr.shape}")
    w = np.asarray(time_weights, float)
    D = Y - Yr
    num = np.sum(w * np.einsum("ik,ik->k", D, E @ D))
    den = np.sum(w * np.einsum("ik,ik->k", Y, E @ Y))
    if not den > 0:
        raise InputError("reference trajectory has zero norm; relative error undefined")
    return float(np.sqrt(max(num, 0.0) / den))
