"""Damped cantilever mass-spring chain with thickness design parameters.

Element ``i`` has thickness ``mu_i``; its spring stiffness is ``k0 mu_i^3``
and it contributes a lumped mass ``rho l mu_i``. Spring ``i`` connects mass
``i-1`` to mass ``i`` (mass 0 is the clamped wall). Rayleigh damping
``C = alpha M + beta K``. The first-order state is ``z = [u; v]`` and time
integration uses the implicit midpoint rule

    (I - dt/2 A) z^k = (I + dt/2 A) z^{k-1} + dt b.

The matrix ``I - dt/2 A`` does not depend on k, so one LU factorization per
design serves every time step, every sensitivity right-hand side, and the
adjoint sweep.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import InputError


@dataclass
class ChainProblem:
    """Problem definition; defaults give 24 elements, 48 states, 200 steps."""

    n_e: int = 24
    length: float = 1.0
    k0: float = 1e4
    rho: float = 1e2
    alpha: float = 0.01
    beta: float = 0.002
    load: float = -1.0
    mu0: float = 0.1
    lower: float = 0.02
    upper: float = 0.2
    dt: float = 0.1
    T: float = 20.0
    norm: str = "energy"
    E: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_e < 1:
            raise InputError("n_e must be positive")
        if not self.dt > 0 or not self.T > 0:
            raise InputError("dt and T must be positive")
        if self.E is None:
            if self.norm == "energy":
                K, M = self.stiffness(self.mu_init), self.mass(self.mu_init)
                Z = np.zeros_like(K)
                self.E = np.block([[K + M, Z], [Z, M]])
            elif self.norm == "identity":
                self.E = np.eye(self.n_x)
            else:
                raise InputError(f"unknown norm {self.norm!r}")
        self.E = np.asarray(self.E, float)

    @property
    def n_p(self) -> int:
        return self.n_e

    @property
    def n_x(self) -> int:
        return 2 * self.n_e

    @property
    def n_t(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def mu_init(self) -> np.ndarray:
        return np.full(self.n_e, self.mu0)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.full(self.n_e, self.lower), np.full(self.n_e, self.upper)

    @property
    def force(self) -> np.ndarray:
        return np.full(self.n_e, self.load)

    def check(self, mu) -> np.ndarray:
        mu = np.asarray(mu, float)
        if mu.shape != (self.n_e,):
            raise InputError(f"expected {self.n_e} parameters, got shape {mu.shape}")
        if np.any(mu < self.lower - 1e-12) or np.any(mu > self.upper + 1e-12):
            raise InputError("parameters outside bounds")
        return mu

    # -- element laws ----------------------------------------------------
    def spring_constants(self, mu):
        return self.k0 * np.asarray(mu, float) ** 3

    def stiffness(self, mu) -> np.ndarray:
        return _chain_stiffness(self.spring_constants(mu))

    def mass(self, mu) -> np.ndarray:
        return np.diag(self.rho * self.length * np.asarray(mu, float))

    def stiffness_derivative(self, mu, i) -> np.ndarray:
        dk = np.zeros(self.n_e)
        dk[i] = 3.0 * self.k0 * mu[i] ** 2
        return _chain_stiffness(dk)

    def mass_derivative(self, mu, i) -> np.ndarray:
        dm = np.zeros((self.n_e, self.n_e))
        dm[i, i] = self.rho * self.length
        return dm


def _chain_stiffness(k):
    n = k.shape[0]
    K = np.zeros((n, n))
    idx = np.arange(n)
    K[idx, idx] = k
    K[idx[:-1], idx[:-1]] += k[1:]
    K[idx[:-1], idx[1:]] = -k[1:]
    K[idx[1:], idx[:-1]] = -k[1:]
    return K


@dataclass
class Operators:
    """Assembled matrices for one design."""

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray


def assemble(problem: ChainProblem, mu) -> Operators:
    """Second-order matrices and the first-order system ``z' = A z + b``."""
    mu = problem.check(mu)
    K, M = problem.stiffness(mu), problem.mass(mu)
    C = problem.alpha * M + problem.beta * K
    n = problem.n_e
    minv = 1.0 / np.diag(M)
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -minv[:, None] * K
    A[n:, n:] = -minv[:, None] * C
    b = np.concatenate([np.zeros(n), minv * problem.force])
    return Operators(M, C, K, problem.force, A, b)


def operator_derivatives(problem: ChainProblem, mu):
    """``dA/dmu_i`` (shape n_p x n_x x n_x) and ``db/dmu_i`` (n_p x n_x)."""
    mu = np.asarray(mu, float)
    ops = assemble(problem, mu)
    n = problem.n_e
    minv = 1.0 / np.diag(ops.M)
    dA = np.zeros((n, 2 * n, 2 * n))
    db = np.zeros((n, 2 * n))
    minvK = minv[:, None] * ops.K
    minvC = minv[:, None] * ops.C
    for i in range(n):
        dK = problem.stiffness_derivative(mu, i)
        dm = problem.rho * problem.length
        dC = problem.alpha * problem.mass_derivative(mu, i) + problem.beta * dK
        # d(M^-1 X) = M^-1 dX - M^-1 dM M^-1 X, dM = dm e_i e_i^T
        dMK = minv[:, None] * dK
        dMK[i] -= dm * minv[i] * minvK[i]
        dMC = minv[:, None] * dC
        dMC[i] -= dm * minv[i] * minvC[i]
        dA[i, n:, :n] = -dMK
        dA[i, n:, n:] = -dMC
        db[i, n + i] = -dm * minv[i] ** 2 * problem.force[i]
    return dA, db


@dataclass
class HdmSolution:
    """Full-order trajectory ``[z^1 ... z^n_t]`` and derived quantities."""

    mu: np.ndarray
    trajectory: np.ndarray
    J: float
    residual_norms: np.ndarray
    wall_time: float
    z0: np.ndarray | None = None


class StepMatrices:
    """``I -/+ dt/2 A`` with the left matrix factorized once."""

    def __init__(self, ops: Operators, dt: float):
        n = ops.A.shape[0]
        self.dt = dt
        self.lhs = np.eye(n) - 0.5 * dt * ops.A
        self.rhs = np.eye(n) + 0.5 * dt * ops.A
        self.lu = sla.lu_factor(self.lhs)
        self.forcing = dt * ops.b

    def solve(self, y, trans=0):
        return sla.lu_solve(self.lu, y, trans=trans, check_finite=False)


def residuals(problem: ChainProblem, ops: Operators, trajectory, z0=None) -> np.ndarray:
    """Step residuals ``r^k`` (columns) of a trajectory ``[z^1 ... z^n_t]``."""
    Z = np.asarray(trajectory, float)
    prev = np.empty_like(Z)
    prev[:, 0] = 0.0 if z0 is None else z0
    prev[:, 1:] = Z[:, :-1]
    h = 0.5 * problem.dt
    return (Z - h * ops.A @ Z) - (prev + h * ops.A @ prev) - (problem.dt * ops.b)[:, None]


def e_norms(E, R) -> np.ndarray:
    """Column-wise ``sqrt(r^T E r)``."""
    return np.sqrt(np.maximum(np.einsum("ik,ik->k", R, E @ R), 0.0))


def solve_hdm(problem: ChainProblem, mu, z0=None, ops: Operators | None = None) -> HdmSolution:
    """Implicit-midpoint trajectory from rest (or from `z0`)."""
    t0 = time.perf_counter()
    mu = problem.check(mu)
    ops = assemble(problem, mu) if ops is None else ops
    steps = StepMatrices(ops, problem.dt)
    n_t = problem.n_t
    Z = np.empty((problem.n_x, n_t))
    z = np.zeros(problem.n_x) if z0 is None else np.asarray(z0, float).copy()
    for k in range(n_t):
        z = steps.solve(steps.rhs @ z + steps.forcing)
        Z[:, k] = z
    res = e_norms(problem.E, residuals(problem, ops, Z, z0))
    J = objective(Z, problem.force, problem.dt, z0)
    return HdmSolution(mu.copy(), Z, J, res, time.perf_counter() - t0, z0)


def objective(trajectory, f, dt, z0=None) -> float:
    """Trapezoid time integral of the compliance ``u^T f``; ``u^0`` from `z0` (rest)."""
    Z = np.asarray(trajectory, float)
    f = np.asarray(f, float)
    U = Z[: f.shape[0]]
    c = U.T @ f
    u0f = 0.0 if z0 is None else float(np.asarray(z0)[: f.shape[0]] @ f)
    return float(0.5 * dt * (u0f + c[-1]) + dt * c[:-1].sum())


def objective_weights(problem: ChainProblem) -> np.ndarray:
    """``dJ/dz^k`` stacked as columns (n_x x n_t)."""
    G = np.zeros((problem.n_x, problem.n_t))
    G[: problem.n_e, :] = problem.dt * problem.force[:, None]
    G[: problem.n_e, -1] *= 0.5
    return G


def state_sensitivities(problem: ChainProblem, mu, solution: HdmSolution) -> np.ndarray:
    """Direct-method tensor ``dz^k/dmu_i`` of shape (n_x, n_t, n_p)."""
    mu = problem.check(mu)
    ops = assemble(problem, mu)
    steps = StepMatrices(ops, problem.dt)
    dA, db = operator_derivatives(problem, mu)
    h = 0.5 * problem.dt
    Z = solution.trajectory
    z_prev = np.zeros(problem.n_x) if solution.z0 is None else solution.z0
    out = np.empty((problem.n_x, problem.n_t, problem.n_p))
    dz = np.zeros((problem.n_x, problem.n_p))
    dbT = problem.dt * db.T
    for k in range(problem.n_t):
        s = Z[:, k] + z_prev
        rhs = h * np.einsum("pij,j->ip", dA, s) + steps.rhs @ dz + dbT
        dz = steps.solve(rhs)
        out[:, k, :] = dz
        z_prev = Z[:, k]
    return out


def gradient_from_sensitivities(problem: ChainProblem, sens) -> np.ndarray:
    return np.einsum("xk,xkp->p", objective_weights(problem), sens)


def adjoint_gradient(problem: ChainProblem, mu, solution: HdmSolution) -> np.ndarray:
    """``dJ/dmu`` from one backward sweep of transposed step solves."""
    mu = problem.check(mu)
    ops = assemble(problem, mu)
    steps = StepMatrices(ops, problem.dt)
    G = objective_weights(problem)
    n_t = problem.n_t
    lam = np.zeros(problem.n_x)
    Lam = np.empty((problem.n_x, n_t))
    for k in range(n_t - 1, -1, -1):
        rhs = G[:, k] + (steps.rhs.T @ lam if k < n_t - 1 else 0.0)
        lam = steps.solve(rhs, trans=1)
        Lam[:, k] = lam
    return _contract(problem, mu, Lam, solution.trajectory, solution.z0)


def _contract(problem, mu, Lam, Z, z0):
    dA, db = operator_derivatives(problem, mu)
    prev = np.empty_like(Z)
    prev[:, 0] = 0.0 if z0 is None else z0
    prev[:, 1:] = Z[:, :-1]
    S = Z + prev
    outer = Lam @ S.T
    lam_sum = Lam.sum(axis=1)
    return 0.5 * problem.dt * np.einsum("pij,ij->p", dA, outer) + problem.dt * db @ lam_sum


def volume_constraint(mu, length: float = 1.0, mu0=None):
    """Volume change ``l sum(mu - mu0)`` and its (constant) gradient."""
    mu = np.asarray(mu, float)
    mu0 = np.zeros_like(mu) if mu0 is None else np.broadcast_to(np.asarray(mu0, float), mu.shape)
    return float(length * (mu.sum() - mu0.sum())), np.full(mu.shape, float(length))
