"""Quasi-Newton SQP for box bounds plus one linear equality constraint.

Each major iteration solves the equality-constrained QP on the free
variables in closed form (bordered KKT system), releases bound constraints
whose multipliers have the wrong sign, and searches along the projection
of the step onto ``{lb <= x <= ub, a^T x = b}``. The Hessian model is a
damped BFGS matrix.

:func:`outer_loop` wraps this in segments of ``reinit_period`` iterations.
At every segment boundary it restarts from the best design, resets the
Hessian, halves the residual tolerance ``eps_r`` handed to the evaluation
oracle, and asks the oracle to make sure the best design is backed by a
full-order snapshot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .errors import InputError, NumericalDegeneracyError

log = logging.getLogger(__name__)

ARMIJO = 1e-4
BACKTRACK = 0.5
MAX_TRIALS = 30
KKT_TOL = 1e-6
FEAS_TOL = 1e-8


class StepFailure(NumericalDegeneracyError):
    """No descent step could be produced from the current model."""


@dataclass
class LinearConstraint:
    """``a^T x - b = 0``."""

    a: np.ndarray
    b: float

    def value(self, x) -> float:
        return float(self.a @ x - self.b)


def project_feasible(y, lb, ub, a, b) -> np.ndarray:
    """Euclidean projection of `y` onto ``{lb <= x <= ub, a^T x = b}``.

    The projection has the form ``clip(y - theta a, lb, ub)`` for a scalar
    ``theta`` found by bracketing the monotone function ``a^T x(theta) - b``.
    """
    y = np.asarray(y, float)
    a = np.asarray(a, float)

    def resid(theta):
        return float(a @ np.clip(y - theta * a, lb, ub) - b)

    lo_val = float(a @ np.where(a > 0, lb, ub))
    hi_val = float(a @ np.where(a > 0, ub, lb))
    if b < lo_val - FEAS_TOL * max(1.0, abs(b)) or b > hi_val + FEAS_TOL * max(1.0, abs(b)):
        raise InputError("equality constraint cannot be met inside the bounds")
    r0 = resid(0.0)
    if r0 == 0.0:
        return np.clip(y, lb, ub)
    step = max(1.0, float(np.max(np.abs(y)))) / max(float(a @ a), 1e-300)
    lo, hi = (0.0, step) if r0 > 0 else (-step, 0.0)
    while resid(lo) < 0:
        lo -= 2 * (hi - lo)
    while resid(hi) > 0:
        hi += 2 * (hi - lo)
    theta = brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    x = np.clip(y - theta * a, lb, ub)
    # one Newton-like polish on the free set
    free = (x > lb) & (x < ub)
    if free.any():
        x[free] -= resid(theta) * a[free] / (a[free] @ a[free])
        x = np.clip(x, lb, ub)
    return x


def kkt_residual(mu, grad, constraint: LinearConstraint, bounds) -> float:
    """Projected-gradient stationarity measure ``||mu - P(mu - grad)||_inf``.

    The projection is onto the bounds intersected with the hyperplane through
    `mu`; the measure is zero exactly at KKT points.
    """
    lb, ub = bounds
    target = float(constraint.a @ mu)
    p = project_feasible(np.asarray(mu) - grad, lb, ub, constraint.a, target)
    return float(np.max(np.abs(mu - p)))


def qp_direction(mu, grad, eq_value, eq_grad, bounds, hessian, tol=1e-12):
    """Closed-form step of the equality-constrained QP with an active bound set.

    Solves ``min g^T d + 1/2 d^T H d`` s.t. ``a^T d = -c`` with the variables
    in the active set pinned at their bounds. Bounds whose multiplier has
    the wrong sign are released one at a time.

    Returns
    -------
    d : ndarray
    multiplier : float
        Equality multiplier (sign convention ``g + H d + lam a = z``).
    """
    mu = np.asarray(mu, float)
    g = np.asarray(grad, float)
    a = np.asarray(eq_grad, float)
    lb, ub = bounds
    H = np.asarray(hessian, float)
    at_lb = mu <= lb + tol
    at_ub = mu >= ub - tol
    fixed = at_lb | at_ub
    n = mu.shape[0]
    lam = 0.0
    d = np.zeros(n)
    for _ in range(n + 1):
        free = ~fixed
        d = np.zeros(n)
        nf = int(free.sum())
        if nf == 0:
            break
        aF = a[free]
        if np.allclose(aF, 0.0):
            d[free] = -sla.solve(H[np.ix_(free, free)], g[free], assume_a="pos")
            lam = 0.0
        else:
            KKT = np.zeros((nf + 1, nf + 1))
            KKT[:nf, :nf] = H[np.ix_(free, free)]
            KKT[:nf, nf] = aF
            KKT[nf, :nf] = aF
            rhs = np.concatenate([-g[free], [-eq_value]])
            sol = sla.solve(KKT, rhs)
            d[free] = sol[:nf]
            lam = float(sol[nf])
        z = g + H @ d + lam * a
        wrong = np.zeros(n)
        wrong[fixed & at_lb] = np.maximum(-z[fixed & at_lb], 0.0)
        wrong[fixed & at_ub] = np.maximum(z[fixed & at_ub], 0.0)
        if wrong.max() <= 1e-12 * max(1.0, np.abs(g).max()):
            break
        fixed[int(np.argmax(wrong))] = False
    return d, lam


def damped_bfgs(H, s, y, rescale=False):
    """Powell-damped BFGS update of the Hessian model.

    With `rescale`, `H` is first replaced by ``(y^T y / s^T y) I``
    (Shanno-Phua scaling, used on the first update after a reset).
    """
    sy0 = float(s @ y)
    if rescale and sy0 > 0:
        H = (float(y @ y) / sy0) * np.eye(H.shape[0])
    Hs = H @ s
    sHs = float(s @ Hs)
    sy = float(s @ y)
    if sHs <= 0:
        return H
    if sy < 0.2 * sHs:
        theta = 0.8 * sHs / (sHs - sy)
        y = theta * y + (1 - theta) * Hs
        sy = float(s @ y)
    if sy <= 1e-300:
        return H
    H = H - np.outer(Hs, Hs) / sHs + np.outer(y, y) / sy
    return 0.5 * (H + H.T)


def initial_hessian(grad, bounds) -> np.ndarray:
    """Scaled identity so that the first step has length ~10% of the box."""
    lb, ub = bounds
    width = float(np.mean(ub - lb))
    scale = max(float(np.linalg.norm(grad)), 1e-12) / (0.1 * width)
    return scale * np.eye(np.asarray(grad).shape[0])


@dataclass
class StepResult:
    mu: np.ndarray
    f: float
    alpha: float
    multiplier: float
    n_trials: int


def constrained_step(fun, mu, f, grad, constraint: LinearConstraint, bounds, hessian,
                     penalty: float = 10.0) -> StepResult:
    """One SQP step with backtracking on ``f + penalty |c|``.

    Parameters
    ----------
    fun : callable
        Objective, evaluated at trial points only.
    mu, f, grad : current point, value and gradient.

    Raises
    ------
    StepFailure
        If the QP direction is not a descent direction or the line search
        exhausts its trials.
    """
    lb, ub = bounds
    c = constraint.value(mu)
    d, lam = qp_direction(mu, grad, c, constraint.a, bounds, hessian)
    penalty = max(penalty, 2.0 * abs(lam))
    merit0 = f + penalty * abs(c)
    alpha = 1.0
    for trial in range(1, MAX_TRIALS + 1):
        x = project_feasible(mu + alpha * d, lb, ub, constraint.a, constraint.b)
        s = x - mu
        slope = float(grad @ s) - penalty * abs(c)
        if not slope < 0:
            if trial == 1 and np.max(np.abs(s)) <= 1e-15:
                raise StepFailure("zero step")
            if trial == 1:
                raise StepFailure("QP step is not a descent direction")
        fx = fun(x)
        if fx + penalty * abs(constraint.value(x)) <= merit0 + ARMIJO * slope:
            return StepResult(x, fx, alpha, lam, trial)
        alpha *= BACKTRACK
    raise StepFailure(f"line search failed after {MAX_TRIALS} trials")


@dataclass
class Schedule:
    reinit_period: int = 25
    min_halvings: int = 2
    eps_r0: float = 0.1
    max_iters: int = 500
    kkt_tol: float = KKT_TOL
    max_stalls: int = 10


@dataclass
class OptimizerState:
    mu: np.ndarray
    f: float
    grad: np.ndarray
    best_mu: np.ndarray
    best_f: float
    iteration: int = 0
    segment_iteration: int = 0
    eps_r: float = 0.1
    halvings: int = 0
    hessian: np.ndarray | None = None


@dataclass
class OptimizationReport:
    mu_opt: np.ndarray
    J_opt: float
    J_init: float
    iterations: int
    halvings: int
    eps_r: float
    kkt: float
    reason: str
    eps_trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    J_opt_verified: float | None = None

    @property
    def C_rel(self) -> float:
        return self.J_opt / self.J_init

    @property
    def C_rel_verified(self) -> float | None:
        """Ratio using an independent full-order evaluation of the returned design."""
        return None if self.J_opt_verified is None else self.J_opt_verified / self.J_init


class Oracle:
    """Interface expected by :func:`outer_loop`.

    ``value`` and ``gradient`` return the unscaled objective and gradient.
    ``set_eps_r`` receives the current residual tolerance and ``reinit``
    is called with the best design at each segment boundary.
    """

    def value(self, mu) -> float:
        raise NotImplementedError

    def gradient(self, mu) -> np.ndarray:
        raise NotImplementedError

    def set_eps_r(self, eps_r: float) -> None:
        pass

    def reinit(self, mu) -> None:
        pass


def outer_loop(oracle: Oracle, mu0, constraint: LinearConstraint, bounds,
               schedule: Schedule | None = None) -> OptimizationReport:
    """Segmented SQP run with restarts and ``eps_r`` halving.

    The objective is scaled by ``|J(mu0)|`` internally, so ``kkt_tol`` is a
    tolerance on the relative objective.

    A boundary occurs after ``reinit_period`` iterations in a segment, when
    the KKT test passes before ``min_halvings`` halvings, or when no descent
    step is found. Each boundary is logged in ``eps_trace`` as
    ``(iteration, eps_r, cause)``. The run stops as ``"stalled"`` after more
    than ``max_stalls`` consecutive boundaries without an accepted step.
    """
    sch = schedule or Schedule()
    lb, ub = bounds
    mu0 = project_feasible(np.asarray(mu0, float), lb, ub, constraint.a, constraint.b)
    oracle.set_eps_r(sch.eps_r0)
    J0 = float(oracle.value(mu0))
    scale = abs(J0) if J0 != 0 else 1.0

    def fun(x):
        return float(oracle.value(x)) / scale

    def jac(x):
        return np.asarray(oracle.gradient(x), float) / scale

    st = OptimizerState(mu0, J0 / scale, jac(mu0), mu0.copy(), J0 / scale, eps_r=sch.eps_r0)
    history = [(0, st.f * scale)]
    eps_trace = []
    kkt = math.inf
    stalls = 0
    while True:
        kkt = kkt_residual(st.mu, st.grad, constraint, bounds)
        if kkt <= sch.kkt_tol and st.halvings >= sch.min_halvings:
            reason = "converged"
            break
        if st.iteration >= sch.max_iters:
            reason = "budget"
            break
        if stalls > sch.max_stalls:
            reason = "stalled"
            break
        if st.segment_iteration >= sch.reinit_period:
            cause = "period"
        elif kkt <= sch.kkt_tol:
            cause = "converged"
        else:
            cause = None
        if cause is None:
            fresh = st.hessian is None
            if fresh:
                st.hessian = initial_hessian(st.grad, bounds)
            try:
                res = constrained_step(fun, st.mu, st.f, st.grad, constraint, bounds, st.hessian)
            except StepFailure as exc:
                log.debug("step failure at iteration %d: %s", st.iteration, exc)
                cause = "step-failure"
            else:
                g_new = jac(res.mu)
                st.hessian = damped_bfgs(st.hessian, res.mu - st.mu, g_new - st.grad, fresh)
                st.mu, st.f, st.grad = res.mu, res.f, g_new
                st.iteration += 1
                st.segment_iteration += 1
                stalls = 0
                history.append((st.iteration, st.f * scale))
                if st.f < st.best_f:
                    st.best_mu, st.best_f = st.mu.copy(), st.f
                continue
        # segment boundary
        stalls += 1
        st.halvings += 1
        st.eps_r = sch.eps_r0 * 0.5**st.halvings
        oracle.set_eps_r(st.eps_r)
        oracle.reinit(st.best_mu)
        st.mu = st.best_mu.copy()
        st.f = fun(st.mu)
        st.best_f = st.f
        st.grad = jac(st.mu)
        st.hessian = None
        st.segment_iteration = 0
        eps_trace.append((st.iteration, st.eps_r, cause))
        log.info("re-initialized at iteration %d, eps_r=%.3g", st.iteration, st.eps_r)
    return OptimizationReport(
        st.best_mu, st.best_f * scale, J0, st.iteration, st.halvings, st.eps_r, kkt, reason,
        eps_trace, history,
    )
