"""Reduced bases from the weighted snapshot SVD, with optional mode derivatives.

All SVD work happens in the coordinates ``x_bar = F x`` where ``F^T F = E``;
a basis ``Phi = F^{-1} U[:, :n_r]`` is then E-orthonormal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataError, InputError, RankError
from .snapshots import SnapshotStore, apply_factor_inverse
from .svd import TruncatedSvd, weighted_svd
from .weighting import DEFAULT_CUTOFF, WeightAssignment, cubic_weights, distance_profile

GAP_TOL = 1e-6
ZERO_COLUMN_TOL = 1e-12


class DegenerateSpectrumWarning(UserWarning):
    """A mode derivative was skipped because its singular value is not simple."""


@dataclass
class ReducedBasis:
    """E-orthonormal reduced basis.

    The first ``n_primal`` columns are POD modes of the weighted snapshot
    matrix; the remaining ``n_deriv`` columns are normalized mode derivatives
    (or replacement modes when a derivative was unusable).
    """

    phi: np.ndarray
    n_primal: int
    n_deriv: int = 0
    built_at: np.ndarray | None = None
    weights_used: WeightAssignment | None = None
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_replaced: int = 0

    @property
    def n_r(self) -> int:
        return self.phi.shape[1]


def column_weights(store: SnapshotStore, weights) -> np.ndarray:
    """Per-column entries of ``W^{1/2}``: each snapshot weight repeated n_t times."""
    w = weights.weights if isinstance(weights, WeightAssignment) else np.asarray(weights, float)
    if w.shape != (store.n_s,):
        raise InputError(f"expected {store.n_s} snapshot weights, got shape {w.shape}")
    return np.repeat(w, store.n_t)


def weighted_store_svd(store: SnapshotStore, weights) -> TruncatedSvd:
    """SVD of ``X W^{1/2}`` computed from the store's running factorization."""
    return weighted_svd(store.running_svd, column_weights(store, weights), store.eps_svd)


def build_basis(store: SnapshotStore, weights: WeightAssignment, n_r: int,
                mu_hat=None) -> ReducedBasis:
    """POD basis of the weighted snapshot matrix.

    Raises
    ------
    RankError
        If `n_r` exceeds the rank of the weighted matrix.
    """
    ws = weighted_store_svd(store, weights)
    if n_r < 1 or n_r > ws.rank:
        raise RankError(n_r, ws.rank)
    phi = apply_factor_inverse(store.F, ws.U[:, :n_r])
    return ReducedBasis(
        phi, n_r, 0,
        None if mu_hat is None else np.asarray(mu_hat, float),
        weights, ws.s,
    )


def directional_snapshot_derivatives(store: SnapshotStore, mu_hat, indices=None) -> np.ndarray:
    """Snapshot derivatives along ``mu_hat - mu_j``, stacked side by side.

    Block ``j`` is ``sum_i dA_j/dmu_i (mu_hat_i - mu_j,i)``, i.e. the
    derivative with the connecting segment scaled to unit length.
    Only snapshots with derivative data are included (or those in `indices`).
    """
    idx = store.derivative_indices() if indices is None else list(indices)
    if not idx:
        raise EmptyDataError("store holds no derivative snapshots")
    mu_hat = np.asarray(mu_hat, float)
    blocks = []
    for j in idx:
        if j not in store.deriv_blocks:
            raise EmptyDataError(f"snapshot {j} has no derivative data")
        blocks.append(store.deriv_blocks[j] @ (mu_hat - store.points[j]))
    return np.hstack(blocks)


def weighted_matrix_derivative(store: SnapshotStore, weights: WeightAssignment, mu_hat):
    """Derivative of the weighted snapshot matrix, active columns only.

    Returns ``(dX, active)`` where `active` lists the snapshot indices whose
    columns appear (in order) in `dX` and in the weighted SVD.
    """
    active = [int(j) for j in weights.active_set]
    if not active:
        raise EmptyDataError("no snapshot carries a nonzero weight")
    missing = [j for j in active if j not in store.deriv_blocks]
    if missing:
        raise EmptyDataError(f"active snapshots {missing} have no derivative data")
    dA = directional_snapshot_derivatives(store, mu_hat, active)
    sq = np.tile(np.sqrt(store.time_weights), len(active))
    w = np.repeat(weights.weights[active], store.n_t)
    dw = np.repeat(weights.dir_derivs[active], store.n_t)
    A = np.hstack([store.blocks[j] for j in active])
    dX = (store.F @ dA) * (sq * w) + (store.F @ A) * (sq * dw)
    return dX, active


def _simple(s, i, gap_tol):
    lo = i == len(s) - 1 or (s[i] - s[i + 1]) > gap_tol * s[i]
    hi = i == 0 or (s[i - 1] - s[i]) > gap_tol * s[i - 1]
    return lo and hi


def basis_derivatives(weighted: TruncatedSvd, dX, m: int, F=None, gap_tol: float = GAP_TOL):
    """Derivatives of the first `m` left singular vectors of ``X`` along ``dX``.

    Works in the method-of-snapshots space: with ``K = X^T X`` and eigenpair
    ``(sigma_i^2, a_i)``, the eigenvector derivative solves the bordered system

        [[K - lambda_i I, a_i], [a_i^T, 0]] [da_i; nu] = [-(dK - dlambda_i I) a_i; 0]

    and ``dphi_i = (dX a_i + X da_i)/s_i - dlambda_i/(2 s_i^2) X a_i / s_i``.

    The system is solved in the eigenbasis ``V`` of ``K``, where it is
    diagonal. The component of ``da_i`` in the null space of ``K`` is
    annihilated by ``X`` and so never enters ``dphi_i``.

    Parameters
    ----------
    weighted : TruncatedSvd
        Factorization of ``X`` (rows in F-coordinates).
    dX : ndarray, same shape as ``X``
    m : int
        Number of leading modes to differentiate.
    F : ndarray, optional
        When given, the result is mapped back through ``F^{-1}``.

    Returns
    -------
    dphi : ndarray (n, m)
        Columns of modes that were skipped are zero.
    valid : ndarray of bool (m,)
    """
    U, s, V = weighted.U, weighted.s, weighted.V
    dX = np.asarray(dX, float)
    if dX.shape != weighted.shape:
        raise InputError(f"dX has shape {dX.shape}, expected {weighted.shape}")
    if m > weighted.rank:
        raise RankError(m, weighted.rank)
    dXV = dX @ V
    P = U.T @ dXV
    dK = P.T * s + s[:, None] * P  # V^T dK V
    lam = s**2
    dphi = np.zeros((U.shape[0], m))
    valid = np.zeros(m, bool)
    for i in range(m):
        if not _simple(s, i, gap_tol):
            warnings.warn(
                f"singular value {i} is not separated from its neighbours; derivative skipped",
                DegenerateSpectrumWarning, stacklevel=2,
            )
            continue
        dlam = dK[i, i]
        gap = lam[i] - lam
        gap[i] = 1.0
        c = dK[:, i] / gap
        c[i] = 0.0
        dphi[:, i] = (dXV[:, i] + U @ (s * c)) / s[i] - dlam / (2 * lam[i]) * U[:, i]
        valid[i] = True
    if F is not None:
        dphi = apply_factor_inverse(F, dphi)
    return dphi, valid


def _orthonormalize_against(Q, v):
    for _ in range(2):
        v = v - Q @ (Q.T @ v)
    return v


def build_enhanced_basis(store: SnapshotStore, mu_hat, c: float = DEFAULT_CUTOFF, n_r: int = 2,
                         reorthonormalize: bool = True, weights: WeightAssignment | None = None,
                         gap_tol: float = GAP_TOL) -> ReducedBasis:
    """Weighted POD modes concatenated with their normalized derivatives.

    Weights are computed over the derivative-bearing snapshots only.
    ``ceil(n_r/2)`` primal modes are kept and the first ``floor(n_r/2)`` of
    them are differentiated. Unusable derivative columns (degenerate
    spectrum or numerically zero) are replaced by the next unused POD mode.
    """
    if n_r < 2:
        raise InputError("enhanced basis needs n_r >= 2")
    idx = store.derivative_indices()
    if not idx:
        raise EmptyDataError("store holds no derivative snapshots")
    mu_hat = np.asarray(mu_hat, float)
    if weights is None:
        part = np.zeros(store.n_s, bool)
        part[idx] = True
        weights = cubic_weights(distance_profile(store.points, mu_hat, c, part))
    n_primal = math.ceil(n_r / 2)
    n_deriv = n_r // 2
    ws = weighted_store_svd(store, weights)
    if n_primal > ws.rank:
        raise RankError(n_r, 2 * ws.rank)
    dX, _ = weighted_matrix_derivative(store, weights, mu_hat)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        dphi_bar, valid = basis_derivatives(ws, dX, n_deriv, None, gap_tol)

    cols = [ws.U[:, i] for i in range(n_primal)]
    next_mode = n_primal
    n_replaced = 0
    for i in range(n_deriv):
        v = dphi_bar[:, i]
        norm = np.linalg.norm(v)
        usable = valid[i] and norm > ZERO_COLUMN_TOL
        if usable:
            v = v / norm
            if reorthonormalize:
                w = _orthonormalize_against(np.column_stack(cols), v)
                wn = np.linalg.norm(w)
                usable = wn > 1e-10
                v = w / wn if usable else v
        if not usable:
            if next_mode >= ws.rank:
                raise RankError(n_r, len(cols))
            v = ws.U[:, next_mode]
            next_mode += 1
            n_replaced += 1
            if reorthonormalize:
                v = _orthonormalize_against(np.column_stack(cols), v)
                v = v / np.linalg.norm(v)
        cols.append(v)
    phi = apply_factor_inverse(store.F, np.column_stack(cols))
    return ReducedBasis(phi, n_primal, n_deriv, mu_hat, weights, ws.s, n_replaced)
