"""Thin truncated SVD primitives.

Three operations are provided:

* :func:`truncated_svd` -- direct thin SVD with an absolute singular value
  threshold.
* :func:`incremental_append` -- update the SVD of ``X`` to the SVD of
  ``[X Y]`` from the factors of ``X`` and ``Y`` (Brand-style update with an
  orthonormality correction loop).
* :func:`weighted_svd` -- SVD of ``X @ diag(w)`` from the factors of ``X``,
  at a cost independent of the row count apart from one final product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import EmptyResultError, InputError, NumericalDegeneracyError

DEFAULT_EPS_SVD = 1e-8
DEFAULT_EPS_ORTH = 1e-2
MAX_CORRECTIONS = 10


def _thin_svd(M):
    # divide-and-conquer is faster but occasionally fails to converge
    try:
        return sla.svd(M, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        return sla.svd(M, full_matrices=False, lapack_driver="gesvd")


@dataclass(frozen=True)
class TruncatedSvd:
    """Thin SVD ``M ~= U diag(s) V^T`` with ``s`` strictly positive.

    Attributes
    ----------
    U : ndarray (n_rows, r)
    s : ndarray (r,)
        Non-increasing, all entries above the truncation threshold.
    V : ndarray (n_cols, r)
    n_corrections : int
        Number of orthonormality-correction iterations run while building
        this factorization (only set by :func:`incremental_append`).
    """

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    n_corrections: int = 0

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.T

    def orthonormality_error(self) -> float:
        """Max absolute entry of ``U^T U - I``."""
        if self.rank == 0:
            return 0.0
        G = self.U.T @ self.U
        return float(np.max(np.abs(G - np.eye(self.rank))))

    @classmethod
    def empty(cls, n_rows: int, n_cols: int = 0) -> "TruncatedSvd":
        return cls(np.zeros((n_rows, 0)), np.zeros(0), np.zeros((n_cols, 0)))


def _truncate(U, s, V, eps_svd, n_corrections=0):
    keep = s > eps_svd
    return TruncatedSvd(
        np.ascontiguousarray(U[:, keep]),
        np.ascontiguousarray(s[keep]),
        np.ascontiguousarray(V[:, keep]),
        n_corrections,
    )


def truncated_svd(M, eps_svd: float = DEFAULT_EPS_SVD) -> TruncatedSvd:
    """Thin SVD of `M`, dropping singular values ``<= eps_svd``.

    Parameters
    ----------
    M : array_like (n, m)
    eps_svd : float
        Absolute truncation threshold.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InputError(f"expected a 2-d matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError("matrix contains non-finite entries")
    if eps_svd < 0:
        raise InputError("eps_svd must be non-negative")
    if M.size == 0:
        return TruncatedSvd.empty(M.shape[0], M.shape[1])
    U, s, Vt = _thin_svd(M)
    return _truncate(U, s, Vt.T, eps_svd)


def _diag_deviation(U) -> float:
    if U.shape[1] == 0:
        return 0.0
    d = np.einsum("ij,ij->j", U, U)
    return float(max(d.max() - 1.0, 1.0 - d.min()))


def incremental_append(
    current: TruncatedSvd,
    new_block_svd: TruncatedSvd,
    raw_columns,
    eps_orth: float = DEFAULT_EPS_ORTH,
    eps_svd: float = DEFAULT_EPS_SVD,
    max_corrections: int = MAX_CORRECTIONS,
) -> TruncatedSvd:
    """Truncated SVD of ``[X Y]`` from the SVDs of ``X`` and ``Y``.

    Parameters
    ----------
    current : TruncatedSvd
        Factorization of ``X`` (may have rank 0).
    new_block_svd : TruncatedSvd
        Factorization of the appended block ``Y``.
    raw_columns : array_like (n, m_X + m_Y)
        The explicit matrix ``[X Y]``; only read by the correction loop.
    eps_orth : float
        Tolerance on ``|diag(U^T U) - 1|`` that triggers the correction loop.
    eps_svd : float
        Absolute truncation threshold applied to the result.
    max_corrections : int
        Iteration cap for the correction loop.

    Raises
    ------
    InputError
        On row or column count mismatch.
    NumericalDegeneracyError
        If the correction loop does not restore orthonormality within
        `max_corrections` iterations.
    """
    n = current.U.shape[0]
    if new_block_svd.U.shape[0] != n:
        raise InputError(
            f"row mismatch: current has {n} rows, new block has {new_block_svd.U.shape[0]}"
        )
    raw_columns = np.asarray(raw_columns, dtype=float)
    m_x, m_y = current.V.shape[0], new_block_svd.V.shape[0]
    if raw_columns.shape != (n, m_x + m_y):
        raise InputError(
            f"raw_columns has shape {raw_columns.shape}, expected {(n, m_x + m_y)}"
        )

    Ux, sx, Vx = current.U, current.s, current.V
    Uy, sy, Vy = new_block_svd.U, new_block_svd.s, new_block_svd.V
    rx, ry = sx.shape[0], sy.shape[0]

    if ry == 0:
        V = np.zeros((m_x + m_y, rx))
        V[:m_x] = Vx
        U, s = Ux, sx
    else:
        C = Ux.T @ Uy
        Uy_perp = Uy - Ux @ C
        # a second projection pass keeps Q orthogonal to Ux when the
        # residual is small; its coefficients fold back into C and R exactly
        Q, R = np.linalg.qr(Uy_perp)
        D = Ux.T @ Q
        Q, R2 = np.linalg.qr(Q - Ux @ D)
        C = C + D @ R
        R = R2 @ R
        G = np.zeros((rx + ry, rx + ry))
        G[:rx, :rx] = np.diag(sx)
        G[:rx, rx:] = C * sy
        G[rx:, rx:] = R * sy
        Ug, s, Vgt = _thin_svd(G)
        U = np.hstack([Ux, Q]) @ Ug
        V = np.zeros((m_x + m_y, rx + ry))
        V[:m_x, :rx] = Vx
        V[m_x:, rx:] = Vy
        V = V @ Vgt.T
        keep = s > eps_svd
        U, s, V = U[:, keep], s[keep], V[:, keep]

    n_corr = 0
    while _diag_deviation(U) > eps_orth:
        if n_corr >= max_corrections:
            raise NumericalDegeneracyError(
                f"orthonormality correction did not converge in {max_corrections} iterations"
            )
        Qt, _ = np.linalg.qr(raw_columns @ V)
        Uh, s, Vht = _thin_svd(Qt.T @ raw_columns)
        U = Qt @ Uh
        V = Vht.T
        n_corr += 1

    return _truncate(U, s, V, eps_svd, n_corr)


def weighted_svd(
    current: TruncatedSvd,
    weight_sqrt_diag,
    eps_svd: float = DEFAULT_EPS_SVD,
) -> TruncatedSvd:
    """SVD of ``X @ diag(w)`` restricted to the columns where ``w != 0``.

    The right singular vectors of the result are indexed by the nonzero
    columns only, in their original order.
    """
    w = np.asarray(weight_sqrt_diag, dtype=float)
    if w.ndim != 1 or w.shape[0] != current.V.shape[0]:
        raise InputError(
            f"expected {current.V.shape[0]} column weights, got shape {w.shape}"
        )
    if not np.all(np.isfinite(w)):
        raise InputError("weights must be finite")
    if np.any(w < 0):
        raise InputError("weights must be non-negative")
    nz = np.flatnonzero(w)
    if nz.size == 0:
        raise EmptyResultError("all weights are zero")
    D = (current.s[:, None] * current.V[nz].T) * w[nz]
    if D.shape[0] == 0:
        return TruncatedSvd.empty(current.U.shape[0], nz.size)
    Ud, s, Vdt = _thin_svd(D)
    keep = s > eps_svd
    return TruncatedSvd(current.U @ Ud[:, keep], s[keep], Vdt.T[:, keep])


def principal_angles(A, B) -> np.ndarray:
    """Principal angles (radians) between the column spaces of A and B."""
    return sla.subspace_angles(A, B)
