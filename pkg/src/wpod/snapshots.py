"""Snapshot storage and the running factorization of the weighted snapshot matrix.

The store keeps, for every parameter point ``mu_j``, the trajectory block
``A_j`` (``n_x x n_t``), an optional derivative tensor ``dA_j/dmu``
(``n_x x n_t x n_p``), and maintains the truncated SVD of

    X = F [A_1 ... A_ns] diag(sqrt(w_t), ..., sqrt(w_t))

where ``F^T F = E`` factors the state inner product and ``w_t`` are the
trapezoid time weights.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import DuplicatePointError, InputError
from .svd import (
    DEFAULT_EPS_ORTH,
    DEFAULT_EPS_SVD,
    TruncatedSvd,
    incremental_append,
    truncated_svd,
)

POINT_TOL = 1e-12


def time_weights(n_t: int, dt: float) -> np.ndarray:
    """Trapezoid weights ``(dt/2, dt, ..., dt, dt/2)`` of length `n_t`."""
    if int(n_t) != n_t or n_t < 2:
        raise InputError(f"n_t must be an integer >= 2, got {n_t}")
    if not dt > 0:
        raise InputError("dt must be positive")
    w = np.full(int(n_t), float(dt))
    w[0] = w[-1] = 0.5 * dt
    return w


def inner_product_factor(E) -> np.ndarray:
    """Upper-triangular ``F`` with ``F^T F = E`` (Cholesky factor).

    Raises
    ------
    InputError
        If `E` is not symmetric or not positive definite.
    """
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.shape[0] != E.shape[1]:
        raise InputError(f"E must be square, got shape {E.shape}")
    scale = max(np.max(np.abs(E)), 1.0)
    if np.max(np.abs(E - E.T)) > 1e-12 * scale:
        raise InputError("E is not symmetric")
    try:
        return sla.cholesky(E, lower=False)
    except np.linalg.LinAlgError as exc:
        raise InputError("E is not positive definite") from exc


def apply_factor_inverse(F, Y) -> np.ndarray:
    """Solve ``F Z = Y`` for upper-triangular `F`."""
    return sla.solve_triangular(F, Y, lower=False)


class SnapshotStore:
    """Append-only collection of trajectory snapshots.

    Parameters
    ----------
    n_x, n_t : int
        State dimension and number of stored time steps per trajectory.
    dt : float
        Time step, used for the trapezoid weights.
    E : array_like, optional
        SPD inner-product matrix; identity when omitted.
    eps_svd, eps_orth : float
        Tolerances forwarded to the incremental SVD.
    """

    def __init__(self, n_x, n_t, dt, E=None, eps_svd=DEFAULT_EPS_SVD,
                 eps_orth=DEFAULT_EPS_ORTH):
        self.n_x = int(n_x)
        self.n_t = int(n_t)
        self.dt = float(dt)
        self.E = np.eye(self.n_x) if E is None else np.asarray(E, dtype=float)
        if self.E.shape != (self.n_x, self.n_x):
            raise InputError(f"E has shape {self.E.shape}, expected {(self.n_x, self.n_x)}")
        self.F = inner_product_factor(self.E)
        self.time_weights = time_weights(self.n_t, self.dt)
        self._sqrt_tw = np.sqrt(self.time_weights)
        self.eps_svd = eps_svd
        self.eps_orth = eps_orth
        self.points: list[np.ndarray] = []
        self.blocks: list[np.ndarray] = []
        self.deriv_blocks: dict[int, np.ndarray] = {}
        self.running_svd = TruncatedSvd.empty(self.n_x)
        self._raw = np.zeros((self.n_x, 0))
        self.correction_counts: list[int] = []

    # -- read-only views -------------------------------------------------
    @property
    def n_s(self) -> int:
        return len(self.points)

    @property
    def n_sd(self) -> int:
        return len(self.deriv_blocks)

    @property
    def n_p(self) -> int | None:
        return self.points[0].shape[0] if self.points else None

    @property
    def raw_weighted_columns(self) -> np.ndarray:
        """Explicit ``F A W_k^{1/2}`` (read-only view)."""
        v = self._raw.view()
        v.flags.writeable = False
        return v

    def block_columns(self, j: int) -> slice:
        return slice(j * self.n_t, (j + 1) * self.n_t)

    def weighted_block(self, A) -> np.ndarray:
        """``F A diag(sqrt(w_t))`` for one trajectory block."""
        return (self.F @ A) * self._sqrt_tw

    def find(self, mu, tol: float = POINT_TOL) -> int | None:
        """Index of a stored point within `tol` of `mu`, else None."""
        mu = np.asarray(mu, dtype=float)
        for j, p in enumerate(self.points):
            if p.shape == mu.shape and np.linalg.norm(p - mu) <= tol:
                return j
        return None

    def derivative_indices(self) -> list[int]:
        return sorted(self.deriv_blocks)

    def state_hash(self) -> str:
        """Digest of points and raw columns, for cross-run identity checks."""
        h = hashlib.sha256()
        for p in self.points:
            h.update(np.ascontiguousarray(p).tobytes())
        h.update(np.ascontiguousarray(self._raw).tobytes())
        for j in self.derivative_indices():
            h.update(str(j).encode())
        return h.hexdigest()[:16]

    # -- mutation ----------------------------------------------------------
    def append_snapshot(self, mu, A, dA=None) -> int:
        """Add the trajectory `A` computed at `mu`; returns its index."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float)).copy()
        A = np.asarray(A, dtype=float)
        if mu.ndim != 1:
            raise InputError("parameter point must be a 1-d vector")
        if self.points and mu.shape != self.points[0].shape:
            raise InputError(f"parameter dimension {mu.shape[0]} != {self.n_p}")
        if A.shape != (self.n_x, self.n_t):
            raise InputError(f"block has shape {A.shape}, expected {(self.n_x, self.n_t)}")
        if not np.all(np.isfinite(A)):
            raise InputError("block contains non-finite entries")
        if self.find(mu) is not None:
            raise DuplicatePointError(f"point already stored at index {self.find(mu)}")
        if dA is not None:
            dA = self._check_deriv(dA, mu.shape[0])

        Y = self.weighted_block(A)
        raw = np.hstack([self._raw, Y])
        block_svd = truncated_svd(Y, self.eps_svd)
        self.running_svd = incremental_append(
            self.running_svd, block_svd, raw, self.eps_orth, self.eps_svd
        )
        self.correction_counts.append(self.running_svd.n_corrections)
        self._raw = raw
        self.points.append(mu)
        self.blocks.append(A.copy())
        if dA is not None:
            self.deriv_blocks[len(self.points) - 1] = dA
        return len(self.points) - 1

    def attach_derivative(self, j: int, dA) -> None:
        """Attach (or replace) the derivative tensor of stored snapshot `j`."""
        if not 0 <= j < self.n_s:
            raise InputError(f"no snapshot with index {j}")
        self.deriv_blocks[j] = self._check_deriv(dA, self.points[j].shape[0])

    def _check_deriv(self, dA, n_p):
        dA = np.asarray(dA, dtype=float)
        if dA.shape != (self.n_x, self.n_t, n_p):
            raise InputError(
                f"derivative tensor has shape {dA.shape}, expected {(self.n_x, self.n_t, n_p)}"
            )
        return dA.copy()

    # -- serialization ---------------------------------------------------
    def save(self, directory) -> Path:
        """Write one CSV per block plus ``manifest.json`` into `directory`."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for j, (mu, A) in enumerate(zip(self.points, self.blocks)):
            entry = {"point": [float(x) for x in mu], "block": f"block_{j:04d}.csv"}
            _write_csv(d / entry["block"], A)
            if j in self.deriv_blocks:
                names = []
                for i in range(mu.shape[0]):
                    name = f"block_{j:04d}_d{i:03d}.csv"
                    _write_csv(d / name, self.deriv_blocks[j][:, :, i])
                    names.append(name)
                entry["derivatives"] = names
            entries.append(entry)
        _write_csv(d / "inner_product.csv", self.E)
        manifest = {
            "n_x": self.n_x,
            "n_t": self.n_t,
            "dt": self.dt,
            "eps_svd": self.eps_svd,
            "eps_orth": self.eps_orth,
            "inner_product": "inner_product.csv",
            "snapshots": entries,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return d

    @classmethod
    def load(cls, directory) -> "SnapshotStore":
        d = Path(directory)
        m = json.loads((d / "manifest.json").read_text())
        E = _read_csv(d / m["inner_product"])
        store = cls(m["n_x"], m["n_t"], m["dt"], E, m["eps_svd"], m["eps_orth"])
        for entry in m["snapshots"]:
            A = _read_csv(d / entry["block"])
            dA = None
            if "derivatives" in entry:
                dA = np.stack([_read_csv(d / name) for name in entry["derivatives"]], axis=2)
            store.append_snapshot(entry["point"], A, dA)
        return store


def _write_csv(path, M):
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")


def _read_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
