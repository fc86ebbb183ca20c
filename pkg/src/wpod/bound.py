"""Computable surrogate of the weighted POD a posteriori error bound.

The bound has a truncation part ``3 n_s sum_{i>n_r} sigma_i^2`` (singular
values of the weighted snapshot matrix) and a distance part
``3 n_s n_p sum_k w_k sum_j w_j^2 [||d_j||_C1^2 + ||d_j||_C3^2]`` with
``d_j = mu_hat - mu_j`` shifted by unknown ball radii. With no information
on the integration matrices or radii, the surrogate takes ``C = I`` and
radius zero, so each bracket is ``2 ||mu_hat - mu_j||^2``. It is a
diagnostic, never an acceptance gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import weighted_store_svd
from .snapshots import SnapshotStore
from .weighting import WeightAssignment


@dataclass(frozen=True)
class BoundReport:
    truncation_term: float
    distance_term: float
    per_snapshot: np.ndarray

    @property
    def total(self) -> float:
        return self.truncation_term + self.distance_term


def bound_surrogate(store: SnapshotStore, weights: WeightAssignment, n_r: int, mu_hat,
                    singular_values=None) -> BoundReport:
    """Evaluate the surrogate bound at `mu_hat`.

    `singular_values` of the weighted matrix may be passed to avoid
    recomputing the weighted SVD.
    """
    w = weights.weights
    n_s = w.shape[0]
    if singular_values is None:
        singular_values = weighted_store_svd(store, weights).s
    s = np.asarray(singular_values, float)
    tail = float(np.sum(s[n_r:] ** 2))
    mu_hat = np.asarray(mu_hat, float)
    n_p = mu_hat.shape[0]
    d2 = np.array([np.sum((mu_hat - p) ** 2) for p in store.points])
    time_sum = float(store.time_weights.sum())
    per = 3.0 * n_s * n_p * time_sum * w**2 * 2.0 * d2
    return BoundReport(3.0 * n_s * tail, float(per.sum()), per)
