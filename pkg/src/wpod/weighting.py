"""Distance-based snapshot weights for a query point.

Raw weights follow a C^1 piecewise cubic in the snapshot distance ``d``::

    w(d) = 1                            d == d_min
         = 1 - 3 t^2 + 2 t^3            d_min < d < d_cut,  t = (d - d_min) / (d_cut - d_min)
         = 0                            d >= d_cut

with ``d_cut = c d_min + (1 - c) d_max``.  Normalizing by the raw-weight sum
gives a partition of unity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEFAULT_CUTOFF = 0.8
WEIGHTING_MODES = ("global", "cubic")


@dataclass(frozen=True)
class DistanceProfile:
    """Snapshot distances to a query point.

    ``deltas`` holds one entry per stored point; entries of points that do not
    participate (see ``participating``) are ignored by the weight function.
    """

    query: np.ndarray
    deltas: np.ndarray
    delta_min: float
    delta_max: float
    delta_hat: float
    c: float
    participating: np.ndarray

    @property
    def degenerate(self) -> bool:
        return not self.delta_hat > self.delta_min


@dataclass(frozen=True)
class WeightAssignment:
    """Normalized snapshot weights and their directional derivatives."""

    weights: np.ndarray
    raw: np.ndarray
    dir_derivs: np.ndarray
    profile: DistanceProfile | None = None

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @property
    def n_w(self) -> int:
        return int(np.count_nonzero(self.weights > 0))


def distance_profile(points, query, c: float = DEFAULT_CUTOFF, participating=None) -> DistanceProfile:
    """Distances ``||query - mu_j||_2`` and the cutoff ``c d_min + (1-c) d_max``.

    Parameters
    ----------
    points : sequence of array_like
    query : array_like
    c : float in (0, 1]
    participating : bool array, optional
        Restricts the profile to a subset of points (e.g. those with
        derivative data). Non-participating points are excluded from the
        min/max and always receive zero weight.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0 or P.size == 0:
        raise InputError("at least one snapshot point is required")
    if not 0 < c <= 1:
        raise InputError(f"cutoff parameter c must lie in (0, 1], got {c}")
    q = np.atleast_1d(np.asarray(query, dtype=float))
    if P.shape[1] != q.shape[0]:
        raise InputError(f"query has dimension {q.shape[0]}, points have {P.shape[1]}")
    part = np.ones(P.shape[0], bool) if participating is None else np.asarray(participating, bool)
    if part.shape != (P.shape[0],) or not part.any():
        raise InputError("participating mask must select at least one point")
    deltas = np.linalg.norm(P - q, axis=1)
    d_min = float(deltas[part].min())
    d_max = float(deltas[part].max())
    d_hat = c * d_min + (1.0 - c) * d_max
    # guard against round-off pushing the cutoff outside [d_min, d_max]
    d_hat = min(max(d_hat, d_min), d_max)
    return DistanceProfile(q, deltas, d_min, d_max, d_hat, float(c), part)


def _hermite(deltas, d_min, d_hat):
    # same cubic expanded about the midpoint, which then maps to 0.5 exactly
    width = d_hat - d_min
    s = (deltas - 0.5 * (d_min + d_hat)) / width
    w = 0.5 - 1.5 * s + 2.0 * s**3
    dw = (-1.5 + 6.0 * s**2) / width
    return w, dw


def raw_weight(delta, d_min, d_hat):
    """Un-normalized cubic weight of distance(s) `delta`; also the slope."""
    delta = np.asarray(delta, dtype=float)
    if not d_hat > d_min:
        w = (delta <= d_min).astype(float)
        return w, np.zeros_like(w)
    w, dw = _hermite(delta, d_min, d_hat)
    inside = delta < d_hat
    w = np.where(inside, w, 0.0)
    dw = np.where(inside, dw, 0.0)
    at_min = delta <= d_min
    w = np.where(at_min, 1.0, w)
    dw = np.where(at_min, 0.0, dw)
    return w, dw


def cubic_weights(profile: DistanceProfile) -> WeightAssignment:
    """Normalized cubic weights with per-snapshot directional derivatives."""
    part = profile.participating
    raw = np.zeros_like(profile.deltas)
    slope = np.zeros_like(profile.deltas)
    if profile.degenerate:
        ties = np.isclose(profile.deltas, profile.delta_min, rtol=1e-12, atol=1e-15) & part
        raw[ties] = 1.0
    else:
        r, dr = raw_weight(profile.deltas[part], profile.delta_min, profile.delta_hat)
        raw[part], slope[part] = r, dr
    total = raw.sum()
    weights = raw / total
    # d w_j / d mu_hat contracted with the unit vector (mu_hat - mu_j)/delta_j;
    # cutoffs and the other raw weights held fixed.
    dir_derivs = (total - raw) / total**2 * slope
    dir_derivs[(profile.deltas == 0) | (raw == 0)] = 0.0
    return WeightAssignment(weights, raw, dir_derivs, profile)


def uniform_weights(n_s: int, participating=None) -> WeightAssignment:
    """Global-POD weights ``1/n`` over the participating snapshots."""
    part = np.ones(n_s, bool) if participating is None else np.asarray(participating, bool)
    raw = part.astype(float)
    return WeightAssignment(raw / raw.sum(), raw, np.zeros(n_s), None)


def weight_directional_derivatives(profile: DistanceProfile, points=None) -> np.ndarray:
    """Directional derivatives of the normalized weights (see :func:`cubic_weights`).

    `points` is accepted for interface symmetry; the distances in `profile`
    already encode the directions.
    """
    return cubic_weights(profile).dir_derivs


def weight_gradients(profile: DistanceProfile, points) -> np.ndarray:
    """Full ``d w_j / d mu_hat`` vectors (one row per snapshot), same convention."""
    wa = cubic_weights(profile)
    P = np.atleast_2d(np.asarray(points, dtype=float))
    diff = profile.query - P
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = diff / profile.deltas[:, None]
    unit[profile.deltas == 0] = 0.0
    return wa.dir_derivs[:, None] * unit


def assign_weights(points, query, mode: str = "cubic", c: float = DEFAULT_CUTOFF,
                   participating=None) -> WeightAssignment:
    """Dispatch on the configured weighting mode (``global`` or ``cubic``)."""
    if mode == "global":
        return uniform_weights(len(points), participating)
    if mode == "cubic":
        return cubic_weights(distance_profile(points, query, c, participating))
    raise InputError(f"unknown weighting mode {mode!r}; expected one of {WEIGHTING_MODES}")
