"""Density clustering of steady-state rows and hotspot-centroid extraction.

Single-core stress experiments concentrate a unit's normalized steady-state
rows (K/W coordinates) into tight blobs, one per unit. DBSCAN with an
automatically selected radius finds those blobs and drops glitch rows as
noise; each blob's centroid approximates one row of the thermal resistance
matrix and seeds the factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .models import NOISE, SteadyStateDataset, ValidationError

_UNSEEN = -2  # internal pre-visit label, never visible to callers

__all__ = [
    "DbscanParams",
    "ClusterResult",
    "HotspotResult",
    "euclidean",
    "k_distance_eps",
    "dbscan",
    "hotspot_centroids",
]


@dataclass(frozen=True)
class DbscanParams:
    eps: float
    min_pts: int

    def __post_init__(self):
        if self.eps <= 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 2:
            raise ValidationError(f"min_pts must be >= 2, got {self.min_pts}")


@dataclass(frozen=True)
class ClusterResult:
    """Labels (cluster id or NOISE), per-cluster centroids, core-point flags."""

    labels: np.ndarray
    centroids: np.ndarray
    core_flags: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class HotspotResult:
    """Centroid matrix plus the clustering evidence behind it.

    ``matrix`` row i is the centroid assigned to unit i (K/W). ``row_mask``
    flags the dataset rows that survived as inliers; downstream factorization
    restricts itself to those rows. ``fallback_units`` had no cluster and used
    their dominating rows instead; ``warnings`` is non-empty only when even
    that fallback was unavailable for some unit.
    """

    matrix: np.ndarray
    eps: float
    curve: np.ndarray
    clusters: ClusterResult
    assignment: np.ndarray
    row_mask: np.ndarray
    fallback_units: tuple[int, ...]
    warnings: tuple[str, ...]


def euclidean(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return float(np.sqrt(np.sum((p - q) ** 2)))


def _chord_elbow(curve: np.ndarray) -> int:
    """Index of maximum perpendicular distance from the endpoint chord."""
    m = curve.shape[0]
    if m < 3:
        return 0
    x2, y1, y2 = float(m - 1), curve[0], curve[-1]
    span = np.hypot(x2, y2 - y1)
    if span == 0:
        return 0
    x = np.arange(m, dtype=float)
    dist = np.abs((y2 - y1) * x - x2 * curve + x2 * y1) / span
    return int(np.argmax(dist))


def k_distance_eps(points, k: int) -> tuple[float, np.ndarray]:
    """Radius at the elbow of the descending k-th-nearest-neighbor curve.

    The k-th neighbor excludes the point itself. Exact-duplicate data gives a
    zero elbow; the radius is floored at 1e-12 so it stays usable, which still
    clusters duplicates (distance 0) and nothing else.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValidationError("points must be a 2-d array")
    m = pts.shape[0]
    if m <= k:
        raise ValidationError(f"need more than k={k} points, got {m}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    d = cdist(pts, pts)
    kdist = np.sort(d, axis=1)[:, k]  # column 0 is the self-distance
    curve = np.sort(kdist)[::-1]
    eps = max(float(curve[_chord_elbow(curve)]), 1e-12)
    return eps, curve


def dbscan(points, params: DbscanParams) -> ClusterResult:
    """Density clustering with deterministic ascending-index expansion.

    A point is core when its eps-neighborhood, itself included, holds at
    least min_pts points. Clusters grow from the lowest-index unvisited core
    point, so cluster ids increase with each cluster's smallest core index
    and a border point shared by two clusters joins the lower-numbered one.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValidationError("points must be a 2-d array")
    m = pts.shape[0]
    if m == 0:
        return ClusterResult(labels=np.empty(0, dtype=int),
                             centroids=np.empty((0, pts.shape[1])),
                             core_flags=np.empty(0, dtype=bool))
    within = cdist(pts, pts) <= params.eps
    core = within.sum(axis=1) >= params.min_pts

    labels = np.full(m, _UNSEEN, dtype=int)
    cluster = 0
    for i in range(m):
        if labels[i] != _UNSEEN:
            continue
        if not core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = list(np.flatnonzero(within[i]))
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if labels[j] == NOISE:
                labels[j] = cluster  # border point, claimed but not expanded
            if labels[j] != _UNSEEN:
                continue
            labels[j] = cluster
            if core[j]:
                queue.extend(np.flatnonzero(within[j]))
        cluster += 1

    centroids = np.array([pts[labels == c].mean(axis=0) for c in range(cluster)])
    if cluster == 0:
        centroids = np.empty((0, pts.shape[1]))
    return ClusterResult(labels=labels, centroids=centroids, core_flags=core)


def hotspot_centroids(ds: SteadyStateDataset, n: int | None = None) -> HotspotResult:
    """Cluster normalized steady-state rows and map centroids onto units.

    MinPts = N+1 (dimension plus one); the radius comes from the N-th
    neighbor distance curve, the largest neighbor count that an exact
    MinPts-sized blob can still satisfy with the point itself included.
    Cluster-to-unit assignment maximizes the summed own-unit coordinate over
    all cluster/unit pairings, which reduces to per-cluster argmax whenever
    argmax is collision-free but stays well-defined when a corrupted column
    inflates every cluster's coordinate at once.
    """
    if n is None:
        n = ds.n
    if n != ds.n:
        raise ValidationError(f"dataset has {ds.n} units, caller expects {n}")
    min_pts = n + 1
    rows = ds.normalized_rows()
    eps, curve = k_distance_eps(rows, k=min_pts - 1)
    result = dbscan(rows, DbscanParams(eps=eps, min_pts=min_pts))

    assignment = np.full(n, -1, dtype=int)
    if result.n_clusters > 0:
        gain = result.centroids  # gain[c, j]: centroid c's unit-j coordinate
        rows_idx, cols_idx = linear_sum_assignment(gain, maximize=True)
        for c, j in zip(rows_idx, cols_idx):
            assignment[j] = c

    inlier = result.labels != NOISE
    dominant = np.argmax(rows, axis=1)
    matrix = np.empty((n, n))
    fallback: list[int] = []
    warnings: list[str] = []
    for i in range(n):
        if assignment[i] >= 0:
            matrix[i] = result.centroids[assignment[i]]
            continue
        fallback.append(i)
        mask = inlier & (dominant == i)
        if mask.any():
            matrix[i] = rows[mask].mean(axis=0)
        else:
            warnings.append(
                f"degraded-init: unit {i} has no assigned cluster and no "
                f"dominating rows; using the global inlier mean"
            )
            matrix[i] = rows[inlier].mean(axis=0) if inlier.any() else rows.mean(axis=0)

    return HotspotResult(
        matrix=matrix,
        eps=eps,
        curve=curve,
        clusters=result,
        assignment=assignment,
        row_mask=inlier,
        fallback_units=tuple(fallback),
        warnings=tuple(warnings),
    )
