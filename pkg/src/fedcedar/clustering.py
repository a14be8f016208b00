"""K-means over uploaded client parameter vectors.

Lloyd iterations on the raw flattened vectors (no normalization), with
k-means++ seeding from an explicit seed. The implementation canonicalizes the
input order internally (lexicographic row sort) so the produced partition is
identical under any permutation of the uploads, and repairs empty clusters by
reseeding them at the farthest point from its current center. Empty clusters
that cannot be repaired (coincident points) are dropped, so the returned
assignment never contains an empty cluster and the effective cluster count
can be lower than requested.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .params import ParamVector, stack
from .seeds import stream


@dataclass(frozen=True)
class ClusterAssignment:
    """Dense cluster indicator: labels[i] is the cluster of upload i."""

    labels: tuple[int, ...]
    cluster_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        k = len(self.cluster_sizes)
        if any(not 0 <= label < k for label in self.labels):
            raise ValueError(f"labels outside [0, {k})")
        if any(size == 0 for size in self.cluster_sizes):
            raise ValueError("assignment contains an empty cluster")
        counted = [0] * k
        for label in self.labels:
            counted[label] += 1
        if tuple(counted) != self.cluster_sizes:
            raise ValueError("cluster_sizes inconsistent with labels")

    @property
    def cluster_count(self) -> int:
        return len(self.cluster_sizes)


@dataclass(frozen=True, eq=False)
class ClusterState:
    """Centers, assignment, and the per-iteration objective trace of one run."""

    centers: tuple[ParamVector, ...]
    assignment: ClusterAssignment
    objective_trace: tuple[float, ...]


def _pairwise_sq_dist(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _assign(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin breaks ties toward the lowest center index
    return _pairwise_sq_dist(points, centers).argmin(axis=1)


def _objective_value(points: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    diff = points - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; falls back to duplicating when points coincide."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    dist_sq = np.einsum("ij,ij->i", points - points[chosen[0]], points - points[chosen[0]])
    while len(chosen) < k:
        total = dist_sq.sum()
        if total <= 0.0:
            chosen.append(chosen[0])
            continue
        draw = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(dist_sq), draw, side="right"))
        idx = min(idx, n - 1)
        chosen.append(idx)
        new_d = np.einsum("ij,ij->i", points - points[idx], points - points[idx])
        dist_sq = np.minimum(dist_sq, new_d)
    return points[chosen].copy()


def _recompute_centers(
    points: np.ndarray, labels: np.ndarray, k: int, old_centers: np.ndarray
) -> np.ndarray:
    """Member means per cluster; empty clusters reseed at the farthest point.

    Stealing is restricted to clusters with at least two members so the repair
    cannot create a new empty cluster. When every point sits exactly on its
    center (duplicate uploads) the empty cluster is left as-is and dropped
    after convergence.
    """
    centers = old_centers.copy()
    sizes = np.bincount(labels, minlength=k)
    for c in range(k):
        if sizes[c] > 0:
            centers[c] = points[labels == c].mean(axis=0)
    dist_to_own = np.einsum("ij,ij->i", points - centers[labels], points - centers[labels])
    for c in range(k):
        if sizes[c] > 0:
            continue
        stealable = (sizes[labels] >= 2) & (dist_to_own > 0.0)
        if not stealable.any():
            continue
        candidates = np.where(stealable)[0]
        victim = candidates[np.argmax(dist_to_own[candidates])]
        centers[c] = points[victim]
        sizes[c] = 0  # stays empty until the next assignment step
    return centers


def kmeans(
    vectors: Sequence[ParamVector],
    cluster_count: int,
    rng_seed: int,
    max_iter: int = 50,
) -> ClusterState:
    """Cluster vectors into at most cluster_count groups by squared distance.

    Deterministic given (vectors as a multiset, cluster_count, rng_seed).
    The objective trace starts at the seeding assignment and is non-increasing.
    """
    if cluster_count < 1:
        raise ValueError("cluster_count must be positive")
    if len(vectors) == 0:
        raise ValueError("kmeans needs at least one vector")
    manifest = vectors[0].manifest
    raw = stack(vectors)
    b = len(raw)
    k = min(cluster_count, b)

    # Canonical processing order: partition becomes permutation-independent.
    order = np.lexsort(raw.T[::-1])
    points = raw[order]

    rng = stream(rng_seed)
    centers = _kmeanspp(points, k, rng)
    labels = _assign(points, centers)
    trace = [_objective_value(points, labels, centers)]

    for _ in range(max_iter):
        centers = _recompute_centers(points, labels, k, centers)
        new_labels = _assign(points, centers)
        trace.append(_objective_value(points, new_labels, centers))
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable:
            break

    # Drop unrepairable empty clusters and renumber the survivors.
    sizes = np.bincount(labels, minlength=k)
    keep = np.where(sizes > 0)[0]
    remap = {int(old): new for new, old in enumerate(keep)}
    labels = np.array([remap[int(label)] for label in labels])
    final_centers = np.stack([points[labels == c].mean(axis=0) for c in range(len(keep))])

    # Undo the canonical ordering for the caller-facing labels.
    original_labels = np.empty(b, dtype=np.int64)
    original_labels[order] = labels
    assignment = ClusterAssignment(
        labels=tuple(int(x) for x in original_labels),
        cluster_sizes=tuple(int(s) for s in np.bincount(labels, minlength=len(keep))),
    )
    centers_out = tuple(ParamVector(row, manifest) for row in final_centers)
    return ClusterState(centers_out, assignment, tuple(trace))


def objective(vectors: Sequence[ParamVector], state: ClusterState) -> float:
    """Clustering loss: total squared distance of each vector to its center."""
    points = stack(vectors)
    labels = np.asarray(state.assignment.labels)
    if len(labels) != len(points):
        raise ValueError(f"{len(points)} vectors but {len(labels)} labels")
    centers = stack(state.centers)
    return _objective_value(points, labels, centers)


def assign_to_nearest(vector: ParamVector, centers: Sequence[ParamVector]) -> int:
    """Index of the squared-distance-nearest center; ties go to the lowest index."""
    if len(centers) == 0:
        raise ValueError("no centers to assign to")
    matrix = stack(centers)
    diff = matrix - vector.coefficients
    return int(np.einsum("ij,ij->i", diff, diff).argmin())
