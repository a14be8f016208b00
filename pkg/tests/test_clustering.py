import itertools

import numpy as np
import pytest

from fedcedar.clustering import (
    ClusterAssignment,
    assign_to_nearest,
    kmeans,
    objective,
)
from fedcedar.metrics import Partition, rand_index
from fedcedar.params import ParamVector, ShapeManifest


def vecs(rows):
    rows = np.asarray(rows, dtype=np.float64)
    manifest = ShapeManifest((("x", (rows.shape[1],)),))
    return [ParamVector(r, manifest) for r in rows]


def brute_force_best_two_partition(points):
    """Exhaustive search over every assignment of points into <= 2 clusters."""
    points = np.asarray(points, dtype=np.float64)
    best = (np.inf, None)
    for labels in itertools.product((0, 1), repeat=len(points)):
        labels = np.array(labels)
        j = 0.0
        for c in (0, 1):
            members = points[labels == c]
            if len(members):
                center = members.mean(axis=0)
                j += ((members - center) ** 2).sum()
        if j < best[0]:
            best = (j, labels)
    return best


TWO_BLOBS = [[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]


def test_kmeans_k1_center_is_mean():
    data = np.random.default_rng(0).standard_normal((7, 3))
    state = kmeans(vecs(data), 1, rng_seed=0)
    assert len(state.centers) == 1
    assert np.max(np.abs(state.centers[0].coefficients - data.mean(axis=0))) <= 1e-12
    assert state.assignment.cluster_sizes == (7,)


def test_kmeans_two_blobs_matches_exhaustive_optimum():
    j_best, labels_best = brute_force_best_two_partition(TWO_BLOBS)
    assert j_best == pytest.approx(1.0)
    state = kmeans(vecs(TWO_BLOBS), 2, rng_seed=3)
    got = np.asarray(state.assignment.labels)
    assert state.objective_trace[-1] == pytest.approx(j_best, abs=1e-12)
    # same partition up to relabeling
    assert (got[0] == got[1]) and (got[2] == got[3]) and (got[0] != got[2])


def test_kmeans_identical_vectors_collapse():
    data = np.tile([1.5, -2.0, 0.25], (6, 1))
    state = kmeans(vecs(data), 4, rng_seed=1)
    assert len(state.centers) == 1
    assert state.assignment.cluster_sizes == (6,)
    assert state.objective_trace[-1] == 0.0


def test_kmeans_reduces_k_when_fewer_vectors():
    data = np.random.default_rng(2).standard_normal((3, 4))
    state = kmeans(vecs(data), 10, rng_seed=2)
    assert len(state.centers) <= 3
    assert state.assignment.cluster_count == len(state.centers)


def test_objective_examples():
    state = kmeans(vecs(TWO_BLOBS), 2, rng_seed=3)
    assert objective(vecs(TWO_BLOBS), state) == pytest.approx(1.0, abs=1e-12)
    # every vector exactly at its center
    points = [[0.0, 0.0], [4.0, 4.0]]
    state2 = kmeans(vecs(points), 2, rng_seed=3)
    assert objective(vecs(points), state2) == 0.0


def test_kmeans_locally_optimal_against_reassignments():
    rng = np.random.default_rng(4)
    data = rng.standard_normal((12, 3))
    vectors = vecs(data)
    state = kmeans(vectors, 3, rng_seed=4)
    base = objective(vectors, state)
    k = len(state.centers)
    centers = np.stack([c.coefficients for c in state.centers])
    for _ in range(100):
        labels = np.asarray(state.assignment.labels).copy()
        i = rng.integers(len(labels))
        labels[i] = rng.integers(k)
        perturbed = ((data - centers[labels]) ** 2).sum()
        assert base <= perturbed + 1e-12


def test_assign_to_nearest_rules():
    centers = vecs([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]])
    assert assign_to_nearest(vecs([[5.0, 5.0]])[0], centers) == 2
    # equidistant from centers 0 and 1: tie broken toward index 0
    assert assign_to_nearest(vecs([[1.0, 0.0]])[0], centers) == 0


def test_assign_to_nearest_matches_scan_oracle():
    rng = np.random.default_rng(5)
    centers = vecs(rng.standard_normal((6, 4)))
    for _ in range(50):
        v = vecs(rng.standard_normal((1, 4)))[0]
        dists = [((v.coefficients - c.coefficients) ** 2).sum() for c in centers]
        best = 0
        for i, d in enumerate(dists):
            if d < dists[best]:
                best = i
        assert assign_to_nearest(v, centers) == best


def test_trace_non_increasing_and_final_below_seeding():
    rng = np.random.default_rng(6)
    for trial in range(30):
        b = int(rng.integers(2, 20))
        dim = int(rng.integers(1, 8))
        k = int(rng.integers(1, 6))
        data = rng.standard_normal((b, dim)) * rng.uniform(0.5, 3.0)
        state = kmeans(vecs(data), k, rng_seed=trial)
        trace = state.objective_trace
        assert all(a >= b_ - 1e-9 for a, b_ in zip(trace, trace[1:]))
        assert trace[-1] <= trace[0] + 1e-12


def test_centers_are_member_means():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((15, 4))
    state = kmeans(vecs(data), 4, rng_seed=7)
    labels = np.asarray(state.assignment.labels)
    for c, center in enumerate(state.centers):
        member_mean = data[labels == c].mean(axis=0)
        assert np.max(np.abs(center.coefficients - member_mean)) <= 1e-9


def test_permutation_invariance_of_partition():
    rng = np.random.default_rng(8)
    data = rng.standard_normal((14, 5))
    base = kmeans(vecs(data), 3, rng_seed=8)
    perm = rng.permutation(14)
    permuted = kmeans(vecs(data[perm]), 3, rng_seed=8)
    items = tuple(range(14))
    base_part = Partition(items, base.assignment.labels)
    # undo the permutation: permuted.labels[i] belongs to original item perm[i]
    undone = [0] * 14
    for i, original in enumerate(perm):
        undone[original] = permuted.assignment.labels[i]
    assert rand_index(base_part, Partition(items, tuple(undone))) == 1.0


def test_cluster_assignment_validation():
    with pytest.raises(ValueError):
        ClusterAssignment(labels=(0, 2), cluster_sizes=(1, 1))
    with pytest.raises(ValueError):
        ClusterAssignment(labels=(0, 0), cluster_sizes=(1, 1))
    with pytest.raises(ValueError):
        ClusterAssignment(labels=(0,), cluster_sizes=(1, 0))
