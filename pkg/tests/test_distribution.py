import dataclasses

import numpy as np
import pytest

from fedcedar.clustering import ClusterAssignment
from fedcedar.distribution import (
    CONDITION_1,
    CONDITION_2,
    INITIAL_SEED,
    AssignmentMismatchError,
    DistributionDecision,
    LedgerRoundMismatchError,
    MembershipLedger,
    distribute,
    record_round,
)
from fedcedar.graph import aggregate_mean
from fedcedar.params import ParamVector, ShapeManifest

MANIFEST = ShapeManifest((("x", (3,)),))


def vec(*values):
    return ParamVector(np.array(values, dtype=np.float64), MANIFEST)


def assignment_for(labels):
    labels = list(labels)
    k = max(labels) + 1
    sizes = [labels.count(c) for c in range(k)]
    return ClusterAssignment(tuple(labels), tuple(sizes))


SEED_MODEL = vec(9.0, 9.0, 9.0)


def initial_at(round_index):
    """Fresh ledger positioned as if round_index had just been recorded."""
    return dataclasses.replace(
        MembershipLedger.initial(SEED_MODEL), round_index=round_index
    )


def test_spec_worked_example():
    # round t-1=4: clients {1,2,3}, client 2 in cluster 0
    centers = (vec(1.0, 0.0, 0.0), vec(0.0, 1.0, 0.0))
    ledger = record_round(
        initial_at(3),
        4,
        {1, 2, 3},
        assignment_for([1, 0, 1]),  # sorted actives 1,2,3 -> clusters 1,0,1
        centers,
    )
    decisions = {d.client_id: d for d in distribute(ledger, {2, 3, 4}, 5)}
    assert decisions[2].source == CONDITION_1
    assert decisions[2].cluster_index == 0
    assert np.array_equal(decisions[2].model.coefficients, centers[0].coefficients)
    assert decisions[4].source == CONDITION_2
    mean = aggregate_mean(centers)
    assert np.array_equal(decisions[4].model.coefficients, mean.coefficients)


def test_full_overlap_all_condition1():
    centers = (vec(1.0, 1.0, 1.0),)
    ledger = record_round(
        initial_at(0),
        1,
        {5, 6},
        assignment_for([0, 0]),
        centers,
    )
    decisions = distribute(ledger, {5, 6}, 2)
    assert all(d.source == CONDITION_1 for d in decisions)


def test_disjoint_all_condition2():
    centers = (vec(1.0, 1.0, 1.0), vec(2.0, 2.0, 2.0))
    ledger = record_round(
        initial_at(0),
        1,
        {0, 1},
        assignment_for([0, 1]),
        centers,
    )
    decisions = distribute(ledger, {7, 8}, 2)
    assert all(d.source == CONDITION_2 for d in decisions)
    mean = aggregate_mean(centers).coefficients
    for d in decisions:
        assert np.array_equal(d.model.coefficients, mean)


def test_cold_start_distributes_seed():
    ledger = MembershipLedger.initial(SEED_MODEL)
    decisions = distribute(ledger, {3, 1, 2}, 0)
    assert [d.client_id for d in decisions] == [1, 2, 3]
    for d in decisions:
        assert d.source == INITIAL_SEED
        assert np.array_equal(d.model.coefficients, SEED_MODEL.coefficients)


def test_two_step_ledger_trace():
    # record round 5 with client 7 in cluster 2; distribute at round 6
    centers = (vec(0.0, 0.0, 1.0), vec(0.0, 1.0, 0.0), vec(1.0, 0.0, 0.0))
    ledger = record_round(
        initial_at(4),
        5,
        {7, 8, 9},
        assignment_for([2, 0, 1]),
        centers,
    )
    decisions = {d.client_id: d for d in distribute(ledger, {7}, 6)}
    assert decisions[7].cluster_index == 2
    assert np.array_equal(decisions[7].model.coefficients, centers[2].coefficients)


def test_single_cluster_conditions_collapse():
    centers = (vec(4.0, 4.0, 4.0),)
    ledger = record_round(
        initial_at(0),
        1,
        {0, 1},
        assignment_for([0, 0]),
        centers,
    )
    decisions = distribute(ledger, {0, 5}, 2)
    for d in decisions:
        assert np.array_equal(d.model.coefficients, centers[0].coefficients)


def test_center_mean_matches_aggregate_mean():
    centers = (vec(1.0, 2.0, 3.0), vec(3.0, 2.0, 1.0), vec(0.0, 0.0, 0.0))
    ledger = record_round(
        initial_at(0),
        1,
        {0, 1, 2},
        assignment_for([0, 1, 2]),
        centers,
    )
    expected = aggregate_mean(centers).coefficients
    assert np.max(np.abs(ledger.previous_center_mean.coefficients - expected)) <= 1e-12


def test_condition1_requires_membership_in_previous_round_only():
    # client 0 active at round 1, idle at round 2, active again at round 3:
    # it is in C' and receives the average, not its old cluster model
    c_round1 = (vec(1.0, 0.0, 0.0), vec(0.0, 1.0, 0.0))
    ledger = record_round(
        initial_at(0),
        1,
        {0, 1},
        assignment_for([0, 1]),
        c_round1,
    )
    c_round2 = (vec(5.0, 0.0, 0.0), vec(0.0, 5.0, 0.0))
    ledger = record_round(ledger, 2, {1, 2}, assignment_for([0, 1]), c_round2)
    decisions = {d.client_id: d for d in distribute(ledger, {0, 1}, 3)}
    assert decisions[0].source == CONDITION_2
    assert np.array_equal(
        decisions[0].model.coefficients, aggregate_mean(c_round2).coefficients
    )
    assert decisions[1].source == CONDITION_1
    assert np.array_equal(decisions[1].model.coefficients, c_round2[0].coefficients)


def test_partition_property_random_scenarios():
    rng = np.random.default_rng(0)
    for _ in range(50):
        prev = frozenset(int(x) for x in rng.choice(20, size=rng.integers(1, 10), replace=False))
        curr = frozenset(int(x) for x in rng.choice(20, size=rng.integers(1, 10), replace=False))
        k = int(rng.integers(1, 4))
        centers = tuple(vec(*rng.standard_normal(3)) for _ in range(k))
        labels = [int(rng.integers(k)) for _ in prev]
        # guarantee every cluster non-empty
        for c in range(k):
            if c not in labels:
                labels[rng.integers(len(labels))] = c
        if len(set(labels)) < k:
            continue
        ledger = record_round(
            initial_at(6),
            7,
            prev,
            assignment_for(labels),
            centers,
        )
        decisions = distribute(ledger, curr, 8)
        cond1 = {d.client_id for d in decisions if d.source == CONDITION_1}
        cond2 = {d.client_id for d in decisions if d.source == CONDITION_2}
        assert cond1 == (prev & curr)
        assert cond2 == (curr - prev)
        assert cond1 | cond2 == curr
        assert not cond1 & cond2


def test_stale_ledger_rejected():
    ledger = MembershipLedger.initial(SEED_MODEL)
    with pytest.raises(LedgerRoundMismatchError):
        distribute(ledger, {0}, 5)


def test_record_round_validates_assignment_size():
    with pytest.raises(AssignmentMismatchError):
        record_round(
            initial_at(0),
            1,
            {0, 1, 2},
            assignment_for([0, 0]),
            (vec(0.0, 0.0, 0.0),),
        )


def test_decision_source_validation():
    with pytest.raises(ValueError):
        DistributionDecision(0, "bogus", SEED_MODEL)
    with pytest.raises(ValueError):
        DistributionDecision(0, CONDITION_1, SEED_MODEL)  # missing cluster_index
    with pytest.raises(ValueError):
        DistributionDecision(0, CONDITION_2, SEED_MODEL, cluster_index=1)
