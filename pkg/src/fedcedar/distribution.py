"""Precise personalized model distribution.

At round t each active client receives either the propagated center of the
cluster it belonged to at round t-1 (Condition 1, for clients active in both
rounds) or the mean of all round-(t-1) propagated centers (Condition 2, for
clients newly active). Before the first server update every client starts
from one shared seeded model. The ledger only ever holds round t-1 state:
Condition 1 membership deliberately ignores older participation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import ClusterAssignment
from .graph import aggregate_mean
from .params import ParamVector

CONDITION_1 = "condition1"
CONDITION_2 = "condition2_average"
INITIAL_SEED = "initial_seed"


class LedgerRoundMismatchError(ValueError):
    """distribute() called for a round the ledger does not precede."""


class AssignmentMismatchError(ValueError):
    """record_round() got an assignment that does not cover the active set."""


@dataclass(frozen=True)
class DistributionDecision:
    client_id: int
    source: str
    model: ParamVector
    cluster_index: int | None = None

    def __post_init__(self) -> None:
        if self.source not in (CONDITION_1, CONDITION_2, INITIAL_SEED):
            raise ValueError(f"unknown decision source {self.source!r}")
        if (self.source == CONDITION_1) != (self.cluster_index is not None):
            raise ValueError("cluster_index is set if and only if source is condition1")


@dataclass(frozen=True, eq=False)
class MembershipLedger:
    """Round t-1 state needed by the distribution strategy.

    round_index is the round the stored state belongs to (-1 before any
    server update). last_participation maps client id to (round, cluster
    index) of its most recent participation; Condition 1 reads it only for
    members of previous_active_set, whose entries are from round_index.
    """

    round_index: int
    last_participation: Mapping[int, tuple[int, int]]
    previous_active_set: frozenset[int]
    previous_updated_centers: tuple[ParamVector, ...]
    previous_center_mean: ParamVector | None
    seed_model: ParamVector

    @classmethod
    def initial(cls, seed_model: ParamVector) -> "MembershipLedger":
        return cls(
            round_index=-1,
            last_participation={},
            previous_active_set=frozenset(),
            previous_updated_centers=(),
            previous_center_mean=None,
            seed_model=seed_model,
        )


def distribute(
    ledger: MembershipLedger, active_set: Iterable[int], round_index: int
) -> list[DistributionDecision]:
    """Starting model per active client, in ascending client-id order."""
    if ledger.round_index != round_index - 1:
        raise LedgerRoundMismatchError(
            f"ledger holds round {ledger.round_index}, cannot serve round {round_index}"
        )
    decisions = []
    for client_id in sorted(active_set):
        if ledger.round_index < 0:
            decisions.append(
                DistributionDecision(client_id, INITIAL_SEED, ledger.seed_model)
            )
        elif client_id in ledger.previous_active_set:
            _, cluster = ledger.last_participation[client_id]
            decisions.append(
                DistributionDecision(
                    client_id,
                    CONDITION_1,
                    ledger.previous_updated_centers[cluster],
                    cluster_index=cluster,
                )
            )
        else:
            assert ledger.previous_center_mean is not None
            decisions.append(
                DistributionDecision(client_id, CONDITION_2, ledger.previous_center_mean)
            )
    return decisions


def record_round(
    ledger: MembershipLedger,
    round_index: int,
    active_set: Iterable[int],
    assignment: ClusterAssignment,
    updated_centers: Sequence[ParamVector],
) -> MembershipLedger:
    """Fold one finished round into a new ledger.

    assignment.labels[i] is the cluster of the i-th active client in
    ascending client-id order; updated_centers are the post-propagation
    centers those indices refer to. Clients outside the active set keep
    their stale participation entries, which Condition 1 never reads.
    """
    active = sorted(active_set)
    if len(assignment.labels) != len(active):
        raise AssignmentMismatchError(
            f"assignment covers {len(assignment.labels)} clients, active set has {len(active)}"
        )
    if assignment.cluster_count > len(updated_centers):
        raise AssignmentMismatchError(
            f"assignment references {assignment.cluster_count} clusters but "
            f"{len(updated_centers)} centers were provided"
        )
    participation = dict(ledger.last_participation)
    for client_id, cluster in zip(active, assignment.labels):
        participation[client_id] = (round_index, cluster)
    return MembershipLedger(
        round_index=round_index,
        last_participation=participation,
        previous_active_set=frozenset(active),
        previous_updated_centers=tuple(updated_centers),
        previous_center_mean=aggregate_mean(updated_centers),
        seed_model=ledger.seed_model,
    )
