"""Simulation driver: sampling, local training, server update, distribution.

One communication round is: sample the active set, hand each active client
its starting model (Conditions 1/2, or a broadcast for the fedavg / as3
variants), run local SGD, apply the server pipeline for the configured
algorithm, fold the result into the membership ledger, and evaluate every
client on its own test set with the model it would hold entering the next
round. Active clients hold their freshly personalized server-side model
(cluster center after propagation); inactive clients keep whatever they last
received.

All randomness flows from the master seed through fixed per-purpose streams
(see :mod:`fedcedar.seeds`), so a full run is a pure function of its config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Collection, Sequence

import numpy as np

from . import seeds
from .clustering import ClusterAssignment, kmeans
from .config import ExperimentConfig
from .data import (
    ClientDataset,
    ExamplePool,
    SyntheticTaskSpec,
    TopologySpec,
    build_topology_population,
    generate_task,
    load_idx,
    load_topology,
    partition_iid,
    partition_shards,
    topology_preset,
)
from .distribution import (
    CONDITION_1,
    CONDITION_2,
    MembershipLedger,
    distribute,
    record_round,
)
from .graph import WeightedGraph, aggregate_mean, build_graph, propagate
from .metrics import Partition, RoundRecord, mean_accuracy, rand_index
from .model import (
    MlpArchitecture,
    TrainConfig,
    evaluate,
    flatten,
    init_model,
    train_local,
    unflatten,
)
from .params import ParamVector, ShapeManifest, mean_vector, stack, weighted_sum

# Decision-log tag for the variants that send one model to every client.
BROADCAST = "broadcast"


def similarity_view(
    vectors: Sequence[ParamVector], space: str
) -> list[ParamVector]:
    """Project vectors onto the subspace used for clustering and edge weights.

    "full" keeps the whole flattened vector. "output_bias" keeps only the
    final bias entry of the manifest: the label-signature coordinates. The
    mean of every other block keeps growing with training rounds, which
    drives all pairwise cosines to 1 and turns the propagation weights
    uniform; the output bias is the one block whose population mean stays
    anchored near zero (cross-entropy gradients sum to zero over classes), so
    similarities computed there keep reflecting label specialization.
    """
    if space == "full":
        return list(vectors)
    if space != "output_bias":
        raise ValueError(f"unknown similarity space {space!r}")
    name, dims, sl = list(vectors[0].manifest.slices())[-1]
    sub_manifest = ShapeManifest(((name, dims),))
    return [ParamVector(v.coefficients[sl], sub_manifest) for v in vectors]


def _group_means(
    uploads: Sequence[ParamVector], assignment: ClusterAssignment
) -> tuple[ParamVector, ...]:
    """Full-vector mean of the uploads in each cluster."""
    matrix = stack(uploads)
    labels = np.asarray(assignment.labels)
    manifest = uploads[0].manifest
    return tuple(
        ParamVector(matrix[labels == c].mean(axis=0), manifest)
        for c in range(assignment.cluster_count)
    )


class PeriodicRounds:
    """The round set Q: rounds whose 1-based index is a multiple of the period."""

    def __init__(self, period: int):
        if period < 1:
            raise ValueError(f"period must be >= 1: {period}")
        self.period = period

    def __contains__(self, round_index: int) -> bool:
        return (round_index + 1) % self.period == 0


def sample_clients(
    client_count: int, active_ratio: float, round_index: int, master_seed: int
) -> frozenset[int]:
    """Uniform sample without replacement of B = round(N * gamma) clients."""
    b = max(1, int(round(client_count * active_ratio)))
    rng = seeds.stream(master_seed, seeds.SAMPLING, round_index)
    chosen = rng.choice(client_count, size=b, replace=False)
    return frozenset(int(c) for c in chosen)


def periodic_activate(
    topology: TopologySpec,
    active_ratio: float,
    round_index: int,
    period_set: Collection[int],
    master_seed: int,
) -> frozenset[int]:
    """Case-study sampling: at rounds in Q, draw ceil(gamma * node size) from
    every node so all nodes are represented; elsewhere fall back to uniform
    sampling over the whole population."""
    if round_index not in period_set:
        return sample_clients(
            topology.client_count, active_ratio, round_index, master_seed
        )
    rng = seeds.stream(master_seed, seeds.SAMPLING, round_index)
    cpn = topology.clients_per_node
    chosen: list[int] = []
    for node_idx in range(topology.node_count):
        members = np.arange(node_idx * cpn, (node_idx + 1) * cpn)
        take = int(np.ceil(active_ratio * len(members)))
        chosen.extend(int(c) for c in rng.choice(members, size=take, replace=False))
    return frozenset(chosen)


@dataclass(frozen=True, eq=False)
class VariantResult:
    """Output of the server pipeline for one round.

    centers / ledger_assignment are what the membership ledger records (for
    broadcast variants: a single model everyone gets). cluster_assignment is
    the raw clustering partition when one was produced, used for Rand-index
    tracking.
    """

    centers: tuple[ParamVector, ...]
    ledger_assignment: ClusterAssignment
    cluster_assignment: ClusterAssignment | None
    effective_k: int | None
    j_objective: float | None
    graph: WeightedGraph | None
    broadcast: bool


def apply_variant(
    variant: str,
    uploads: Sequence[ParamVector],
    train_sizes: Sequence[int],
    config: ExperimentConfig,
    round_index: int,
) -> VariantResult:
    """Run the server-side update for the configured algorithm variant."""
    b = len(uploads)
    if b == 0:
        raise ValueError("no uploaded models to aggregate")
    all_zero = ClusterAssignment(labels=(0,) * b, cluster_sizes=(b,))

    if variant == "fedavg":
        if config.fedavg_weighting == "uniform":
            center = mean_vector(uploads)
        else:
            total = float(sum(train_sizes))
            center = weighted_sum(uploads, [s / total for s in train_sizes])
        return VariantResult(
            centers=(center,),
            ledger_assignment=all_zero,
            cluster_assignment=None,
            effective_k=None,
            j_objective=None,
            graph=None,
            broadcast=True,
        )

    if variant == "as1":
        # every uploaded client is its own node; no clustering step
        identity = ClusterAssignment(labels=tuple(range(b)), cluster_sizes=(1,) * b)
        g = build_graph(similarity_view(uploads, config.similarity_space), round_index)
        propagated = propagate(g, uploads, config.propagation_depth)
        return VariantResult(
            centers=tuple(propagated),
            ledger_assignment=identity,
            cluster_assignment=None,
            effective_k=b,
            j_objective=None,
            graph=g,
            broadcast=False,
        )

    kmeans_seed = seeds.derive_seed(config.master_seed, seeds.KMEANS, round_index)
    state = kmeans(
        similarity_view(uploads, config.similarity_space),
        config.cluster_count,
        kmeans_seed,
    )
    j_final = state.objective_trace[-1]
    effective_k = len(state.centers)
    centers = _group_means(uploads, state.assignment)

    if variant == "as2":
        # clustering only: centers pass through unpropagated
        return VariantResult(
            centers=centers,
            ledger_assignment=state.assignment,
            cluster_assignment=state.assignment,
            effective_k=effective_k,
            j_objective=j_final,
            graph=None,
            broadcast=False,
        )

    g = build_graph(similarity_view(centers, config.similarity_space), round_index)
    propagated = propagate(g, centers, config.propagation_depth)

    if variant == "as3":
        collapsed = aggregate_mean(propagated)
        return VariantResult(
            centers=(collapsed,),
            ledger_assignment=all_zero,
            cluster_assignment=state.assignment,
            effective_k=effective_k,
            j_objective=j_final,
            graph=g,
            broadcast=True,
        )

    if variant == "fedcedar":
        return VariantResult(
            centers=tuple(propagated),
            ledger_assignment=state.assignment,
            cluster_assignment=state.assignment,
            effective_k=effective_k,
            j_objective=j_final,
            graph=g,
            broadcast=False,
        )

    raise ValueError(f"unknown algorithm variant {variant!r}")


def materialize_datasets(
    config: ExperimentConfig,
) -> tuple[list[ClientDataset], np.ndarray | None, TopologySpec | None]:
    """Build the client datasets (and ground truth in topology mode)."""
    data_seed = seeds.derive_seed(config.master_seed, seeds.DATA)
    dc = config.data

    if dc.idx_images is not None and dc.idx_labels is not None:
        pool = load_idx(dc.idx_images, dc.idx_labels)
    else:
        spec = SyntheticTaskSpec(
            class_count=dc.class_count,
            input_dim=dc.input_dim,
            noise_sigma=dc.noise_sigma,
            examples_per_class=dc.examples_per_class,
            rng_seed=data_seed,
            mean_scale=dc.mean_scale,
        )
        pool = generate_task(spec)

    if dc.partition == "topology":
        if isinstance(dc.topology, int):
            topo = topology_preset(dc.topology, dc.clients_per_node)
        else:
            topo = load_topology(dc.topology)
        clients, ground_truth = build_topology_population(topo, pool, data_seed)
        return clients, ground_truth, topo
    if dc.partition == "iid":
        return partition_iid(pool, config.client_count, data_seed), None, None
    return partition_shards(pool, config.client_count, dc.shard, data_seed), None, None


class Simulation:
    """Stateful round-by-round simulation of one experiment."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.datasets, self.ground_truth, self.topology = materialize_datasets(config)
        self.client_count = len(self.datasets)

        input_dim = self.datasets[0].train_features.shape[1]
        class_count = max(len(d.label_histogram) for d in self.datasets)
        self.architecture = MlpArchitecture(
            (input_dim, *config.hidden_sizes, class_count)
        )
        seed_model = init_model(
            self.architecture,
            seeds.derive_seed(config.master_seed, seeds.MODEL_INIT),
            config.init_scale,
        )
        self.seed_vector = flatten(seed_model)
        self.ledger = MembershipLedger.initial(self.seed_vector)
        self.held: list[ParamVector] = [self.seed_vector] * self.client_count
        self.broadcast_model = self.seed_vector
        self.round_index = 0

        # Inspection handles for the most recent round (testing / debugging).
        self.last_active: tuple[int, ...] | None = None
        self.last_start_models: dict[int, ParamVector] | None = None
        self.last_result: VariantResult | None = None

    def _active_set(self, round_index: int) -> frozenset[int]:
        pa = self.config.periodic_activation
        if pa is not None and self.topology is not None:
            return periodic_activate(
                self.topology,
                self.config.active_ratio,
                round_index,
                PeriodicRounds(pa.period),
                self.config.master_seed,
            )
        return sample_clients(
            self.client_count,
            self.config.active_ratio,
            round_index,
            self.config.master_seed,
        )

    def run_round(self) -> RoundRecord:
        cfg = self.config
        t = self.round_index
        active = self._active_set(t)
        order = sorted(active)

        # 1. starting models
        if cfg.algorithm in ("fedavg", "as3"):
            start = {n: self.broadcast_model for n in order}
            decision_log = tuple((n, BROADCAST, None) for n in order)
            cond1 = cond2 = 0
        else:
            decisions = distribute(self.ledger, active, t)
            start = {d.client_id: d.model for d in decisions}
            decision_log = tuple(
                (d.client_id, d.source, d.cluster_index) for d in decisions
            )
            cond1 = sum(1 for d in decisions if d.source == CONDITION_1)
            cond2 = sum(1 for d in decisions if d.source == CONDITION_2)

        # 2. local training
        uploads = []
        sizes = []
        for n in order:
            train_cfg = TrainConfig(
                learning_rate=cfg.train.learning_rate,
                local_epochs=cfg.train.local_epochs,
                batch_size=cfg.train.batch_size,
                rng_seed=seeds.derive_seed(
                    cfg.master_seed, seeds.LOCAL_TRAIN, t, n
                ),
            )
            trained = train_local(unflatten(start[n]), self.datasets[n], train_cfg)
            uploads.append(flatten(trained))
            sizes.append(self.datasets[n].train_size)

        # 3. server pipeline
        result = apply_variant(cfg.algorithm, uploads, sizes, cfg, t)

        # 4. bookkeeping
        self.ledger = record_round(
            self.ledger, t, active, result.ledger_assignment, result.centers
        )
        if result.broadcast:
            self.broadcast_model = result.centers[0]
            self.held = [result.centers[0]] * self.client_count
        else:
            for i, n in enumerate(order):
                self.held[n] = result.centers[result.ledger_assignment.labels[i]]

        # 5. evaluation over all clients with the models they now hold
        per_acc = tuple(
            evaluate(unflatten(self.held[n]), self.datasets[n])
            for n in range(self.client_count)
        )

        # 6. Rand index against the topology ground truth at rounds in Q
        ri = None
        pa = cfg.periodic_activation
        if (
            pa is not None
            and pa.track_rand_index
            and self.ground_truth is not None
            and result.cluster_assignment is not None
            and t in PeriodicRounds(pa.period)
        ):
            produced = Partition(tuple(order), result.cluster_assignment.labels)
            truth = Partition(
                tuple(order), tuple(int(self.ground_truth[n]) for n in order)
            )
            ri = rand_index(produced, truth)

        record = RoundRecord(
            round_index=t,
            active_clients=tuple(order),
            per_client_accuracy=per_acc,
            mean_accuracy=mean_accuracy(per_acc),
            cond1_count=cond1,
            cond2_count=cond2,
            effective_k=result.effective_k,
            j_objective=result.j_objective,
            rand_index=ri,
            weight_matrix=None
            if result.graph is None
            else tuple(tuple(float(x) for x in row) for row in result.graph.weights),
            decisions=decision_log,
        )

        self.last_active = tuple(order)
        self.last_start_models = start
        self.last_result = result
        self.round_index = t + 1
        return record

    def run(
        self, sink: Callable[[RoundRecord], None] | None = None
    ) -> list[RoundRecord]:
        """Execute the configured number of rounds, streaming records to sink."""
        records = []
        for _ in range(self.config.rounds):
            record = self.run_round()
            records.append(record)
            if sink is not None:
                sink(record)
        return records


def run_experiment(
    config: ExperimentConfig, sink: Callable[[RoundRecord], None] | None = None
) -> list[RoundRecord]:
    """Run a full experiment from a config; records stream to sink as produced."""
    return Simulation(config).run(sink)
