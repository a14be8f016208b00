"""Clustered personalized federated learning simulator.

Server update per round: k-means over the uploaded client models, a dynamic
weighted graph over the cluster centers, multi-step knowledge propagation,
and precise personalized model distribution. Ships a FedAvg baseline, the
as1/as2/as3 ablation variants, synthetic non-IID data generation, and a
structured-topology case study tracked with the Rand index.
"""

from .clustering import ClusterAssignment, ClusterState, assign_to_nearest, kmeans, objective
from .config import (
    ConfigError,
    DataConfig,
    ExperimentConfig,
    PeriodicActivation,
    load_config,
)
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
    DistributionDecision,
    MembershipLedger,
    distribute,
    record_round,
)
from .graph import WeightedGraph, aggregate_mean, build_graph, propagate
from .metrics import Partition, RoundRecord, mean_accuracy, rand_index, write_records
from .model import (
    LocalModel,
    MlpArchitecture,
    TrainConfig,
    ce_loss,
    evaluate,
    flatten,
    forward,
    gradient,
    init_model,
    train_local,
    unflatten,
)
from .params import (
    ParamVector,
    ShapeManifest,
    cosine_similarity,
    euclidean_distance_sq,
    weighted_sum,
)
from .simulation import (
    Simulation,
    apply_variant,
    periodic_activate,
    run_experiment,
    sample_clients,
)

__version__ = "0.1.0"
