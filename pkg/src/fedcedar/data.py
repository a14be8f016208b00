"""Client dataset generation: IID / shard / topology partitions plus IDX files.

The synthetic base task is a Gaussian-blob classification problem sized so a
full simulation finishes in seconds on one core. Partitioners slice one
labeled pool into per-client datasets; every client is split 80/20 into train
and test with the test labels mirroring the train label distribution.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeds import stream

TRAIN_FRACTION = 0.8


class IdxFormatError(ValueError):
    """Base class for IDX parsing failures."""


class IdxMagicError(IdxFormatError):
    """File does not start with the expected IDX magic number."""


class IdxTruncatedError(IdxFormatError):
    """File ends before the payload promised by its header."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the example count."""


@dataclass(frozen=True, eq=False)
class ExamplePool:
    """A labeled example pool: features (n, d) and integer labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or labels.ndim != 1 or len(feats) != len(labels):
            raise ValueError(f"inconsistent pool shapes {feats.shape} / {labels.shape}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's train/test split plus its train label histogram."""

    client_id: int
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    label_histogram: np.ndarray

    def __post_init__(self) -> None:
        train_set = set(np.unique(self.train_labels).tolist())
        test_set = set(np.unique(self.test_labels).tolist())
        if not test_set <= train_set:
            raise ValueError(
                f"client {self.client_id}: test labels {sorted(test_set - train_set)} "
                "missing from train set"
            )
        counts = np.bincount(self.train_labels, minlength=len(self.label_histogram))
        if not np.array_equal(counts, self.label_histogram):
            raise ValueError(f"client {self.client_id}: label histogram inconsistent")

    @property
    def train_size(self) -> int:
        return len(self.train_labels)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Gaussian classification task. class_means default to a seeded draw."""

    class_count: int = 10
    input_dim: int = 32
    noise_sigma: float = 1.0
    examples_per_class: int = 1250
    rng_seed: int = 0
    mean_scale: float = 3.0
    class_means: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.class_count < 1 or self.input_dim < 1 or self.examples_per_class < 1:
            raise ValueError("class_count, input_dim, examples_per_class must be positive")
        if self.noise_sigma <= 0:
            raise ValueError(f"noise_sigma must be positive: {self.noise_sigma}")
        if self.class_means is not None:
            means = np.ascontiguousarray(self.class_means, dtype=np.float64)
            if means.shape != (self.class_count, self.input_dim):
                raise ValueError(
                    f"class_means shape {means.shape} != "
                    f"({self.class_count}, {self.input_dim})"
                )
            object.__setattr__(self, "class_means", means)

    def resolved_means(self) -> np.ndarray:
        """Class means: mean_scale times random orthonormal directions.

        Orthonormal (rather than raw Gaussian) directions make every class
        pair exactly equidistant, so no class is intrinsically easier than
        another and personalization effects are not confounded by class
        difficulty. Requires input_dim >= class_count.
        """
        if self.class_means is not None:
            return self.class_means
        if self.input_dim < self.class_count:
            raise ValueError(
                f"input_dim {self.input_dim} < class_count {self.class_count}: "
                "cannot place orthonormal class means"
            )
        rng = stream(self.rng_seed, 0)
        gaussian = rng.standard_normal((self.input_dim, self.input_dim))
        q, r = np.linalg.qr(gaussian)
        q *= np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
        return self.mean_scale * q[: self.class_count]


@dataclass(frozen=True)
class TopologySpec:
    """Structured client population: nodes with label sets, edges shared-label derived."""

    nodes: tuple[tuple[int, frozenset[int]], ...]
    clients_per_node: int = 20

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ValueError("topology needs at least one node")
        ids = [node_id for node_id, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate node ids {ids}")
        if self.clients_per_node < 1:
            raise ValueError("clients_per_node must be positive")
        normalized = tuple(
            (int(node_id), frozenset(int(x) for x in labels))
            for node_id, labels in self.nodes
        )
        object.__setattr__(self, "nodes", normalized)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def client_count(self) -> int:
        return self.node_count * self.clients_per_node

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        """Undirected edges between nodes whose label sets intersect."""
        found = []
        for i in range(len(self.nodes)):
            for j in range(i + 1, len(self.nodes)):
                if self.nodes[i][1] & self.nodes[j][1]:
                    found.append((self.nodes[i][0], self.nodes[j][0]))
        return tuple(found)

    @property
    def label_union(self) -> frozenset[int]:
        out: frozenset[int] = frozenset()
        for _, labels in self.nodes:
            out = out | labels
        return out


# Chained shared labels over the 10 default classes: adjacent nodes share one
# label, non-adjacent nodes share none.
_TOPOLOGY_PRESETS = {
    1: ({0, 1, 2}, {2, 3, 4}, {4, 5, 6}),
    2: ({0, 1, 2}, {2, 3, 4}, {4, 5, 6}, {6, 7, 8}),
    3: ({0, 1, 2}, {2, 3, 4}, {4, 5, 6}, {6, 7, 8}, {8, 9}),
}


def topology_preset(which: int, clients_per_node: int = 20) -> TopologySpec:
    """Built-in structured topologies 1 (3 nodes), 2 (4 nodes), 3 (5 nodes)."""
    if which not in _TOPOLOGY_PRESETS:
        raise ValueError(f"unknown topology preset {which}; choose 1, 2, or 3")
    label_sets = _TOPOLOGY_PRESETS[which]
    nodes = tuple((i, frozenset(s)) for i, s in enumerate(label_sets))
    return TopologySpec(nodes, clients_per_node)


def load_topology(path: str | Path) -> TopologySpec:
    """Read a topology file: {"clients_per_node": n, "nodes": [{"id", "labels"}]}."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    unknown = set(doc) - {"clients_per_node", "nodes"}
    if unknown:
        raise ValueError(f"unknown topology keys {sorted(unknown)} in {path}")
    nodes = []
    for entry in doc["nodes"]:
        unknown = set(entry) - {"id", "labels"}
        if unknown:
            raise ValueError(f"unknown node keys {sorted(unknown)} in {path}")
        nodes.append((int(entry["id"]), frozenset(int(x) for x in entry["labels"])))
    return TopologySpec(tuple(nodes), int(doc.get("clients_per_node", 20)))


def generate_task(spec: SyntheticTaskSpec) -> ExamplePool:
    """Draw examples_per_class points from N(mean_c, sigma^2 I) for each class."""
    means = spec.resolved_means()
    rng = stream(spec.rng_seed, 1)
    features = []
    labels = []
    for c in range(spec.class_count):
        noise = rng.standard_normal((spec.examples_per_class, spec.input_dim))
        features.append(means[c] + spec.noise_sigma * noise)
        labels.append(np.full(spec.examples_per_class, c, dtype=np.int64))
    return ExamplePool(np.concatenate(features), np.concatenate(labels))


def _split_train_test(
    indices: np.ndarray, labels: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """80/20 split of one client's share, stratified by label.

    Per-label test counts round to the nearest integer, always leaving at
    least one train example per label so test labels stay a subset of train
    labels. A share of two or more examples always yields a non-empty test
    set (the largest label donates one example if rounding gave none).
    """
    test_parts = []
    train_parts = []
    label_values, counts = np.unique(labels[indices], return_counts=True)
    for label in label_values:
        members = indices[labels[indices] == label]
        members = members[rng.permutation(len(members))]
        n_test = int(round((1.0 - TRAIN_FRACTION) * len(members)))
        n_test = min(n_test, len(members) - 1)
        test_parts.append(members[:n_test])
        train_parts.append(members[n_test:])
    test_idx = np.concatenate(test_parts) if test_parts else np.empty(0, dtype=np.int64)
    train_idx = np.concatenate(train_parts)
    if len(test_idx) == 0 and counts.max() >= 2:
        donor = int(label_values[np.argmax(counts)])
        donor_members = train_idx[labels[train_idx] == donor]
        moved = donor_members[-1]
        train_idx = train_idx[train_idx != moved]
        test_idx = np.array([moved], dtype=np.int64)
    return np.sort(train_idx), np.sort(test_idx)


def _make_client(
    client_id: int,
    pool: ExamplePool,
    indices: np.ndarray,
    class_count: int,
    rng: np.random.Generator,
) -> ClientDataset:
    train_idx, test_idx = _split_train_test(indices, pool.labels, rng)
    return ClientDataset(
        client_id=client_id,
        train_features=pool.features[train_idx],
        train_labels=pool.labels[train_idx],
        test_features=pool.features[test_idx],
        test_labels=pool.labels[test_idx],
        label_histogram=np.bincount(pool.labels[train_idx], minlength=class_count),
    )


def partition_iid(
    pool: ExamplePool, client_count: int, rng_seed: int
) -> list[ClientDataset]:
    """Random disjoint near-equal shares, one per client."""
    if client_count < 1:
        raise ValueError("client_count must be positive")
    if len(pool) < client_count:
        raise ValueError(f"pool of {len(pool)} cannot serve {client_count} clients")
    rng = stream(rng_seed, 2)
    order = rng.permutation(len(pool))
    shares = np.array_split(order, client_count)
    class_count = pool.class_count
    return [
        _make_client(cid, pool, share, class_count, rng)
        for cid, share in enumerate(shares)
    ]


def partition_shards(
    pool: ExamplePool, client_count: int, shard: int, rng_seed: int
) -> list[ClientDataset]:
    """Label-sorted shard dealing: each client receives exactly `shard` shards.

    Shards are cut inside label groups (never straddling a label boundary), so
    a client holding s shards sees at most s distinct labels. Shard counts per
    label follow the label frequencies by largest remainder, with every
    present label receiving at least one shard.
    """
    if shard < 1:
        raise ValueError("shard must be >= 1")
    total_shards = client_count * shard
    if len(pool) < total_shards:
        raise ValueError(
            f"pool of {len(pool)} cannot fill {total_shards} shards"
        )
    label_values, label_counts = np.unique(pool.labels, return_counts=True)
    if total_shards < len(label_values):
        raise ValueError(
            f"{total_shards} shards cannot cover {len(label_values)} labels with "
            "single-label shards; increase client_count or shard"
        )

    # Largest-remainder allocation of shard counts per label.
    quotas = label_counts / len(pool) * total_shards
    alloc = np.maximum(np.floor(quotas).astype(int), 1)
    alloc = np.minimum(alloc, label_counts)
    while alloc.sum() > total_shards:
        candidates = np.where(alloc > 1)[0]
        shrink = candidates[np.argmin((quotas - alloc)[candidates])]
        alloc[shrink] -= 1
    remainders = quotas - alloc
    while alloc.sum() < total_shards:
        candidates = np.where(alloc < label_counts)[0]
        grow = candidates[np.argmax(remainders[candidates])]
        alloc[grow] += 1
        remainders[grow] -= 1.0

    rng = stream(rng_seed, 3)
    shards: list[np.ndarray] = []
    for label, n_shards in zip(label_values, alloc):
        members = np.where(pool.labels == label)[0]
        members = members[rng.permutation(len(members))]
        shards.extend(np.array_split(members, n_shards))

    deal = rng.permutation(total_shards)
    class_count = pool.class_count
    clients = []
    for cid in range(client_count):
        mine = deal[cid * shard : (cid + 1) * shard]
        share = np.concatenate([shards[s] for s in mine])
        clients.append(_make_client(cid, pool, share, class_count, rng))
    return clients


def build_topology_population(
    spec: TopologySpec, pool: ExamplePool, rng_seed: int
) -> tuple[list[ClientDataset], np.ndarray]:
    """Populate each topology node with clients drawing only the node's labels.

    Every pool example whose label appears in some node is dealt to exactly
    one client among those entitled to it. Returns the clients plus the
    ground-truth client->node assignment used as the clustering reference.
    """
    pool_labels = set(np.unique(pool.labels).tolist())
    missing = spec.label_union - pool_labels
    if missing:
        raise ValueError(f"pool lacks labels {sorted(missing)} required by topology")

    node_of_client = np.repeat(np.arange(spec.node_count), spec.clients_per_node)
    takers: dict[int, list[int]] = {label: [] for label in spec.label_union}
    for node_idx, (_, labels) in enumerate(spec.nodes):
        for cid in range(
            node_idx * spec.clients_per_node, (node_idx + 1) * spec.clients_per_node
        ):
            for label in labels:
                takers[label].append(cid)

    rng = stream(rng_seed, 4)
    client_indices: list[list[np.ndarray]] = [[] for _ in range(spec.client_count)]
    for label in sorted(takers):
        members = np.where(pool.labels == label)[0]
        members = members[rng.permutation(len(members))]
        chunks = np.array_split(members, len(takers[label]))
        for cid, chunk in zip(takers[label], chunks):
            client_indices[cid].append(chunk)

    class_count = pool.class_count
    clients = []
    for cid in range(spec.client_count):
        share = np.concatenate(client_indices[cid])
        clients.append(_make_client(cid, pool, share, class_count, rng))
    return clients, node_of_client


_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


def _read_header(raw: bytes, path: str, magic: int, dim_count: int) -> tuple[list[int], int]:
    header_len = 4 * (1 + dim_count)
    if len(raw) < header_len:
        raise IdxTruncatedError(f"{path}: header truncated at {len(raw)} bytes")
    fields = struct.unpack(f">{1 + dim_count}i", raw[:header_len])
    if fields[0] != magic:
        raise IdxMagicError(f"{path}: magic {fields[0]:#010x}, expected {magic:#010x}")
    return list(fields[1:]), header_len


def load_idx(images_path: str | Path, labels_path: str | Path) -> ExamplePool:
    """Parse an IDX image/label file pair into a pool with [0, 1] features."""
    raw_images = Path(images_path).read_bytes()
    raw_labels = Path(labels_path).read_bytes()

    (img_count, rows, cols), offset = _read_header(
        raw_images, str(images_path), _IDX_IMAGE_MAGIC, 3
    )
    expected = img_count * rows * cols
    payload = raw_images[offset:]
    if len(payload) < expected:
        raise IdxTruncatedError(
            f"{images_path}: {len(payload)} payload bytes, header promises {expected}"
        )

    (label_count,), label_offset = _read_header(
        raw_labels, str(labels_path), _IDX_LABEL_MAGIC, 1
    )
    label_payload = raw_labels[label_offset:]
    if len(label_payload) < label_count:
        raise IdxTruncatedError(
            f"{labels_path}: {len(label_payload)} payload bytes, header promises {label_count}"
        )
    if img_count != label_count:
        raise IdxCountMismatchError(
            f"{img_count} images but {label_count} labels"
        )

    pixels = np.frombuffer(payload[:expected], dtype=np.uint8)
    features = pixels.reshape(img_count, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(label_payload[:label_count], dtype=np.uint8).astype(np.int64)
    return ExamplePool(features, labels)
