"""Dynamic weighted graph over cluster centers and knowledge propagation.

Edge weights are normalized cosine similarities between center vectors:
negative cosines are clamped to zero and each row (including the self-edge,
whose raw similarity is 1) is normalized to sum to 1. Propagation applies the
resulting row-stochastic matrix to the stacked centers a fixed number of
times, so every propagated center stays a convex combination of the inputs.
The matrix is built once per round and reused across all propagation steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .params import DEGENERATE_NORM, ParamVector, mean_vector, stack

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Complete digraph over cluster centers with a row-stochastic weight matrix."""

    weights: np.ndarray
    round_index: int
    degenerate_nodes: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weight matrix must be square, got {w.shape}")
        if (w < 0).any():
            raise ValueError("weight matrix contains negative entries")
        row_sums = w.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > _ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1, got sums {row_sums}")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]


def build_graph(centers: Sequence[ParamVector], round_index: int = 0) -> WeightedGraph:
    """Weight matrix of clamped, row-normalized pairwise cosine similarities.

    A center with near-zero norm has no direction to compare: its row falls
    back to the identity row (self-weight 1) and its index is reported in
    ``degenerate_nodes``.
    """
    if len(centers) == 0:
        raise ValueError("cannot build a graph over zero centers")
    matrix = stack(centers)
    norms = np.linalg.norm(matrix, axis=1)
    degenerate = norms < DEGENERATE_NORM

    safe_norms = np.where(degenerate, 1.0, norms)
    unit = matrix / safe_norms[:, None]
    raw = np.clip(unit @ unit.T, 0.0, None)
    np.fill_diagonal(raw, 1.0)
    raw[degenerate, :] = 0.0
    raw[:, degenerate] = 0.0

    k = len(centers)
    weights = np.zeros((k, k))
    for i in range(k):
        row_sum = raw[i].sum()
        if row_sum <= 0.0:
            weights[i, i] = 1.0
        else:
            weights[i] = raw[i] / row_sum
    return WeightedGraph(
        weights=weights,
        round_index=round_index,
        degenerate_nodes=tuple(int(i) for i in np.where(degenerate)[0]),
    )


def propagate(
    graph: WeightedGraph, centers: Sequence[ParamVector], depth: int
) -> list[ParamVector]:
    """Apply the weight matrix to the stacked centers ``depth`` times.

    depth = 0 returns the input centers unchanged. Each output center k is
    sum_i weights[k, i] * center_i, iterated with the same frozen matrix.
    """
    if depth < 0:
        raise ValueError(f"propagation depth must be non-negative: {depth}")
    if len(centers) != graph.node_count:
        raise ValueError(
            f"{len(centers)} centers for a graph of {graph.node_count} nodes"
        )
    if depth == 0:
        return list(centers)
    manifest = centers[0].manifest
    state = stack(centers)
    for _ in range(depth):
        state = graph.weights @ state
    return [ParamVector(row, manifest) for row in state]


def aggregate_mean(centers: Sequence[ParamVector]) -> ParamVector:
    """Unweighted mean of the centers (the Condition-2 / collapse model)."""
    return mean_vector(centers)
