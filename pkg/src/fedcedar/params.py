"""Flat parameter vectors and the vector algebra used by the server.

A :class:`ParamVector` is the universal currency for client models, cluster
centers, and every aggregation step: a 1-D float64 array plus a
:class:`ShapeManifest` that records how the flat coefficients map back onto
named tensors. Flattening order is the manifest's declaration order with each
tensor laid out row-major, which keeps the layout deterministic across runs
and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Below this L2 norm a vector has no usable direction for cosine similarity.
DEGENERATE_NORM = 1e-12


class ManifestMismatchError(ValueError):
    """Two vectors (or a vector and an architecture) disagree on layout."""


class DegenerateVectorError(ValueError):
    """Cosine similarity requested for a vector with near-zero norm."""


@dataclass(frozen=True)
class ShapeManifest:
    """Ordered list of (tensor name, dimensions) describing the flat layout."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self) -> None:
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate tensor names in manifest: {names}")
        for name, dims in self.entries:
            if len(dims) == 0 or any(d <= 0 for d in dims):
                raise ValueError(f"tensor {name!r} has invalid dimensions {dims}")

    @property
    def total_size(self) -> int:
        return sum(math.prod(dims) for _, dims in self.entries)

    def slices(self) -> Iterable[tuple[str, tuple[int, ...], slice]]:
        """Yield (name, dims, slice into the flat vector) in layout order."""
        offset = 0
        for name, dims in self.entries:
            size = math.prod(dims)
            yield name, dims, slice(offset, offset + size)
            offset += size


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable flat coefficient vector tied to a shape manifest."""

    coefficients: np.ndarray
    manifest: ShapeManifest

    def __post_init__(self) -> None:
        coeffs = np.ascontiguousarray(self.coefficients, dtype=np.float64).reshape(-1)
        if coeffs.size != self.manifest.total_size:
            raise ManifestMismatchError(
                f"{coeffs.size} coefficients for a manifest of size "
                f"{self.manifest.total_size}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("parameter vector contains non-finite coefficients")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def size(self) -> int:
        return self.coefficients.size


def _require_same_manifest(a: ParamVector, b: ParamVector) -> None:
    if a.manifest != b.manifest:
        raise ManifestMismatchError("vectors carry different shape manifests")


def stack(vectors: Sequence[ParamVector]) -> np.ndarray:
    """Stack vectors into a (count, size) matrix; all must share a manifest."""
    if not vectors:
        raise ValueError("cannot stack an empty vector list")
    first = vectors[0]
    for v in vectors[1:]:
        _require_same_manifest(first, v)
    return np.stack([v.coefficients for v in vectors])


def euclidean_distance_sq(a: ParamVector, b: ParamVector) -> float:
    """Squared Euclidean distance sum_i (a_i - b_i)^2."""
    _require_same_manifest(a, b)
    diff = a.coefficients - b.coefficients
    return float(diff @ diff)


def cosine_similarity(a: ParamVector, b: ParamVector) -> float:
    """Cosine of the angle between two vectors, in [-1, 1].

    Raises :class:`DegenerateVectorError` when either norm is below
    ``DEGENERATE_NORM``; the caller decides the fallback rather than this
    function silently picking a value.
    """
    _require_same_manifest(a, b)
    norm_a = float(np.linalg.norm(a.coefficients))
    norm_b = float(np.linalg.norm(b.coefficients))
    if norm_a < DEGENERATE_NORM or norm_b < DEGENERATE_NORM:
        raise DegenerateVectorError(
            f"cosine similarity undefined for near-zero norms ({norm_a}, {norm_b})"
        )
    value = float(a.coefficients @ b.coefficients) / (norm_a * norm_b)
    return min(1.0, max(-1.0, value))


def weighted_sum(vectors: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    """Element-wise sum_i weights[i] * vectors[i]."""
    if len(vectors) == 0:
        raise ValueError("weighted_sum needs at least one vector")
    if len(vectors) != len(weights):
        raise ValueError(
            f"{len(vectors)} vectors but {len(weights)} weights"
        )
    matrix = stack(vectors)
    w = np.asarray(weights, dtype=np.float64)
    return ParamVector(w @ matrix, vectors[0].manifest)


def mean_vector(vectors: Sequence[ParamVector]) -> ParamVector:
    """Unweighted arithmetic mean of the vectors."""
    if len(vectors) == 0:
        raise ValueError("mean of an empty vector list")
    return ParamVector(stack(vectors).mean(axis=0), vectors[0].manifest)
