"""Clustering and accuracy metrics plus result serialization.

Two sinks per experiment: a delimited CSV with one row per round (directly
plottable) and a JSON detail document carrying the full per-client numbers,
the per-round decision log, weight matrices, and the configuration echoed for
provenance. The JSON document round-trips losslessly back into records.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

CSV_HEADER = "round,mean_accuracy,rand_index,j_objective,effective_k,cond1_count,cond2_count"

CSV_NAME = "metrics.csv"
DETAIL_NAME = "details.json"


@dataclass(frozen=True)
class Partition:
    """Grouping of a fixed item set: labels[i] is the group of items[i]."""

    items: tuple[int, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.items) != len(self.labels):
            raise ValueError(
                f"{len(self.items)} items but {len(self.labels)} labels"
            )
        if len(set(self.items)) != len(self.items):
            raise ValueError("partition items must be unique")


def rand_index(a: Partition, b: Partition) -> float:
    """Pair-counting agreement between two partitions of the same items.

    (pairs grouped together in both + pairs separated in both) / all pairs;
    1.0 means identical groupings. Computed from the contingency table, so it
    stays exact for any item count the simulator produces.
    """
    if set(a.items) != set(b.items):
        raise ValueError("partitions cover different item sets")
    n = len(a.items)
    if n < 2:
        raise ValueError("rand index needs at least two items")

    label_b = dict(zip(b.items, b.labels))
    contingency: Counter[tuple[int, int]] = Counter()
    count_a: Counter[int] = Counter()
    count_b: Counter[int] = Counter()
    for item, group_a in zip(a.items, a.labels):
        group_b = label_b[item]
        contingency[(group_a, group_b)] += 1
        count_a[group_a] += 1
        count_b[group_b] += 1

    def pairs(c: int) -> int:
        return c * (c - 1) // 2

    total_pairs = pairs(n)
    same_both = sum(pairs(c) for c in contingency.values())
    same_a = sum(pairs(c) for c in count_a.values())
    same_b = sum(pairs(c) for c in count_b.values())
    # separated in both = total - (same in a) - (same in b) + (same in both)
    agreements = same_both + (total_pairs - same_a - same_b + same_both)
    return agreements / total_pairs


def mean_accuracy(per_client: Sequence[float]) -> float:
    """Unweighted mean of per-client accuracies."""
    if len(per_client) == 0:
        raise ValueError("mean_accuracy of an empty list")
    return float(sum(per_client) / len(per_client))


@dataclass(frozen=True)
class RoundRecord:
    """Everything measured in one communication round."""

    round_index: int
    active_clients: tuple[int, ...]
    per_client_accuracy: tuple[float, ...]
    mean_accuracy: float
    cond1_count: int
    cond2_count: int
    effective_k: int | None = None
    j_objective: float | None = None
    rand_index: float | None = None
    weight_matrix: tuple[tuple[float, ...], ...] | None = None
    decisions: tuple[tuple[int, str, int | None], ...] = ()

    def csv_row(self) -> str:
        def cell(value: Any) -> str:
            return "" if value is None else str(value)

        return ",".join(
            [
                str(self.round_index),
                str(float(self.mean_accuracy)),
                cell(None if self.rand_index is None else float(self.rand_index)),
                cell(None if self.j_objective is None else float(self.j_objective)),
                cell(self.effective_k),
                str(self.cond1_count),
                str(self.cond2_count),
            ]
        )

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RoundRecord":
        return cls(
            round_index=doc["round_index"],
            active_clients=tuple(doc["active_clients"]),
            per_client_accuracy=tuple(doc["per_client_accuracy"]),
            mean_accuracy=doc["mean_accuracy"],
            cond1_count=doc["cond1_count"],
            cond2_count=doc["cond2_count"],
            effective_k=doc["effective_k"],
            j_objective=doc["j_objective"],
            rand_index=doc["rand_index"],
            weight_matrix=None
            if doc["weight_matrix"] is None
            else tuple(tuple(row) for row in doc["weight_matrix"]),
            decisions=tuple(
                (d[0], d[1], d[2]) for d in doc["decisions"]
            ),
        )


def write_records(
    records: Sequence[RoundRecord],
    destination: str | Path,
    config_echo: Mapping[str, Any] | None = None,
) -> tuple[Path, Path]:
    """Write the CSV and JSON sinks into the destination directory."""
    out_dir = Path(destination)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / CSV_NAME
    detail_path = out_dir / DETAIL_NAME

    lines = [CSV_HEADER] + [r.csv_row() for r in records]
    try:
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        document = {
            "config": dict(config_echo) if config_echo is not None else None,
            "rounds": [asdict(r) for r in records],
        }
        detail_path.write_text(
            json.dumps(document, indent=1, sort_keys=True), encoding="utf-8"
        )
    except OSError as exc:
        raise OSError(f"failed writing results under {out_dir}: {exc}") from exc
    return csv_path, detail_path


def read_detail(path: str | Path) -> tuple[dict[str, Any] | None, list[RoundRecord]]:
    """Parse a JSON detail document back into (config echo, records)."""
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)
    records = [RoundRecord.from_dict(doc) for doc in document["rounds"]]
    return document["config"], records
