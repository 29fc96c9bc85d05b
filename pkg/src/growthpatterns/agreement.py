"""Ordering clusters by trajectory level and comparing two clusterings."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from growthpatterns.cohort import TrajectoryMatrix
from growthpatterns.errors import DataError

MERGE_SCHEMES = {
    "none": None,
    "paper_k4": (0, 1, 1, 2),
    "paper_k5": (0, 0, 1, 1, 2),
}
MERGED_NAMES = ("bottom", "middle", "top")


@dataclass(frozen=True)
class OrderedClustering:
    """Labels renumbered so that 0 is the bottom-most level and k-1 the topmost.

    ``level_means`` is the grand mean (over visits) of each level's mean
    trajectory; it is None when levels were read back from a file.
    ``ties`` is True when two source clusters had exactly equal level
    means and were ordered by original index.
    """

    child_ids: tuple[str, ...]
    labels: np.ndarray
    level_means: np.ndarray | None = None
    source: str = ""
    ties: bool = False

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp)
        if labels.shape != (len(self.child_ids),):
            raise DataError("one label per child expected")
        if len(set(self.child_ids)) != len(self.child_ids):
            raise DataError("duplicate child ids in clustering")
        if labels.size and labels.min() < 0:
            raise DataError("levels must be non-negative")
        labels.setflags(write=False)
        object.__setattr__(self, "child_ids", tuple(self.child_ids))
        object.__setattr__(self, "labels", labels)
        if self.level_means is not None:
            means = np.asarray(self.level_means, dtype=float)
            if means.shape != (self.k,):
                raise DataError("one level mean per level expected")
            object.__setattr__(self, "level_means", means)

    @property
    def k(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def level_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def as_dict(self) -> dict[str, int]:
        return {cid: int(lab) for cid, lab in zip(self.child_ids, self.labels)}

    def aligned(self, child_ids: Sequence[str]) -> np.ndarray:
        lookup = self.as_dict()
        return np.array([lookup[c] for c in child_ids], dtype=np.intp)


def order_clusters_by_level(
    assignments, matrix: TrajectoryMatrix, k: int | None = None, source: str = ""
) -> OrderedClustering:
    """Rank clusters by the grand mean of their mean trajectory, ascending.

    With ``k`` given, every cluster index 0..k-1 must be used.
    """
    assignments = np.asarray(assignments)
    if assignments.shape != (matrix.n_children,):
        raise DataError("one assignment per matrix row expected")
    used = np.unique(assignments)
    if k is not None and not np.array_equal(used, np.arange(k)):
        missing = sorted(set(range(k)) - set(used.tolist()))
        raise DataError(f"empty cluster(s) {missing}")
    grand = np.array([matrix.values[assignments == c].mean(axis=0).mean() for c in used])
    order = np.lexsort((used, grand))
    ties = bool(np.any(np.diff(grand[order]) == 0))
    rank = {used[i]: r for r, i in enumerate(order)}
    labels = np.array([rank[a] for a in assignments], dtype=np.intp)
    return OrderedClustering(matrix.child_ids, labels, grand[order], source, ties)


def _check_same_children(a: OrderedClustering, b: OrderedClustering) -> tuple[str, ...]:
    if set(a.child_ids) != set(b.child_ids):
        only_a = sorted(set(a.child_ids) - set(b.child_ids))[:5]
        only_b = sorted(set(b.child_ids) - set(a.child_ids))[:5]
        raise DataError(f"child id sets differ (only in a: {only_a}, only in b: {only_b})")
    return tuple(sorted(a.child_ids))


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    row_source: str = "a"
    col_source: str = "b"

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def off_diagonal(self) -> int:
        k = min(self.counts.shape)
        return self.total - int(np.trace(self.counts[:k, :k]))

    def to_dict(self) -> dict:
        return {
            "row_source": self.row_source,
            "col_source": self.col_source,
            "counts": self.counts.tolist(),
            "total": self.total,
            "off_diagonal": self.off_diagonal,
        }

    def to_text(self) -> str:
        """Aligned table, rows = row_source levels, columns = col_source levels."""
        k_a, k_b = self.counts.shape
        corner = f"{self.row_source} \\ {self.col_source}"
        head = [corner] + [f"C{j + 1}" for j in range(k_b)]
        rows = [[f"C{i + 1}"] + [str(int(v)) for v in self.counts[i]] for i in range(k_a)]
        widths = [max(len(r[c]) for r in [head] + rows) for c in range(k_b + 1)]
        lines = []
        for r in [head] + rows:
            lines.append("  ".join([r[0].ljust(widths[0])] + [r[c].rjust(widths[c]) for c in range(1, k_b + 1)]))
        return "\n".join(lines) + "\n"


def confusion_matrix(a: OrderedClustering, b: OrderedClustering) -> ConfusionMatrix:
    ids = _check_same_children(a, b)
    la, lb = a.aligned(ids), b.aligned(ids)
    counts = np.zeros((a.k, b.k), dtype=np.int64)
    np.add.at(counts, (la, lb), 1)
    return ConfusionMatrix(counts, a.source or "a", b.source or "b")


@dataclass(frozen=True)
class ConsistencyReport:
    consistent_groups: dict[int, frozenset[str]]
    inconsistent_ids: frozenset[str]
    n_consistent: int = field(init=False)
    n_inconsistent: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n_consistent", sum(len(g) for g in self.consistent_groups.values()))
        object.__setattr__(self, "n_inconsistent", len(self.inconsistent_ids))

    def group_sizes(self) -> list[int]:
        return [len(self.consistent_groups[level]) for level in sorted(self.consistent_groups)]

    def to_dict(self) -> dict:
        return {
            "n_consistent": self.n_consistent,
            "n_inconsistent": self.n_inconsistent,
            "consistent_group_sizes": self.group_sizes(),
            "consistent_groups": {str(lv): sorted(g) for lv, g in sorted(self.consistent_groups.items())},
            "inconsistent_ids": sorted(self.inconsistent_ids),
        }


def consistency_partition(a: OrderedClustering, b: OrderedClustering) -> ConsistencyReport:
    """Split children by whether both clusterings put them at the same level."""
    if a.k != b.k:
        raise DataError(f"clusterings have different numbers of levels ({a.k} vs {b.k})")
    ids = _check_same_children(a, b)
    la, lb = a.aligned(ids), b.aligned(ids)
    groups = {level: frozenset(c for c, x, y in zip(ids, la, lb) if x == y == level) for level in range(a.k)}
    inconsistent = frozenset(c for c, x, y in zip(ids, la, lb) if x != y)
    return ConsistencyReport(groups, inconsistent)


def merge_levels(c: OrderedClustering, scheme: str = "none") -> OrderedClustering:
    """Collapse levels into bottom/middle/top groups.

    ``paper_k4`` joins the two middle levels of a 4-level clustering;
    ``paper_k5`` additionally joins the two lowest levels of a 5-level one.
    """
    if scheme not in MERGE_SCHEMES:
        raise DataError(f"unknown merge scheme {scheme!r}; choose from {sorted(MERGE_SCHEMES)}")
    mapping = MERGE_SCHEMES[scheme]
    if mapping is None:
        return c
    if c.k != len(mapping):
        raise DataError(f"scheme {scheme} needs k={len(mapping)}, clustering has k={c.k}")
    mapping = np.array(mapping, dtype=np.intp)
    labels = mapping[c.labels]
    means = None
    if c.level_means is not None:
        sizes = c.level_sizes().astype(float)
        means = np.array(
            [np.average(c.level_means[mapping == g], weights=sizes[mapping == g]) for g in range(mapping.max() + 1)]
        )
    return OrderedClustering(c.child_ids, labels, means, c.source, c.ties)


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index from the contingency table of two labelings."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("labelings must be 1-D and of equal length")
    n = a.size
    if n < 2:
        raise DataError("ARI needs at least two items")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    sum_cells = sum(comb(int(v), 2) for v in table.ravel())
    sum_a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(n, 2)
    expected = sum_a * sum_b / total
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        # both labelings trivial in the same way (all one cluster or all singletons)
        return 1.0 if sum_cells == maximum else 0.0
    return float((sum_cells - expected) / (maximum - expected))


def read_levels_csv(stream, source: str = "") -> OrderedClustering:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["child_id", "level"]:
        raise DataError(f"bad assignments header {header!r}; expected child_id,level")
    ids, labels = [], []
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"line {line}: expected 2 fields")
        try:
            labels.append(int(row[1]))
        except ValueError:
            raise DataError(f"line {line}: level is not an integer: {row[1]!r}") from None
        ids.append(row[0].strip())
    if not ids:
        raise DataError("assignments file has no rows")
    return OrderedClustering(tuple(ids), np.array(labels), None, source)


def write_levels_csv(c: OrderedClustering, stream) -> None:
    stream.write("child_id,level\n")
    for cid, lab in sorted(zip(c.child_ids, c.labels.tolist())):
        stream.write(f"{cid},{lab}\n")


def report_json(cm: ConfusionMatrix, report: ConsistencyReport | None = None) -> str:
    data = {"confusion": cm.to_dict()}
    if report is not None:
        data["consistency"] = report.to_dict()
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
