"""Ward-linkage agglomerative clustering of scalar points.

The merge criterion is the Ward cost

    |A| |B| / (|A| + |B|) * (mean(A) - mean(B))^2

with |A| the number of member points (not their weights) and mean(A) the
arithmetic mean of member values. Point weights are carried along only to
report weighted cluster means. Equal costs are broken by the lexicographically
smallest pair of cluster keys, where a cluster's key is its smallest member id,
so the dendrogram does not depend on input order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from glate.errors import BadK, TooFewPoints, ValidationError


@dataclass(frozen=True)
class WeightedPoint:
    id: Hashable
    value: float
    weight: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValidationError(f"point {self.id!r} has non-finite value")
        if not self.weight > 0:
            raise ValidationError(f"point {self.id!r} has non-positive weight")


@dataclass(frozen=True)
class MergeStep:
    a: tuple
    b: tuple
    cost: float


@dataclass(frozen=True)
class MergePath:
    leaves: tuple
    steps: tuple[MergeStep, ...]
    values: dict = field(repr=False)
    weights: dict = field(repr=False)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)


@dataclass(frozen=True)
class Partition:
    """A cut of the dendrogram.

    Clusters are indexed by ascending smallest member id; ``members[c]`` lists
    the ids of cluster ``c`` in sorted order.
    """

    k: int
    assignment: dict
    members: tuple[tuple, ...]
    cluster_means: np.ndarray
    cluster_sizes: np.ndarray

    def as_sets(self) -> set[frozenset]:
        return {frozenset(m) for m in self.members}


def _mean_of(ids: Sequence, values: dict) -> float:
    return float(np.mean([values[i] for i in ids]))


def build_merge_path(points: Iterable[WeightedPoint]) -> MergePath:
    points = sorted(points, key=lambda p: p.id)
    if len(points) < 2:
        raise TooFewPoints(f"need at least 2 points, got {len(points)}")
    ids = [p.id for p in points]
    if len(set(ids)) != len(ids):
        raise ValidationError("point ids must be unique")
    values = {p.id: float(p.value) for p in points}
    weights = {p.id: float(p.weight) for p in points}

    # clusters kept ordered by their smallest id (= first member)
    clusters: list[tuple] = [(i,) for i in ids]
    means = np.array([values[i] for i in ids])
    sizes = np.ones(len(ids))
    steps = []
    while len(clusters) > 1:
        c = len(clusters)
        diff = means[:, None] - means[None, :]
        cost = sizes[:, None] * sizes[None, :] / (sizes[:, None] + sizes[None, :]) * diff**2
        cost[np.tril_indices(c)] = np.inf
        # row-major argmin returns the lexicographically first minimal pair
        flat = int(np.argmin(cost))
        i, j = divmod(flat, c)
        best = float(cost[i, j])
        a, b = clusters[i], clusters[j]
        steps.append(MergeStep(a, b, best))
        merged = tuple(sorted(a + b))
        clusters[i] = merged
        del clusters[j]
        means[i] = _mean_of(merged, values)
        sizes[i] = len(merged)
        means = np.delete(means, j)
        sizes = np.delete(sizes, j)
    return MergePath(tuple(ids), tuple(steps), values, weights)


def partition_from_groups(groups: Iterable[Iterable], values: dict, weights: dict) -> Partition:
    members = sorted((tuple(sorted(g)) for g in groups), key=lambda m: m[0])
    assignment = {i: c for c, m in enumerate(members) for i in m}
    cluster_means = np.array(
        [
            sum(values[i] * weights[i] for i in m) / sum(weights[i] for i in m)
            for m in members
        ]
    )
    sizes = np.array([len(m) for m in members])
    return Partition(len(members), assignment, tuple(members), cluster_means, sizes)


def cut(path: MergePath, k: int) -> Partition:
    """Partition with ``k`` clusters: the state after the first J - k merges."""
    n = path.n_leaves
    if not 1 <= k <= n:
        raise BadK(f"k must be in 1..{n}, got {k}")
    groups = {leaf: (leaf,) for leaf in path.leaves}
    for step in path.steps[: n - k]:
        merged = tuple(sorted(step.a + step.b))
        del groups[step.a[0]]
        del groups[step.b[0]]
        groups[merged[0]] = merged
    return partition_from_groups(groups.values(), path.values, path.weights)
