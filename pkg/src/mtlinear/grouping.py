"""Variate grouping: absolute-correlation similarity plus complete-linkage
agglomeration under an angle threshold.

Variates a and b are similar when |PCC(a, b)| is high; the merge cutoff for an
angle alpha_bar is the correlation distance d = 1 - cos(alpha_bar). Pairs merge
while the complete-linkage distance is strictly below d, so alpha_bar = 0
always yields singletons.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import SeriesFrame


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric k x k matrix of |Pearson correlation| values in [0, 1]."""

    r_abs: np.ndarray

    def __post_init__(self):
        r = self.r_abs
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {r.shape}")
        if not np.allclose(r, r.T, atol=1e-12):
            raise ValueError("similarity matrix must be symmetric")
        if r.min() < -1e-12 or r.max() > 1 + 1e-12:
            raise ValueError("similarity entries must lie in [0, 1]")

    @property
    def n_variates(self):
        return self.r_abs.shape[0]


@dataclass(frozen=True)
class VariateGrouping:
    """A partition of variate indices into clusters, with its producing threshold."""

    clusters: tuple          # tuple of tuples of variate indices
    alpha_bar: float         # radians
    merges: tuple = field(default=())   # (rep_a, rep_b, height) in merge order

    def __post_init__(self):
        seen = sorted(i for c in self.clusters for i in c)
        if seen != list(range(len(seen))):
            raise ValueError("clusters must partition 0..k-1 without overlap")

    @property
    def d_alpha(self):
        return 1.0 - math.cos(self.alpha_bar)

    @property
    def n_clusters(self):
        return len(self.clusters)

    @property
    def n_variates(self):
        return sum(len(c) for c in self.clusters)

    def head_of(self) -> np.ndarray:
        """Map variate index -> owning cluster index."""
        owner = np.empty(self.n_variates, dtype=int)
        for ci, members in enumerate(self.clusters):
            owner[list(members)] = ci
        return owner


def correlation_matrix(frame: SeriesFrame) -> SimilarityMatrix:
    """Absolute Pearson correlations between variates over the train split.

    Each variate is centered by its train mean. Zero-variance variates get
    similarity 0 to everything else (warning), keeping them in singleton
    clusters downstream.
    """
    train = frame.train_values()
    centered = train - train.mean(axis=0)
    norms = np.linalg.norm(centered, axis=0)
    degenerate = norms < 1e-12
    if degenerate.any():
        names = [frame.variate_names[i] for i in np.flatnonzero(degenerate)]
        warnings.warn(f"zero-variance variate(s) {names}: correlations set to 0")
    safe = np.where(degenerate, 1.0, norms)
    unit = centered / safe
    r = np.abs(unit.T @ unit)
    r[degenerate, :] = 0.0
    r[:, degenerate] = 0.0
    np.fill_diagonal(r, 1.0)
    return SimilarityMatrix(r_abs=np.clip(r, 0.0, 1.0))


def cluster(sim: SimilarityMatrix, alpha_bar: float) -> VariateGrouping:
    """Bottom-up complete-linkage agglomeration on distance 1 - |r|.

    Merges the closest pair while the minimum complete-linkage distance is
    strictly below d = 1 - cos(alpha_bar). Ties break on the smallest
    (min representative index, then other index) pair; representatives are
    each cluster's minimum variate index. Output clusters are sorted by
    their minimum variate index.
    """
    if not (0.0 <= alpha_bar <= math.pi / 2 + 1e-12):
        raise ValueError(f"alpha_bar must lie in [0, pi/2], got {alpha_bar}")
    k = sim.n_variates
    d_alpha = 1.0 - math.cos(alpha_bar)

    dist = 1.0 - sim.r_abs.copy()
    np.fill_diagonal(dist, np.inf)
    members = {i: [i] for i in range(k)}
    merges = []

    while len(members) > 1:
        # Row-major argmin picks the lexicographically smallest (i, j) among ties.
        flat = int(np.argmin(dist))
        i, j = divmod(flat, k)
        if i > j:
            i, j = j, i
        height = dist[i, j]
        if not (height < d_alpha):
            break
        merges.append((i, j, float(height)))
        members[i] = members[i] + members[j]
        del members[j]
        # Complete linkage: distance to the union is the max of the parts.
        merged_row = np.maximum(dist[i], dist[j])
        dist[i, :] = merged_row
        dist[:, i] = merged_row
        dist[i, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf

    clusters = tuple(tuple(sorted(members[rep])) for rep in sorted(members))
    return VariateGrouping(clusters=clusters, alpha_bar=float(alpha_bar),
                           merges=tuple(merges))


def max_internal_distance(sim: SimilarityMatrix, members) -> float:
    """Largest pairwise correlation distance inside one cluster."""
    if len(members) < 2:
        return 0.0
    idx = np.asarray(members)
    block = 1.0 - sim.r_abs[np.ix_(idx, idx)]
    return float(block.max())


def grouping_report(grouping: VariateGrouping, names, sim: SimilarityMatrix = None) -> dict:
    """Structured report: membership by name, per-cluster max internal
    distance, and the dendrogram merge trace."""
    names = list(names)
    report = {
        "alpha_bar": grouping.alpha_bar,
        "d_alpha": grouping.d_alpha,
        "n_clusters": grouping.n_clusters,
        "clusters": [[names[i] for i in members] for members in grouping.clusters],
        "merges": [{"a": a, "b": b, "height": h} for a, b, h in grouping.merges],
    }
    if sim is not None:
        report["max_internal_distances"] = [
            max_internal_distance(sim, members) for members in grouping.clusters
        ]
    return report


def grouping_to_dict(grouping: VariateGrouping) -> dict:
    return {
        "alpha_bar": grouping.alpha_bar,
        "clusters": [list(c) for c in grouping.clusters],
        "merges": [[a, b, h] for a, b, h in grouping.merges],
    }


def grouping_from_dict(d) -> VariateGrouping:
    return VariateGrouping(
        clusters=tuple(tuple(c) for c in d["clusters"]),
        alpha_bar=float(d["alpha_bar"]),
        merges=tuple((int(a), int(b), float(h)) for a, b, h in d.get("merges", [])),
    )


def render_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
