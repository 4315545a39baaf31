"""Scenario reduction: voltage patterns, min-max normalization, clustering and
representative selection.

Each Monte Carlo scenario is summarised, per timestep, by the vector of all
customers' connection-point voltage magnitudes computed with DG output at zero
(a pure demand signature).  Patterns are min-max normalized per customer and
grouped with Ward linkage, average linkage or seeded k-means++; every cluster
yields the member closest to its centroid as representative, weighted by the
cluster's share of the sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.cluster import KMeans

from .feeder import Feeder
from .powerflow import PowerFlowError, _sweep_batch, compile_feeder
from .variables import extract_arrays, tracked_variables

ALGORITHMS = ("ward", "average", "kmeanspp")

DEFAULT_K = 400
DEFAULT_ALGORITHM = "ward"
DEFAULT_RESTARTS = 10


class ClusterError(ValueError):
    """Raised for invalid cluster counts or degenerate pattern sets."""


@dataclass(frozen=True)
class PatternSet:
    """Per-scenario voltage patterns at one timestep (pu magnitudes)."""

    timestep: int
    values: np.ndarray            # (S, H)
    scenario_ids: tuple[int, ...]
    customer_ids: tuple[str, ...]

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NormalizedPatternSet:
    """Patterns scaled to [0, 1] per customer; column extrema retained."""

    timestep: int
    values: np.ndarray
    column_min: np.ndarray
    column_max: np.ndarray
    scenario_ids: tuple[int, ...]
    customer_ids: tuple[str, ...]

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ClusterResult:
    """A partition of the pattern set with centroids and representatives.

    ``representatives`` holds scenario ids, ``representative_rows`` the same
    members as row positions; ``sizes[k] / n_scenarios`` is the probability
    weight of cluster k (exact as a Fraction).
    """

    k: int
    algorithm: str
    labels: np.ndarray                 # (S,) cluster index 0..k-1
    centroids: np.ndarray              # (k, H) in normalized space
    representatives: tuple[int, ...]
    representative_rows: tuple[int, ...]
    sizes: tuple[int, ...]

    @property
    def n_scenarios(self) -> int:
        return self.labels.shape[0]

    @property
    def omega_fractions(self) -> list[Fraction]:
        return [Fraction(s, self.n_scenarios) for s in self.sizes]

    @property
    def omegas(self) -> np.ndarray:
        return np.array(self.sizes, dtype=float) / self.n_scenarios


def build_patterns(feeder: Feeder, scenarios, timestep: int) -> PatternSet:
    """Solve every scenario at zero DG output and collect customer voltages."""
    cf = compile_feeder(feeder)
    s_pu = np.stack([
        (sc.p_kw[:, timestep] + 1j * sc.q_kvar[:, timestep]) / feeder.base_power_1ph
        for sc in scenarios
    ])
    try:
        V, J, _, _ = _sweep_batch(cf, s_pu.astype(complex), 1e-8, 100)
    except PowerFlowError:
        # retry one-by-one to name the offending scenario
        for sc in scenarios:
            row = (sc.p_kw[:, timestep] + 1j * sc.q_kvar[:, timestep]) / feeder.base_power_1ph
            try:
                _sweep_batch(cf, row[np.newaxis].astype(complex), 1e-8, 100)
            except PowerFlowError as exc:
                raise PowerFlowError(
                    f"power flow failed for scenario {sc.scenario_id} at timestep {timestep}: {exc}"
                ) from exc
        raise
    voltages = tracked_variables(feeder, include_head_flows=False, include_losses=False)
    vals = extract_arrays(cf, voltages, V, J)
    return PatternSet(
        timestep=timestep,
        values=vals,
        scenario_ids=tuple(sc.scenario_id for sc in scenarios),
        customer_ids=tuple(v.split(":", 1)[1] for v in voltages.ids),
    )


def normalize(patterns: PatternSet) -> NormalizedPatternSet:
    """Min-max scale each customer column to [0, 1]; constant columns map to 0.5."""
    if patterns.n_scenarios < 2:
        raise ClusterError("normalization needs at least two scenarios")
    lo = patterns.values.min(axis=0)
    hi = patterns.values.max(axis=0)
    span = hi - lo
    degenerate = span <= 0
    safe = np.where(degenerate, 1.0, span)
    scaled = (patterns.values - lo) / safe
    scaled[:, degenerate] = 0.5
    return NormalizedPatternSet(
        timestep=patterns.timestep,
        values=scaled,
        column_min=lo,
        column_max=hi,
        scenario_ids=patterns.scenario_ids,
        customer_ids=patterns.customer_ids,
    )


def _result_from_labels(normalized: NormalizedPatternSet, labels: np.ndarray,
                        algorithm: str) -> ClusterResult:
    # canonical cluster order: by smallest member row
    first_row = {}
    for row, lab in enumerate(labels):
        first_row.setdefault(lab, row)
    ordered = sorted(first_row, key=first_row.get)
    remap = {old: new for new, old in enumerate(ordered)}
    labels = np.array([remap[lab] for lab in labels])
    k = len(ordered)
    values = normalized.values
    centroids = np.stack([values[labels == i].mean(axis=0) for i in range(k)])
    reps_rows = []
    for i in range(k):
        rows = np.flatnonzero(labels == i)
        d2 = ((values[rows] - centroids[i]) ** 2).sum(axis=1)
        reps_rows.append(int(rows[np.argmin(d2)]))   # argmin keeps the lowest id on ties
    sizes = tuple(int((labels == i).sum()) for i in range(k))
    return ClusterResult(
        k=k,
        algorithm=algorithm,
        labels=labels,
        centroids=centroids,
        representatives=tuple(normalized.scenario_ids[r] for r in reps_rows),
        representative_rows=tuple(reps_rows),
        sizes=sizes,
    )


def _kmeans_labels(values: np.ndarray, k: int, seed: int, restarts: int,
                   warm_start: ClusterResult | None) -> np.ndarray:
    best = KMeans(n_clusters=k, init="k-means++", n_init=restarts,
                  random_state=seed, algorithm="lloyd").fit(values)
    if warm_start is not None and warm_start.k == k - 1:
        # extra candidate: previous centroids plus the worst-fitted member of
        # the largest-SSE cluster; guarantees the k-level objective does not
        # exceed the (k-1)-level one.
        prev = warm_start
        d2 = ((values - prev.centroids[prev.labels]) ** 2).sum(axis=1)
        sse_per_cluster = np.zeros(prev.k)
        np.add.at(sse_per_cluster, prev.labels, d2)
        worst = int(np.argmax(sse_per_cluster))
        rows = np.flatnonzero(prev.labels == worst)
        split_point = values[rows[np.argmax(d2[rows])]]
        init = np.vstack([prev.centroids, split_point])
        candidate = KMeans(n_clusters=k, init=init, n_init=1,
                           random_state=seed, algorithm="lloyd").fit(values)
        if candidate.inertia_ < best.inertia_:
            best = candidate
    return best.labels_


def cluster(normalized: NormalizedPatternSet, k: int, algorithm: str = DEFAULT_ALGORITHM,
            seed: int = 0, restarts: int = DEFAULT_RESTARTS,
            warm_start: ClusterResult | None = None) -> ClusterResult:
    """Partition the normalized patterns into ``k`` groups.

    Hierarchical methods (``ward``/``average``) are deterministic; ``kmeanspp``
    is deterministic for a given seed and uses best-of-``restarts`` runs, plus
    a split-based candidate when ``warm_start`` holds the (k-1)-cluster result.
    """
    S = normalized.n_scenarios
    if not (1 <= k <= S):
        raise ClusterError(f"k must lie in [1, {S}], got {k}")
    if algorithm not in ALGORITHMS:
        raise ClusterError(f"unknown algorithm '{algorithm}', expected one of {ALGORITHMS}")
    values = normalized.values
    if np.unique(values, axis=0).shape[0] < k:
        raise ClusterError("fewer distinct patterns than requested clusters")
    if k == S:
        labels = np.arange(S)
    elif algorithm in ("ward", "average"):
        Z = linkage(values, method=algorithm)
        labels = fcluster(Z, t=k, criterion="maxclust") - 1
    else:
        labels = _kmeans_labels(values, k, seed, restarts, warm_start)
    result = _result_from_labels(normalized, labels, algorithm)
    if result.k != k:
        raise ClusterError(f"algorithm produced {result.k} clusters instead of {k}")
    return result


def within_cluster_ss(normalized: NormalizedPatternSet, result: ClusterResult) -> float:
    """Total squared distance of each pattern to its cluster centroid."""
    if result.n_scenarios != normalized.n_scenarios:
        raise ClusterError("cluster result does not match the pattern set")
    diffs = normalized.values - result.centroids[result.labels]
    return float((diffs**2).sum())


@dataclass(frozen=True)
class ElbowPoint:
    k: int
    algorithm: str
    compactness: float


def elbow_analysis(normalized: NormalizedPatternSet, ks, algorithms=(DEFAULT_ALGORITHM,),
                   seed: int = 0, restarts: int = DEFAULT_RESTARTS) -> list[ElbowPoint]:
    """Compactness-versus-k curve used to pick the cluster count."""
    points = []
    for algorithm in algorithms:
        prev = None
        for k in sorted(ks):
            res = cluster(normalized, k, algorithm, seed=seed, restarts=restarts,
                          warm_start=prev if algorithm == "kmeanspp" else None)
            points.append(ElbowPoint(k=k, algorithm=algorithm,
                                     compactness=within_cluster_ss(normalized, res)))
            prev = res
    return points
