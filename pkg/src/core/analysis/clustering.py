"""
2-means clustering of per-model contributions to the first two components
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from ..decomposition.iva import IvaResult
from ..decomposition.parafac2 import Parafac2Result
from ..errors import DegenerateInput, PreconditionViolation, RankTooSmall, SingleCluster

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContributionMatrix:
    """Row k: contribution of model k to components 1 and 2"""

    points: np.ndarray
    source_method: str
    ids: Tuple[str, ...] = ()

    @property
    def K(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ClusterReport:
    assignments: np.ndarray
    centroids: np.ndarray
    mean_silhouette: float
    trojan_cluster: int
    inertia: float
    degenerate: bool = False

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


def contributions(result, mixing: Optional[Sequence[np.ndarray]] = None,
                  ids: Sequence[str] = ()) -> ContributionMatrix:
    """2-D contribution points from a PARAFAC2 result, or from IVA with reconstructed A^[k]

    PARAFAC2 reads the first two loading columns. IVA takes the 2-norm of the columns of
    each A^[k] that belong to the two most correlated SCVs.
    """
    if isinstance(result, Parafac2Result):
        if result.rank < 2:
            raise RankTooSmall(f"need at least 2 components, PARAFAC2 rank is {result.rank}")
        return ContributionMatrix(points=result.loadings[:, :2].copy(), source_method="parafac2",
                                  ids=tuple(ids))
    if isinstance(result, IvaResult):
        if result.N < 2:
            raise RankTooSmall(f"need at least 2 components, IVA order is {result.N}")
        if mixing is None:
            mixing = [result.mixing_est[k] for k in range(result.K)]
        top = result.scv_order[:2]
        points = np.array([np.linalg.norm(np.asarray(A)[:, top], axis=0) for A in mixing])
        return ContributionMatrix(points=points, source_method="iva", ids=tuple(ids))
    raise PreconditionViolation(f"unsupported decomposition result {type(result).__name__}")


def silhouette(points: np.ndarray, assignments: np.ndarray) -> float:
    """Mean silhouette, Euclidean; members of singleton clusters score 0"""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(assignments)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise SingleCluster("silhouette needs two non-empty clusters")
    if clusters.size == labels.size:
        return 0.0
    return float(silhouette_score(points, labels, metric="euclidean"))


def _spread(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray, cluster: int) -> float:
    members = points[labels == cluster]
    if len(members) == 0:
        return np.inf
    return float(np.linalg.norm(members - centroids[cluster], axis=1).mean())


def kmeans2(points: np.ndarray, restarts: int = 10, seed: int = 0, max_iter: int = 300,
            scores: Optional[Sequence[float]] = None) -> ClusterReport:
    """Lloyd 2-means with k-means++ seeding, best of `restarts` by within-cluster SS

    The trojan cluster is the one whose members have the higher mean suspicion score,
    or the tighter cluster when no scores are given or they tie.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise PreconditionViolation(f"need at least 2 points, got shape {points.shape}")
    if np.unique(points, axis=0).shape[0] < 2:
        raise DegenerateInput("all contribution points are identical")

    model = KMeans(n_clusters=2, init="k-means++", n_init=restarts, max_iter=max_iter,
                   random_state=seed)
    labels = model.fit_predict(points)
    centroids = model.cluster_centers_
    degenerate = np.unique(labels).size < 2
    score = 0.0 if degenerate else silhouette(points, labels)

    trojan = None
    if scores is not None and not degenerate:
        scores = np.asarray(scores, dtype=np.float64)
        means = [scores[labels == c].mean() for c in (0, 1)]
        if means[0] != means[1]:
            trojan = int(np.argmax(means))
    if trojan is None:
        trojan = int(np.argmin([_spread(points, labels, centroids, c) for c in (0, 1)]))

    logger.info("2-means: cluster sizes %s, mean silhouette %.3f, trojan cluster %d",
                np.bincount(labels, minlength=2).tolist(), score, trojan)
    return ClusterReport(assignments=labels.astype(int), centroids=centroids,
                         mean_silhouette=score, trojan_cluster=trojan,
                         inertia=float(model.inertia_), degenerate=bool(degenerate))
