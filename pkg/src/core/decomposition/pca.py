"""
Per-model PCA reduction and whitening ahead of IVA
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..errors import OrderExceedsRank, PreconditionViolation, ShapeMismatch
from ..features.projection import FeatureMatrix

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class PcaReduction:
    """X = D (B - row means), whitened so that X X^T / R = I_N

    Attributes:
        reduced: X, N x R observation matrix.
        reduction_matrix: D, N x MC.
        explained_variance: share of B's variance kept by the N components.
        singular_values: all singular values of the row-centered B.
        row_means: MC row means removed before the SVD.
    """

    model_id: str
    reduced: np.ndarray
    reduction_matrix: np.ndarray
    explained_variance: float
    singular_values: np.ndarray
    row_means: np.ndarray

    @property
    def order(self) -> int:
        return self.reduced.shape[0]


def numerical_rank(singular_values: np.ndarray) -> int:
    """Singular values below RANK_TOLERANCE * sigma_max count as zero"""
    if singular_values.size == 0 or singular_values[0] <= 0:
        return 0
    return int(np.sum(singular_values > RANK_TOLERANCE * singular_values[0]))


def feature_rank(features: FeatureMatrix) -> int:
    """Numerical rank of the row-centered feature matrix"""
    data = features.data - features.data.mean(axis=1, keepdims=True)
    return numerical_rank(np.linalg.svd(data, compute_uv=False))


def pca_reduce(features: FeatureMatrix, order: int, min_variance: float = 0.9) -> PcaReduction:
    """Keep the leading `order` principal components of B, scaled to unit variance"""
    B = np.asarray(features.data, dtype=np.float64)
    rows, R = B.shape
    if order < 1 or order > min(rows, R):
        raise PreconditionViolation(f"order must be in 1..{min(rows, R)}, got {order}")

    row_means = B.mean(axis=1, keepdims=True)
    centered = B - row_means
    U, s, Vt = np.linalg.svd(centered, full_matrices=False)
    rank = numerical_rank(s)
    if order > rank:
        raise OrderExceedsRank(
            f"model '{features.model_id}': order {order} exceeds numerical rank {rank}"
        )

    scale = np.sqrt(R) / s[:order]
    D = scale[:, None] * U[:, :order].T
    X = np.sqrt(R) * Vt[:order]
    energy = s ** 2
    explained = float(min(1.0, energy[:order].sum() / energy.sum()))
    if explained < min_variance:
        logger.warning("model '%s': %d components keep %.1f%% of the variance (target %.0f%%)",
                       features.model_id, order, 100 * explained, 100 * min_variance)
    return PcaReduction(model_id=features.model_id, reduced=X, reduction_matrix=D,
                        explained_variance=explained, singular_values=s,
                        row_means=row_means.ravel())


def reconstruct_mixing(result, reductions: Sequence[PcaReduction]) -> List[np.ndarray]:
    """Back-project each estimated N x N mixing matrix to MC x N: A = pinv(D) A_hat

    `result` is an IvaResult or a sequence of N x N mixing estimates.
    """
    mixing_est = getattr(result, "mixing_est", result)
    if len(mixing_est) != len(reductions):
        raise ShapeMismatch(
            f"{len(mixing_est)} mixing matrices for {len(reductions)} reductions"
        )
    mixing = []
    for A_hat, reduction in zip(mixing_est, reductions):
        D = reduction.reduction_matrix
        A_hat = np.asarray(A_hat)
        if A_hat.ndim != 2 or A_hat.shape[0] != D.shape[0]:
            raise ShapeMismatch(
                f"model '{reduction.model_id}': mixing is {A_hat.shape}, reduction order is {D.shape[0]}"
            )
        if D.shape[0] == D.shape[1]:
            D_inv = np.linalg.inv(D)
        else:
            D_inv = np.linalg.pinv(D)
        mixing.append(D_inv @ A_hat)
    return mixing
