"""
Pairwise Pearson correlation of per-model source vectors, with t-test p-values and
Bonferroni correction
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from ..errors import PreconditionViolation, ZeroVariance

logger = logging.getLogger(__name__)

CORRECTIONS = ("global", "row")


@dataclass(frozen=True)
class CorrelationReport:
    """K x K correlation, p-values and significance mask for one source component"""

    ids: Tuple[str, ...]
    r: np.ndarray
    p_raw: np.ndarray
    p_adj: np.ndarray
    significant: np.ndarray
    sample_size: int
    alpha: float
    correction: str = "global"

    @property
    def K(self) -> int:
        return len(self.ids)

    def significant_pairs(self) -> List[Tuple[int, int]]:
        """(i, j) with i < j"""
        rows, cols = np.nonzero(np.triu(self.significant, 1))
        return list(zip(rows.tolist(), cols.tolist()))


def correlation_matrix(vectors, ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """Pearson r between every pair of rows of a K x R array"""
    V = np.asarray(vectors, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] < 2:
        raise PreconditionViolation(f"need K >= 2 vectors, got shape {V.shape}")
    if V.shape[1] < 3:
        raise PreconditionViolation(f"vectors must have length >= 3, got {V.shape[1]}")
    ids = list(ids) if ids is not None else [str(k) for k in range(V.shape[0])]
    spread = V.std(axis=1)
    for k in np.flatnonzero(spread <= 1e-12 * np.maximum(1.0, np.abs(V).max(axis=1))):
        raise ZeroVariance(ids[k])
    r = np.clip(np.corrcoef(V), -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return r


def correlation_significance(r: np.ndarray, sample_size: int) -> np.ndarray:
    """Two-tailed p-value of each r under H0: rho = 0, Student t with n - 2 dof"""
    if sample_size <= 2:
        raise PreconditionViolation(f"sample size must be > 2, got {sample_size}")
    r = np.asarray(r, dtype=np.float64)
    dof = sample_size - 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt(dof / (1.0 - r ** 2))
    p = 2.0 * stats.t.sf(np.abs(t), dof)
    p = np.where(np.abs(r) >= 1.0, 0.0, p)
    p = np.clip(p, 0.0, 1.0)
    np.fill_diagonal(p, 0.0)
    return p


def bonferroni_adjust(p_raw: np.ndarray, alpha: float = 0.05,
                      correction: str = "global") -> Tuple[np.ndarray, np.ndarray]:
    """Multiply by the number of tests (K(K-1)/2 globally, K-1 per row), cap at 1"""
    if correction not in CORRECTIONS:
        raise PreconditionViolation(f"correction must be one of {CORRECTIONS}, got {correction!r}")
    p_raw = np.asarray(p_raw, dtype=np.float64)
    K = p_raw.shape[0]
    tests = K * (K - 1) // 2 if correction == "global" else K - 1
    p_adj = np.minimum(1.0, p_raw * max(tests, 1))
    significant = p_adj < alpha
    np.fill_diagonal(significant, False)
    return p_adj, significant


def build_correlation_report(vectors, ids: Sequence[str], sample_size: int,
                             alpha: float = 0.05, correction: str = "global") -> CorrelationReport:
    r = correlation_matrix(vectors, ids)
    p_raw = correlation_significance(r, sample_size)
    p_adj, significant = bonferroni_adjust(p_raw, alpha, correction)
    logger.info("Correlation over K=%d models (n=%d): %d significant pairs at alpha=%g (%s)",
                len(ids), sample_size, int(np.triu(significant, 1).sum()), alpha, correction)
    return CorrelationReport(ids=tuple(ids), r=r, p_raw=p_raw, p_adj=p_adj,
                             significant=significant, sample_size=int(sample_size),
                             alpha=float(alpha), correction=correction)
