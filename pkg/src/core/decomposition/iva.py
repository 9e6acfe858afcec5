"""
Independent vector analysis with a multivariate Gaussian source model (IVA-G)

Cost over K whitened datasets X^[k] (N x R) and demixing matrices W^[k]:

    J(W) = sum_n 1/2 log det(Sigma_n + eps I) - sum_k log |det W^[k]|

where Sigma_n is the K x K covariance of SCV n with every source scaled to unit
variance. Rows are updated one (n, k) block at a time, each to the exact minimiser of
J with the other rows fixed, in the iterative-projection form w = (W Q)^-1 e_n used
by auxiliary-function IVA.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import (
    ConvergenceWarning,
    IndexOutOfRange,
    PreconditionViolation,
    SingularDemixing,
)

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
COST_SLACK = 1e-10


@dataclass(frozen=True)
class IvaOptions:
    max_iter: int = 1024
    tol: float = 1e-6
    seed: int = 0
    regularization: float = 1e-9
    init_scale: float = 1e-3


@dataclass(frozen=True)
class IvaResult:
    """Demixing, sources and diagnostics, indexed by the original source order

    Attributes:
        demixing: (K, N, N) W^[k].
        sources: (K, N, R) S^[k] = W^[k] X^[k], unit-variance rows.
        mixing_est: (K, N, N) inverse of each W^[k].
        scv_order: 0-based source indices sorted by decreasing scv_correlation.
        scv_correlation: (N,) mean |Pearson r| of each SCV over all dataset pairs.
        cost_trace: cost before the first sweep and after every sweep.
        stop_reason: "tol", "max_iter", or "cost_rise" when a sweep could not lower the cost.
    """

    demixing: np.ndarray
    sources: np.ndarray
    mixing_est: np.ndarray
    scv_order: np.ndarray
    scv_correlation: np.ndarray
    cost_trace: np.ndarray
    iterations: int
    converged: bool
    stop_reason: str = "tol"

    @property
    def K(self) -> int:
        return self.demixing.shape[0]

    @property
    def N(self) -> int:
        return self.demixing.shape[1]


@dataclass(frozen=True)
class ScvBundle:
    """The n-th SCV (1-based, after ordering) across all K datasets"""

    index: int
    rows: np.ndarray
    mean_abs_corr: float


def _cross_covariances(X: np.ndarray) -> np.ndarray:
    """C[k, l] = X^[k] X^[l]^T / R, shape (K, K, N, N)"""
    K, N, R = X.shape
    flat = X.reshape(K * N, R)
    return (flat @ flat.T / R).reshape(K, N, K, N).transpose(0, 2, 1, 3)


def _normalize_rows(W: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Scale every row of every W^[k] to a unit-variance source"""
    diag = np.einsum("kni,kij,knj->kn", W, C[np.arange(len(W)), np.arange(len(W))], W)
    return W / np.sqrt(diag)[:, :, None]


def _scv_covariances(W: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Sigma[n] = K x K covariance of SCV n"""
    return np.einsum("kni,klij,lnj->nkl", W, C, W, optimize=True)


def iva_cost(W: np.ndarray, C: np.ndarray, eps: float) -> float:
    K = W.shape[0]
    sigma = _scv_covariances(W, C) + eps * np.eye(K)
    _, logdet_sigma = np.linalg.slogdet(sigma)
    _, logdet_w = np.linalg.slogdet(W)
    return float(0.5 * logdet_sigma.sum() - logdet_w.sum())


def _sweep(W: np.ndarray, C: np.ndarray, eps: float) -> None:
    """One pass of exact block updates over every (n, k), in place"""
    K, N, _ = W.shape
    eye_n = np.eye(N)
    eye_k1 = np.eye(K - 1)
    others = [np.flatnonzero(np.arange(K) != k) for k in range(K)]
    for n in range(N):
        V = W[:, n, :]
        T = np.einsum("klij,lj->kli", C, V)
        sigma = np.einsum("ki,kli->kl", V, T)
        for k in range(K):
            rest = others[k]
            G = T[k, rest]
            minor = sigma[np.ix_(rest, rest)] + eps * eye_k1
            Q = (1.0 + eps) * C[k, k] - G.T @ np.linalg.solve(minor, G)
            u = np.linalg.solve(W[k] @ Q, eye_n[n])
            u /= np.sqrt(u @ C[k, k] @ u)
            if u @ C[k, k] @ W[k, n] < 0:
                u = -u
            W[k, n] = u
            T[:, k, :] = np.einsum("lij,j->li", C[:, k], u)
            sigma[:, k] = np.einsum("li,li->l", V, T[:, k, :])
            sigma[k, :] = sigma[:, k]


def scv_correlations(sources: np.ndarray) -> np.ndarray:
    """Mean |Pearson r| over all K(K-1)/2 dataset pairs, per source index"""
    K, N, _ = sources.shape
    upper = np.triu_indices(K, 1)
    means = np.empty(N)
    for n in range(N):
        r = np.corrcoef(sources[:, n, :])
        means[n] = np.abs(r[upper]).mean()
    return np.clip(means, 0.0, 1.0)


def iva_decompose(observations: Sequence[np.ndarray], opts: IvaOptions = None) -> IvaResult:
    """Jointly demix K whitened N x R datasets"""
    opts = opts or IvaOptions()
    if len(observations) < 2:
        raise PreconditionViolation(f"IVA needs K >= 2 datasets, got {len(observations)}")
    shapes = {np.shape(x) for x in observations}
    if len(shapes) != 1:
        raise PreconditionViolation(f"all datasets must share N x R, got {sorted(shapes)}")
    X = np.stack([np.asarray(x, dtype=np.float64) for x in observations])
    K, N, R = X.shape
    if R <= N:
        raise PreconditionViolation(f"IVA needs R > N, got R={R}, N={N}")

    C = _cross_covariances(X)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([opts.seed, 0x1A5])))
    W = np.eye(N)[None] + opts.init_scale * rng.standard_normal((K, N, N))
    W = _normalize_rows(W, C)

    eps = opts.regularization
    cost = iva_cost(W, C, eps)
    trace = [cost]
    converged = False
    stop_reason = "max_iter"
    iteration = 0
    for iteration in range(1, opts.max_iter + 1):
        W_old = W.copy()
        _sweep(W, C, eps)
        new_cost = iva_cost(W, C, eps)
        if new_cost > cost + COST_SLACK * max(1.0, abs(cost)):
            logger.debug("IVA sweep %d raised the cost (%.12g -> %.12g); keeping previous iterate",
                         iteration, cost, new_cost)
            W = W_old
            stop_reason = "cost_rise"
            break
        cost = new_cost
        trace.append(cost)
        change = max(np.linalg.norm(W[k] - W_old[k]) / np.linalg.norm(W_old[k]) for k in range(K))
        if iteration % 25 == 0:
            logger.debug("IVA sweep %d: cost %.10f, max relative change %.3e", iteration, cost, change)
        if change < opts.tol:
            converged = True
            stop_reason = "tol"
            break

    if stop_reason == "cost_rise":
        message = (f"IVA-G stopped at sweep {iteration}: the cost stopped decreasing before "
                   f"reaching tol={opts.tol}")
        logger.warning(message)
        warnings.warn(message, ConvergenceWarning, stacklevel=2)
    elif not converged:
        message = f"IVA-G stopped after {opts.max_iter} sweeps without reaching tol={opts.tol}"
        logger.warning(message)
        warnings.warn(message, ConvergenceWarning, stacklevel=2)

    for k in range(K):
        condition = np.linalg.cond(W[k])
        if not np.isfinite(condition) or condition > CONDITION_LIMIT:
            raise SingularDemixing(f"demixing matrix of dataset {k} has condition number {condition:.3e}")

    sources = np.einsum("kij,kjr->kir", W, X)
    scale = sources.std(axis=2)
    W = W / scale[:, :, None]
    sources = sources / scale[:, :, None]
    correlations = scv_correlations(sources)
    order = np.argsort(-correlations, kind="stable")
    logger.info("IVA-G: K=%d, N=%d, %d sweeps, cost %.6f, SCV1 mean |r| %.3f",
                K, N, iteration, cost, correlations[order[0]])
    return IvaResult(demixing=W, sources=sources, mixing_est=np.linalg.inv(W),
                     scv_order=order, scv_correlation=correlations,
                     cost_trace=np.asarray(trace), iterations=iteration, converged=converged,
                     stop_reason=stop_reason)


def extract_scv(result: IvaResult, n: int) -> ScvBundle:
    """n-th most correlated SCV (1-based)"""
    if not 1 <= n <= result.N:
        raise IndexOutOfRange(f"SCV index must be in 1..{result.N}, got {n}")
    source = int(result.scv_order[n - 1])
    return ScvBundle(index=n, rows=result.sources[:, source, :].copy(),
                     mean_abs_corr=float(result.scv_correlation[source]))


def joint_isi(demixing: Sequence[np.ndarray], mixing: Sequence[np.ndarray]) -> float:
    """Joint inter-symbol interference of W^[k] A^[k] over all datasets; 0 is perfect"""
    G = sum(np.abs(np.asarray(w) @ np.asarray(a)) for w, a in zip(demixing, mixing))
    N = G.shape[0]
    rows = (G / G.max(axis=1, keepdims=True)).sum(axis=1) - 1.0
    cols = (G / G.max(axis=0, keepdims=True)).sum(axis=0) - 1.0
    return float((rows.sum() + cols.sum()) / (2.0 * N * (N - 1)))
