"""
Direct-fitting PARAFAC2 by alternating least squares

    B^[k] ~ A diag(sigma_k) S^[k]^T,   S^[k] = P^[k] H,   P^[k]^T P^[k] = I

so every S^[k] has the same cross product H^T H. Each iteration solves one orthogonal
Procrustes problem per slice and then runs a CP-ALS sweep on the projected tensor with
frontal slices B^[k] P^[k].
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import tensorly as tl

from ..errors import (
    ConvergenceWarning,
    DegenerateSlice,
    IndexOutOfRange,
    PreconditionViolation,
    RankTooLarge,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Parafac2Options:
    max_iter: int = 2000
    tol: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class Parafac2Result:
    """Fitted PARAFAC2 factors

    Attributes:
        shared_factor: A, MC x N, unit-norm columns.
        loadings: K x N, row k is diag(sigma_k).
        sources: (K, R, N) S^[k] = P^[k] H.
        cross_product: Phi = H^T H, shared by every S^[k]^T S^[k].
        fit_trace: fit after every iteration.
    """

    shared_factor: np.ndarray
    loadings: np.ndarray
    sources: np.ndarray
    cross_product: np.ndarray
    fit: float
    iterations: int
    converged: bool
    fit_trace: np.ndarray

    @property
    def rank(self) -> int:
        return self.shared_factor.shape[1]


def _stack_slices(slices: Sequence) -> np.ndarray:
    if len(slices) < 2:
        raise PreconditionViolation(f"PARAFAC2 needs K >= 2 slices, got {len(slices)}")
    arrays = [np.asarray(getattr(s, "data", s), dtype=np.float64) for s in slices]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1 or arrays[0].ndim != 2:
        raise PreconditionViolation(f"all slices must share MC x R, got {sorted(shapes)}")
    for k, a in enumerate(arrays):
        if np.linalg.norm(a) == 0.0:
            model_id = getattr(slices[k], "model_id", str(k))
            raise DegenerateSlice(f"feature matrix of model '{model_id}' is all zeros")
    return np.stack(arrays)


def _initial_factor(B: np.ndarray, rank: int, seed: int) -> np.ndarray:
    """Leading left singular vectors of [B^[1] ... B^[K]], completed at random if needed"""
    K, I, R = B.shape
    concatenated = B.transpose(1, 0, 2).reshape(I, K * R)
    U, s, _ = np.linalg.svd(concatenated, full_matrices=False)
    usable = int(np.sum(s[:rank] > 1e-10 * s[0]))
    if usable == rank:
        return U[:, :rank]
    logger.debug("PARAFAC2 init: slices have rank %d < %d, completing A at random", usable, rank)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x2F2])))
    Q, _ = np.linalg.qr(np.hstack([U[:, :usable], rng.standard_normal((I, rank - usable))]))
    return Q[:, :rank]


def _procrustes(B: np.ndarray, A: np.ndarray, H: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """P^[k] maximising tr(P^T B^T A diag(sigma_k) H^T), shape (K, R, N)"""
    M = H @ (sigma[:, :, None] * (A.T @ B))
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    return Vt.transpose(0, 2, 1) @ U.transpose(0, 2, 1)


def _cp_sweep(Y: np.ndarray, factors: list) -> None:
    """One CP-ALS pass over the three modes of Y (MC x N x K), in place"""
    weights = np.ones(factors[0].shape[1])
    for mode in range(3):
        gram = np.ones((weights.size, weights.size))
        for other, factor in enumerate(factors):
            if other != mode:
                gram *= factor.T @ factor
        mttkrp = tl.tenalg.unfolding_dot_khatri_rao(Y, (weights, factors), mode)
        factors[mode] = mttkrp @ np.linalg.pinv(gram)


def _fit(BP: np.ndarray, A: np.ndarray, H: np.ndarray, sigma: np.ndarray, total: float) -> float:
    """1 - ||B - model||^2 / ||B||^2 from the projected slices B^[k] P^[k], shape (K, MC, N)

    P^[k] has orthonormal columns, so <B^[k], model_k> = tr(A^T B^[k] P^[k] H diag(sigma_k))
    and ||model_k||^2 = sigma_k^T (A^T A * H^T H) sigma_k.
    """
    inner = np.sum(sigma * np.diagonal(A.T @ BP @ H, axis1=1, axis2=2))
    model = np.sum((sigma @ ((A.T @ A) * (H.T @ H))) * sigma)
    return float(1.0 - (total - 2.0 * inner + model) / total)


def parafac2_als(slices: Sequence, rank: int, opts: Parafac2Options = None) -> Parafac2Result:
    """Fit a rank-`rank` PARAFAC2 model to K feature matrices of equal shape"""
    opts = opts or Parafac2Options()
    B = _stack_slices(slices)
    K, I, R = B.shape
    if rank < 1 or rank > min(I, R):
        raise RankTooLarge(f"rank must be in 1..{min(I, R)}, got {rank}")

    A = _initial_factor(B, rank, opts.seed)
    H = np.eye(rank)
    sigma = np.ones((K, rank))
    total = float(np.sum(B ** 2))

    trace = []
    fit = -np.inf
    converged = False
    iteration = 0
    for iteration in range(1, opts.max_iter + 1):
        P = _procrustes(B, A, H, sigma)
        BP = B @ P
        factors = [A, H, sigma]
        _cp_sweep(BP.transpose(1, 2, 0), factors)
        A, H, sigma = factors

        scale = np.linalg.norm(A, axis=0) * np.linalg.norm(H, axis=0)
        scale[scale == 0] = 1.0
        A = A / np.linalg.norm(A, axis=0).clip(min=np.finfo(float).tiny)
        H = H / np.linalg.norm(H, axis=0).clip(min=np.finfo(float).tiny)
        sigma = sigma * scale

        new_fit = _fit(BP, A, H, sigma, total)
        trace.append(new_fit)
        delta = abs(new_fit - fit)
        fit = new_fit
        if iteration % 100 == 0:
            logger.debug("PARAFAC2 iteration %d: fit %.10f", iteration, fit)
        if delta < opts.tol:
            converged = True
            break

    if not converged:
        message = f"PARAFAC2 stopped after {opts.max_iter} iterations without reaching tol={opts.tol}"
        logger.warning(message)
        warnings.warn(message, ConvergenceWarning, stacklevel=2)

    # sign and order conventions; A diag(sigma) H^T P^T is unchanged by each flip pair
    flip = np.sign(A[np.argmax(np.abs(A), axis=0), np.arange(rank)])
    flip[flip == 0] = 1.0
    A, H = A * flip, H * flip
    flip = np.where(sigma.sum(axis=0) < 0, -1.0, 1.0)
    sigma, H = sigma * flip, H * flip
    order = np.argsort(-np.linalg.norm(sigma, axis=0), kind="stable")
    A, H, sigma = A[:, order], H[:, order], sigma[:, order]

    S = P @ H
    logger.info("PARAFAC2: K=%d, rank %d, %d iterations, fit %.6f", K, rank, iteration, fit)
    return Parafac2Result(shared_factor=A, loadings=sigma, sources=S, cross_product=H.T @ H,
                          fit=float(np.clip(fit, 0.0, 1.0)), iterations=iteration,
                          converged=converged, fit_trace=np.asarray(trace))


def parafac2_sources(result: Parafac2Result, n: int) -> np.ndarray:
    """n-th source column (1-based) of every S^[k], as a K x R array in manifest order"""
    if not 1 <= n <= result.rank:
        raise IndexOutOfRange(f"component index must be in 1..{result.rank}, got {n}")
    return result.sources[:, :, n - 1].copy()
