"""
Seeded random projection of variable-width activations to B^[k] in R^(MC x R)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from sklearn.random_projection import johnson_lindenstrauss_min_dim

from ..errors import PreconditionViolation
from ..ingest.atf import ActivationSet

logger = logging.getLogger(__name__)

SCHEMES = ("gaussian", "sparse_sign")

# stream id of the zoo-wide projection; per-model streams use index + 1
_SHARED_STREAM = 0


@dataclass(frozen=True)
class RpConfig:
    """Random projection settings

    `normalize` rescales each model's feature matrix to unit root-mean-square, so models
    of different widths enter the decomposition on the same scale.
    """

    target_dim: int = 500
    seed: int = 0
    scheme: str = "gaussian"
    shared: bool = True
    center: bool = True
    standardize: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.target_dim < 1:
            raise PreconditionViolation(f"target_dim must be >= 1, got {self.target_dim}")
        if self.scheme not in SCHEMES:
            raise PreconditionViolation(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")


@dataclass(frozen=True)
class FeatureMatrix:
    """Projected features of one model"""

    model_id: str
    data: np.ndarray
    source_dim: int

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def flatten_order(activations: ActivationSet) -> np.ndarray:
    """M x C x d -> MC x d with row m*C + c"""
    M, C, d = activations.shape
    return np.asarray(activations.data, dtype=np.float64).reshape(M * C, d)


def unflatten_order(matrix: np.ndarray, M: int, C: int) -> np.ndarray:
    """Inverse of flatten_order"""
    return np.asarray(matrix).reshape(M, C, -1)


def _generator(cfg: RpConfig, model_index: int) -> np.random.Generator:
    stream = _SHARED_STREAM if cfg.shared else model_index + 1
    # Philox is counter-based: the same (seed, stream) key always yields the same sequence
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, stream])))


def projection_matrix(width: int, cfg: RpConfig, model_index: int = 0) -> np.ndarray:
    """d x R projection matrix

    Entries are drawn row by row, so with a shared stream the matrix for width d is
    the leading d rows of the matrix for any larger width.
    """
    rng = _generator(cfg, model_index)
    R = cfg.target_dim
    if cfg.scheme == "gaussian":
        return rng.standard_normal((width, R)) / np.sqrt(R)
    u = rng.random((width, R))
    signs = np.where(u < 1.0 / 6.0, -1.0, np.where(u < 1.0 / 3.0, 1.0, 0.0))
    return signs * np.sqrt(3.0 / R)


def standardize_columns(data: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column (constant columns are left at zero)"""
    centered = data - data.mean(axis=0, keepdims=True)
    std = centered.std(axis=0, keepdims=True)
    std[std == 0] = 1.0
    return centered / std


def normalize_scale(data: np.ndarray) -> np.ndarray:
    """Divide by the root-mean-square entry; an all-zero matrix is returned unchanged"""
    rms = np.sqrt(np.mean(data ** 2))
    return data / rms if rms > 0 else data


def project(activations: ActivationSet, cfg: RpConfig, model_index: int = 0) -> FeatureMatrix:
    """Project one model's activations to R columns, center each column, then rescale"""
    flat = flatten_order(activations)
    features = flat @ projection_matrix(activations.width, cfg, model_index)
    if cfg.standardize:
        features = standardize_columns(features)
    elif cfg.center:
        features = features - features.mean(axis=0, keepdims=True)
    if cfg.normalize:
        features = normalize_scale(features)
    return FeatureMatrix(model_id=activations.model_id, data=features,
                         source_dim=activations.width)


def project_zoo(sets: Sequence[ActivationSet], cfg: RpConfig,
                workers: int = 1) -> List[FeatureMatrix]:
    """Project every model, in order; model i uses stream i when projections are per-model"""
    rows = sets[0].shape[0] * sets[0].shape[1]
    jl_dim = johnson_lindenstrauss_min_dim(n_samples=rows, eps=0.3)
    if cfg.target_dim < jl_dim:
        logger.info("R=%d is below the JL bound %d for %d rows at eps=0.3",
                    cfg.target_dim, jl_dim, rows)

    if workers <= 1:
        features = [project(s, cfg, i) for i, s in enumerate(sets)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            features = list(pool.map(lambda args: project(args[1], cfg, args[0]), enumerate(sets)))
    logger.info("Projected %d models to %d x %d features (%s, %s)", len(features), rows,
                cfg.target_dim, cfg.scheme, "shared" if cfg.shared else "per-model")
    return features


def effective_sample_size(features: Sequence[FeatureMatrix], policy: str = "auto",
                          target_dim: Optional[int] = None) -> int:
    """Degrees of freedom behind an R-length source vector

    A source built from d-dimensional activations spans at most d directions of R^R,
    so `auto` caps R at the narrowest activation width in the zoo.
    """
    R = target_dim if target_dim is not None else features[0].cols
    if policy == "projected":
        return R
    if policy != "auto":
        raise PreconditionViolation(f"sample-size policy must be 'auto' or 'projected', got {policy!r}")
    return int(min(R, min(f.source_dim for f in features)))
