"""
Detection Engine - runs ingest, features, decomposition and statistics on one zoo
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .analysis.clustering import ClusterReport, ContributionMatrix, contributions, kmeans2
from .analysis.detector import BackdoorDetector, DetectionReport
from .analysis.statistics import CorrelationReport
from .config import DetectConfig, default_threads
from .decomposition.iva import IvaResult, extract_scv, iva_decompose
from .decomposition.parafac2 import Parafac2Result, parafac2_als, parafac2_sources
from .decomposition.pca import PcaReduction, feature_rank, pca_reduce, reconstruct_mixing
from .errors import DegenerateInput, RankTooSmall
from .features.projection import FeatureMatrix, effective_sample_size, project_zoo
from .ingest.atf import ActivationSet
from .ingest.manifest import ZooManifest, load_activations, load_manifest

logger = logging.getLogger(__name__)

STAGES = ("ingest", "features", "decomposition", "stats")


@dataclass
class Decomposition:
    """Output of the decomposition stage, whichever method ran"""

    method: str
    result: Union[IvaResult, Parafac2Result]
    vectors: np.ndarray
    order: int
    trace: np.ndarray
    converged: bool
    reductions: List[PcaReduction] = field(default_factory=list)
    mixing: List[np.ndarray] = field(default_factory=list)

    def diagnostics(self) -> Dict[str, object]:
        info = {"method": self.method, "order": self.order, "converged": self.converged,
                "iterations": int(self.result.iterations)}
        if isinstance(self.result, IvaResult):
            info["final_cost"] = float(self.trace[-1])
            info["stop_reason"] = self.result.stop_reason
            info["scv_correlation"] = [float(self.result.scv_correlation[n])
                                       for n in self.result.scv_order]
            info["explained_variance"] = [float(r.explained_variance) for r in self.reductions]
        else:
            info["fit"] = float(self.result.fit)
        return info


@dataclass
class PipelineResult:
    manifest: ZooManifest
    config: DetectConfig
    feature_shape: Tuple[int, int]
    source_dims: List[int]
    sample_size: int
    decomposition: Decomposition
    correlation: CorrelationReport
    detection: DetectionReport
    contributions: Optional[ContributionMatrix]
    clusters: Optional[ClusterReport]
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.decomposition.converged


class DetectionEngine:
    """Backdoor detection pipeline over one model zoo"""

    def __init__(self, config: DetectConfig = None, workers: int = None):
        self.config = config or DetectConfig()
        self.workers = workers or default_threads()
        self.detector = BackdoorDetector(alpha=self.config.alpha,
                                         correction=self.config.bonferroni,
                                         evaluate=self.config.evaluate, z=self.config.z)
        self.timings: Dict[str, float] = {}

    def _timed(self, stage: str, func, *args):
        start = time.perf_counter()
        value = func(*args)
        self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start
        logger.debug("Stage %s took %.3fs", stage, self.timings[stage])
        return value

    def run(self, manifest_path) -> PipelineResult:
        """Full pipeline from a manifest on disk"""
        self.timings = {}
        manifest, activations = self._timed("ingest", self.ingest, manifest_path)
        return self._run_loaded(manifest, activations)

    def run_loaded(self, manifest: ZooManifest,
                   activations: Sequence[ActivationSet]) -> PipelineResult:
        """Full pipeline from an in-memory zoo"""
        self.timings = {"ingest": 0.0}
        return self._run_loaded(manifest, activations)

    def _run_loaded(self, manifest, activations) -> PipelineResult:
        logger.info("Running %s detection on %d models", self.config.method, manifest.K)
        features = self._timed("features", self.extract_features, activations)
        decomposition = self._timed("decomposition", self.decompose, features)
        sample_size = effective_sample_size(features, self.config.sample_size,
                                            self.config.rp.target_dim)
        correlation, detection, points, clusters = self._timed(
            "stats", self.analyze, manifest, decomposition, sample_size)
        return PipelineResult(
            manifest=manifest, config=self.config,
            feature_shape=(features[0].rows, features[0].cols),
            source_dims=[f.source_dim for f in features], sample_size=sample_size,
            decomposition=decomposition, correlation=correlation, detection=detection,
            contributions=points, clusters=clusters, timings=dict(self.timings),
        )

    def ingest(self, manifest_path) -> Tuple[ZooManifest, List[ActivationSet]]:
        manifest = load_manifest(Path(manifest_path))
        return manifest, load_activations(manifest, self.workers)

    def extract_features(self, activations: Sequence[ActivationSet]) -> List[FeatureMatrix]:
        return project_zoo(activations, self.config.rp, self.workers)

    def _map(self, func, items) -> list:
        if self.workers <= 1:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(func, items))

    def decompose(self, features: Sequence[FeatureMatrix]) -> Decomposition:
        if self.config.method == "iva":
            return self._decompose_iva(features)
        return self._decompose_parafac2(features)

    def _decompose_iva(self, features: Sequence[FeatureMatrix]) -> Decomposition:
        cfg = self.config
        ranks = self._map(feature_rank, features)
        order = min(cfg.order, min(ranks))
        if order < cfg.order:
            logger.warning("Model order reduced from %d to the smallest numerical rank %d",
                           cfg.order, order)
        reductions = self._map(lambda f: pca_reduce(f, order, cfg.min_variance), features)
        result = iva_decompose([r.reduced for r in reductions], cfg.iva)
        mixing = reconstruct_mixing(result, reductions)
        scv = extract_scv(result, cfg.component)
        return Decomposition(method="iva", result=result, vectors=scv.rows, order=order,
                             trace=result.cost_trace, converged=result.converged,
                             reductions=reductions, mixing=mixing)

    def _decompose_parafac2(self, features: Sequence[FeatureMatrix]) -> Decomposition:
        cfg = self.config
        result = parafac2_als(features, cfg.rank, cfg.parafac2)
        return Decomposition(method="parafac2", result=result,
                             vectors=parafac2_sources(result, cfg.component), order=cfg.rank,
                             trace=result.fit_trace, converged=result.converged)

    def analyze(self, manifest: ZooManifest, decomposition: Decomposition, sample_size: int):
        """Correlation report, verdicts and the 2-means view of the contributions"""
        correlation = self.detector.correlate(decomposition.vectors, manifest, sample_size)
        detection = self.detector.detect(correlation, manifest)
        try:
            points = contributions(decomposition.result, decomposition.mixing or None,
                                   manifest.ids)
            clusters = kmeans2(points.points, restarts=self.config.kmeans_restarts,
                               seed=self.config.seed, max_iter=self.config.kmeans_max_iter,
                               scores=[v.score for v in detection.verdicts])
        except (RankTooSmall, DegenerateInput) as e:
            logger.warning("Skipping clustering: %s", e)
            points, clusters = None, None
        return correlation, detection, points, clusters
