"""
Backdoor verdicts from the significance mask, and evaluation against ground truth
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import roc_auc_score

from ..errors import EmptyEvaluation, NoBackdoorReference, PreconditionViolation, SingleClassOnly
from ..ingest.manifest import ZooManifest
from .statistics import CorrelationReport, build_correlation_report

logger = logging.getLogger(__name__)

EVALUATION_SETS = ("test", "all")


@dataclass(frozen=True)
class ModelVerdict:
    model_id: str
    split: str
    truth: str
    arch: str
    verdict: str
    score: float
    max_ref_corr: float
    min_adj_p: float


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict[str, int]:
        return {"TP": self.tp, "FP": self.fp, "TN": self.tn, "FN": self.fn}


@dataclass(frozen=True)
class Metrics:
    """Ratios whose denominator is zero are None"""

    precision: Optional[float]
    recall: Optional[float]
    accuracy: float

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {"precision": self.precision, "recall": self.recall, "accuracy": self.accuracy}


@dataclass(frozen=True)
class DetectionReport:
    verdicts: List[ModelVerdict]
    evaluate: str
    confusion: Confusion
    metrics: Optional[Metrics]
    ci_halfwidth: Optional[float]
    roc_auc: Optional[float]
    per_arch: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    @property
    def scores(self) -> Dict[str, float]:
        return {v.model_id: v.score for v in self.verdicts}


def decide(significant: np.ndarray, r: np.ndarray, manifest: ZooManifest,
           p_adj: Optional[np.ndarray] = None) -> List[ModelVerdict]:
    """A model is backdoored when it correlates significantly with another known backdoor"""
    references = manifest.reference_indices()
    if not references:
        raise NoBackdoorReference("no training model is labelled backdoor")
    significant = np.asarray(significant, dtype=bool)
    r = np.asarray(r, dtype=np.float64)
    if p_adj is None:
        p_adj = np.where(significant, 0.0, 1.0)

    verdicts = []
    for i, entry in enumerate(manifest.models):
        refs = [j for j in references if j != i]
        if refs:
            best = refs[int(np.argmax(np.abs(r[i, refs])))]
            score = float(abs(r[i, best]))
            max_ref_corr = float(r[i, best])
            min_adj_p = float(np.min(p_adj[i, refs]))
            flagged = bool(np.any(significant[i, refs]))
        else:
            score, max_ref_corr, min_adj_p, flagged = 0.0, 0.0, 1.0, False
        verdicts.append(ModelVerdict(
            model_id=entry.id, split=entry.split, truth=entry.label, arch=entry.arch,
            verdict="backdoor" if flagged else "clean", score=score,
            max_ref_corr=max_ref_corr, min_adj_p=min_adj_p,
        ))
    return verdicts


def _evaluated(verdicts: Sequence[ModelVerdict], evaluate: str) -> List[ModelVerdict]:
    if evaluate not in EVALUATION_SETS:
        raise PreconditionViolation(f"evaluate must be one of {EVALUATION_SETS}, got {evaluate!r}")
    return [v for v in verdicts
            if v.truth in ("clean", "backdoor") and (evaluate == "all" or v.split == "test")]


def confusion_counts(verdicts: Sequence[ModelVerdict]) -> Confusion:
    tp = sum(v.truth == "backdoor" and v.verdict == "backdoor" for v in verdicts)
    fp = sum(v.truth == "clean" and v.verdict == "backdoor" for v in verdicts)
    tn = sum(v.truth == "clean" and v.verdict == "clean" for v in verdicts)
    fn = sum(v.truth == "backdoor" and v.verdict == "clean" for v in verdicts)
    return Confusion(tp=tp, fp=fp, tn=tn, fn=fn)


def compute_metrics(confusion: Confusion) -> Metrics:
    if confusion.total == 0:
        raise EmptyEvaluation("no labelled model to evaluate")
    flagged = confusion.tp + confusion.fp
    positives = confusion.tp + confusion.fn
    return Metrics(
        precision=confusion.tp / flagged if flagged else None,
        recall=confusion.tp / positives if positives else None,
        accuracy=(confusion.tp + confusion.tn) / confusion.total,
    )


def binomial_ci(accuracy: float, n: int, z: float = 1.96) -> float:
    """Normal-approximation half-width z * sqrt(acc (1 - acc) / n)"""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must be in [0, 1], got {accuracy}")
    return float(z * np.sqrt(accuracy * (1.0 - accuracy) / n))


def roc_auc(scores: Sequence[float], truth: Sequence) -> float:
    """Probability that a random backdoor model outscores a random clean one (ties 1/2)"""
    labels = np.array([t == "backdoor" if isinstance(t, str) else bool(t) for t in truth])
    if labels.all() or not labels.any():
        raise SingleClassOnly("ROC-AUC needs both backdoor and clean models")
    return float(roc_auc_score(labels.astype(int), np.asarray(scores, dtype=np.float64)))


def evaluate_verdicts(verdicts: Sequence[ModelVerdict], evaluate: str = "test",
                      z: float = 1.96) -> DetectionReport:
    """Confusion, metrics, CI and ROC-AUC over the evaluated models, overall and per arch"""
    chosen = _evaluated(verdicts, evaluate)
    confusion = confusion_counts(chosen)
    if not chosen:
        logger.warning("No labelled models in the '%s' evaluation set: metrics are not computed", evaluate)
        return DetectionReport(verdicts=list(verdicts), evaluate=evaluate, confusion=confusion,
                               metrics=None, ci_halfwidth=None, roc_auc=None)
    metrics = compute_metrics(confusion)
    ci = binomial_ci(metrics.accuracy, confusion.total, z)
    try:
        auc = roc_auc([v.score for v in chosen], [v.truth for v in chosen])
    except SingleClassOnly:
        logger.warning("ROC-AUC undefined: evaluated models carry a single ground-truth label")
        auc = None

    per_arch = {}
    for arch in sorted({v.arch for v in chosen if v.arch}):
        group = confusion_counts([v for v in chosen if v.arch == arch])
        per_arch[arch] = {"confusion": group.to_dict(), "metrics": compute_metrics(group).to_dict()}

    logger.info("Evaluated %d models: accuracy %.3f +/- %.3f, ROC-AUC %s",
                confusion.total, metrics.accuracy, ci, "n/a" if auc is None else f"{auc:.3f}")
    return DetectionReport(verdicts=list(verdicts), evaluate=evaluate, confusion=confusion,
                           metrics=metrics, ci_halfwidth=ci, roc_auc=auc, per_arch=per_arch)


class BackdoorDetector:
    """Turns per-model source vectors into a correlation report and verdicts"""

    def __init__(self, alpha: float = 0.05, correction: str = "global",
                 evaluate: str = "test", z: float = 1.96):
        self.alpha = alpha
        self.correction = correction
        self.evaluate = evaluate
        self.z = z

    def correlate(self, vectors, manifest: ZooManifest, sample_size: int) -> CorrelationReport:
        return build_correlation_report(vectors, manifest.ids, sample_size,
                                        self.alpha, self.correction)

    def detect(self, correlation: CorrelationReport, manifest: ZooManifest) -> DetectionReport:
        verdicts = decide(correlation.significant, correlation.r, manifest, correlation.p_adj)
        return evaluate_verdicts(verdicts, self.evaluate, self.z)
