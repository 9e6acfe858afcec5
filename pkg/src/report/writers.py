"""
Report generation - report.json, CSV tables and the plain-text summary
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..core.analysis.statistics import CorrelationReport
from ..core.engine import PipelineResult
from ..core.errors import IoFailure, MissingFile, SchemaViolation
from .heatmap import render_clusters, render_heatmap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

VERDICT_COLUMNS = ["model_id", "split", "truth", "verdict", "score", "max_ref_corr", "min_adj_p"]
CLUSTER_COLUMNS = ["model_id", "x", "y", "cluster", "truth"]
BENCH_COLUMNS = ["method", "ingest", "features", "decomposition", "stats", "total", "peak_rss_mb"]


def _matrix(a: np.ndarray) -> List[list]:
    return np.asarray(a).tolist()


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def build_report(result: PipelineResult) -> Dict[str, Any]:
    """JSON-ready dictionary of every number the pipeline produced; no wall-clock data"""
    manifest = result.manifest
    correlation = result.correlation
    detection = result.detection
    report = {
        "config": result.config.to_dict(),
        "zoo": {
            "K": manifest.K,
            "exemplars_per_class": manifest.exemplars_per_class,
            "num_classes": manifest.num_classes,
            "ids": manifest.ids,
            "labels": [m.label for m in manifest.models],
            "splits": [m.split for m in manifest.models],
            "archs": [m.arch for m in manifest.models],
            "source_dims": result.source_dims,
            "feature_shape": list(result.feature_shape),
        },
        "decomposition": result.decomposition.diagnostics(),
        "correlation": {
            "sample_size": correlation.sample_size,
            "alpha": correlation.alpha,
            "correction": correlation.correction,
            "r": _matrix(correlation.r),
            "p_raw": _matrix(correlation.p_raw),
            "p_adj": _matrix(correlation.p_adj),
            "significant": _matrix(correlation.significant),
        },
        "detection": {
            "evaluate": detection.evaluate,
            "verdicts": [
                {"model_id": v.model_id, "split": v.split, "truth": v.truth, "arch": v.arch,
                 "verdict": v.verdict, "score": v.score, "max_ref_corr": v.max_ref_corr,
                 "min_adj_p": v.min_adj_p}
                for v in detection.verdicts
            ],
            "confusion": detection.confusion.to_dict(),
            "metrics": detection.metrics.to_dict() if detection.metrics else None,
            "ci_halfwidth": detection.ci_halfwidth,
            "roc_auc": detection.roc_auc,
            "per_arch": detection.per_arch,
        },
        "clustering": None,
    }
    if result.clusters is not None:
        clusters = result.clusters
        report["clustering"] = {
            "source_method": result.contributions.source_method,
            "points": _matrix(result.contributions.points),
            "assignments": _matrix(clusters.assignments),
            "centroids": _matrix(clusters.centroids),
            "mean_silhouette": clusters.mean_silhouette,
            "trojan_cluster": clusters.trojan_cluster,
            "inertia": clusters.inertia,
        }
    return report


def dump_json(report: Dict[str, Any]) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def summary_text(report: Dict[str, Any]) -> str:
    """One comparison row: accuracy +/- CI, ROC-AUC, precision, recall, silhouette"""
    def fmt(value: Optional[float]) -> str:
        return "n/a" if value is None else f"{value:.2f}"

    detection = report["detection"]
    metrics = detection["metrics"] or {}
    clustering = report.get("clustering") or {}
    method = report["decomposition"]["method"]
    confusion = detection["confusion"]
    lines = [
        f"method      {method}",
        f"models      K={report['zoo']['K']}, evaluated={sum(confusion.values())} ({detection['evaluate']})",
        f"confusion   TP={confusion['TP']} FP={confusion['FP']} TN={confusion['TN']} FN={confusion['FN']}",
        f"accuracy    {fmt(metrics.get('accuracy'))} +/- {fmt(detection['ci_halfwidth'])}",
        f"roc_auc     {fmt(detection['roc_auc'])}",
        f"precision   {fmt(metrics.get('precision'))}",
        f"recall      {fmt(metrics.get('recall'))}",
        f"silhouette  {fmt(clustering.get('mean_silhouette'))}",
    ]
    for arch, group in sorted(detection.get("per_arch", {}).items()):
        lines.append(f"  {arch:<10}accuracy {fmt(group['metrics']['accuracy'])}, "
                     f"precision {fmt(group['metrics']['precision'])}, "
                     f"recall {fmt(group['metrics']['recall'])}")
    return "\n".join(lines) + "\n"


def _correlation_from_report(report: Dict[str, Any]) -> CorrelationReport:
    corr = report["correlation"]
    return CorrelationReport(
        ids=tuple(report["zoo"]["ids"]), r=np.asarray(corr["r"], dtype=np.float64),
        p_raw=np.asarray(corr["p_raw"]), p_adj=np.asarray(corr["p_adj"]),
        significant=np.asarray(corr["significant"], dtype=bool),
        sample_size=corr["sample_size"], alpha=corr["alpha"], correction=corr["correction"],
    )


def _heatmap_labels(report: Dict[str, Any]) -> List[str]:
    zoo = report["zoo"]
    return [f"{i}:{l}/{s}" for i, l, s in zip(zoo["ids"], zoo["labels"], zoo["splits"])]


def render_images(report: Dict[str, Any], out_dir: Path, cell_px: int = 16) -> None:
    render_heatmap(_correlation_from_report(report), out_dir / "corr_heatmap.png",
                   _heatmap_labels(report), cell_px)
    clustering = report.get("clustering")
    if clustering:
        render_clusters(np.asarray(clustering["points"]), np.asarray(clustering["assignments"]),
                        clustering["trojan_cluster"], report["zoo"]["labels"],
                        out_dir / "clusters.png")


class ReportWriter:
    """Writes every output file of one detection run into a directory"""

    def __init__(self, out_dir: PathLike, cell_px: int = 16):
        self.out_dir = Path(out_dir)
        self.cell_px = cell_px
        self.written: List[Path] = []

    def _path(self, name: str) -> Path:
        path = self.out_dir / name
        self.written.append(path)
        return path

    def write(self, result: PipelineResult) -> Dict[str, Any]:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoFailure(f"cannot create {self.out_dir}: {e}") from e
        report = build_report(result)
        self._write_text("report.json", dump_json(report))
        self._write_verdicts(result)
        self._write_clusters(result)
        self._write_trace(result)
        self._write_text("summary.txt", summary_text(report))
        render_images(report, self.out_dir, self.cell_px)
        self.written += [self.out_dir / "corr_heatmap.png"]
        if result.clusters is not None:
            self.written.append(self.out_dir / "clusters.png")
        logger.info("Wrote %d report files to %s", len(self.written), self.out_dir)
        return report

    def _write_text(self, name: str, text: str) -> None:
        path = self._path(name)
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"cannot write {path}: {e}") from e

    def _write_verdicts(self, result: PipelineResult) -> None:
        rows = [[v.model_id, v.split, v.truth, v.verdict, f"{v.score:.6f}",
                 f"{v.max_ref_corr:.6f}", f"{v.min_adj_p:.6g}"]
                for v in result.detection.verdicts]
        _write_csv(self._path("verdicts.csv"), VERDICT_COLUMNS, rows)

    def _write_clusters(self, result: PipelineResult) -> None:
        rows = []
        if result.clusters is not None:
            points = result.contributions.points
            for k, entry in enumerate(result.manifest.models):
                rows.append([entry.id, f"{points[k, 0]:.6f}", f"{points[k, 1]:.6f}",
                             int(result.clusters.assignments[k]), entry.label])
        _write_csv(self._path("clusters.csv"), CLUSTER_COLUMNS, rows)

    def _write_trace(self, result: PipelineResult) -> None:
        name = "cost" if result.decomposition.method == "iva" else "fit"
        rows = [[i, f"{value:.12g}"] for i, value in enumerate(result.decomposition.trace)]
        _write_csv(self._path("trace.csv"), ["iteration", name], rows)


def load_report(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaViolation("<root>", f"{path}: {e}") from e


def rerender(report_path: PathLike, out_dir: Optional[PathLike] = None, cell_px: int = 16) -> Path:
    """Rebuild the images and summary.txt from an existing report.json"""
    report_path = Path(report_path)
    report = load_report(report_path)
    for key in ("zoo", "correlation", "detection", "decomposition"):
        if key not in report:
            raise SchemaViolation(key, "missing from report")
    out_dir = Path(out_dir) if out_dir is not None else report_path.parent
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.txt").write_text(summary_text(report), encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write into {out_dir}: {e}") from e
    render_images(report, out_dir, cell_px)
    logger.info("Re-rendered report images in %s", out_dir)
    return out_dir


def write_bench_csv(rows: Sequence[Dict[str, Any]], path: PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {path.parent}: {e}") from e
    _write_csv(path, BENCH_COLUMNS,
               [[row["method"]] + [f"{row[c]:.4f}" for c in BENCH_COLUMNS[1:]] for row in rows])
