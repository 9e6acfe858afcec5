#!/usr/bin/env python3
"""
End-to-end tests: detection engine, report files and the command line
"""

import csv
import json
import os
import sys
import warnings

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.core.config import DetectConfig
from src.core.decomposition.iva import IvaOptions
from src.core.decomposition.parafac2 import Parafac2Options
from src.core.engine import STAGES, DetectionEngine
from src.core.errors import ConvergenceWarning, PreconditionViolation
from src.core.features.projection import RpConfig, effective_sample_size
from src.core.synth.zoo_generator import SynthSpec, generate_zoo, write_zoo
from src.main import main
from src.report.writers import BENCH_COLUMNS, build_report, dump_json

SMALL_ZOO = SynthSpec(K=24, M=6, C=6, d_range=(48, 160), shared_dim=3, snr_db=3.0, seed=0)


def _config(method, **overrides):
    settings = dict(
        method=method,
        rp=RpConfig(target_dim=200),
        iva=IvaOptions(max_iter=300, tol=1e-5),
        parafac2=Parafac2Options(max_iter=500, tol=1e-7),
        evaluate="all",
    )
    settings.update(overrides)
    return DetectConfig(**settings)


def _run(method, spec=SMALL_ZOO, **overrides):
    zoo = generate_zoo(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return DetectionEngine(_config(method, **overrides), workers=2).run_loaded(
            zoo.manifest, zoo.activations)


def test_parafac2_pipeline_detects_the_planted_backdoor():
    result = _run("parafac2")
    assert result.detection.metrics.accuracy >= 0.85
    assert result.feature_shape == (36, 200)
    assert result.sample_size == min(result.source_dims)
    assert set(result.timings) == set(STAGES)


def test_iva_pipeline_detects_the_planted_backdoor():
    result = _run("iva")
    assert result.detection.metrics.accuracy >= 0.75
    assert result.decomposition.order == 10
    assert len(result.decomposition.mixing) == SMALL_ZOO.K


def test_strong_planted_component_correlates_across_backdoored_models():
    spec = SynthSpec(K=20, M=6, C=6, d_range=(48, 96), shared_dim=3, snr_db=20.0, seed=1)
    result = _run("parafac2", spec)
    backdoor = [k for k, m in enumerate(result.manifest.models) if m.label == "backdoor"]
    r = np.abs(result.correlation.r[np.ix_(backdoor, backdoor)])
    assert r[~np.eye(len(backdoor), dtype=bool)].min() >= 0.9


def test_detection_holds_across_a_wide_range_of_widths():
    spec = SynthSpec(K=24, M=6, C=6, d_range=(48, 400), shared_dim=3, snr_db=3.0, seed=2)
    result = _run("parafac2", spec)
    assert result.detection.metrics.accuracy >= 0.85
    backdoor = np.array([m.label == "backdoor" for m in result.manifest.models])
    loadings = result.contributions.points[:, 0]
    assert loadings[backdoor].mean() > loadings[~backdoor].mean()
    r = np.abs(result.correlation.r[np.ix_(backdoor, backdoor)])
    assert r[~np.eye(backdoor.sum(), dtype=bool)].mean() >= 0.8


def test_reports_are_deterministic():
    first = dump_json(build_report(_run("parafac2")))
    second = dump_json(build_report(_run("parafac2")))
    assert first == second
    assert "timings" not in json.loads(first)


def test_clustering_separates_the_zoo():
    result = _run("parafac2")
    assert result.clusters is not None
    assert result.contributions.points.shape == (SMALL_ZOO.K, 2)
    trojan = set(result.clusters.members(result.clusters.trojan_cluster).tolist())
    backdoor = {k for k, m in enumerate(result.manifest.models) if m.label == "backdoor"}
    assert len(trojan & backdoor) >= len(backdoor) // 2


def test_clean_zoo_rarely_yields_significant_pairs():
    fractions = []
    for seed in range(3):
        spec = SynthSpec(K=16, M=6, C=6, d_range=(48, 96), backdoor_fraction=0.0, seed=seed)
        zoo = generate_zoo(spec)
        engine = DetectionEngine(_config("parafac2"), workers=1)
        features = engine.extract_features(zoo.activations)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            decomposition = engine.decompose(features)
        n = effective_sample_size(features, "auto", 200)
        report = engine.detector.correlate(decomposition.vectors, zoo.manifest, n)
        K = zoo.manifest.K
        fractions.append(report.significant.sum() / (K * (K - 1)))
    assert np.mean(fractions) <= 0.05


def test_invalid_method():
    with pytest.raises(PreconditionViolation):
        DetectConfig(method="ica")


# command line

def _synth(tmp_path, K="12"):
    out = tmp_path / "zoo"
    code = main(["synth", "--out", str(out), "--K", K, "--M", "4", "--C", "4",
                 "--d-min", "16", "--d-max", "40", "--shared-dim", "2", "--seed", "1"])
    assert code == 0
    return out / "manifest.json"


def test_missing_manifest_is_reported(tmp_path, caplog):
    missing = tmp_path / "absent" / "manifest.json"
    assert main(["detect", str(missing), "--out", str(tmp_path / "out")]) == 1
    assert str(missing) in caplog.text


def test_detect_writes_every_output(tmp_path):
    manifest = _synth(tmp_path)
    out = tmp_path / "out"
    code = main(["--threads", "1", "detect", str(manifest), "--out", str(out), "--rp-dim", "64",
                 "--rank", "4", "--pf2-max-iter", "200", "--evaluate", "all"])
    assert code in (0, 2)
    for name in ("report.json", "verdicts.csv", "clusters.csv", "trace.csv", "summary.txt",
                 "corr_heatmap.png"):
        assert (out / name).is_file()

    report = json.loads((out / "report.json").read_text())
    assert report["zoo"]["K"] == 12
    assert len(report["detection"]["verdicts"]) == 12
    with Image.open(out / "corr_heatmap.png") as image:
        assert image.size == (12 * 16, 12 * 16)
    with open(out / "trace.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ["iteration", "fit"]
    assert "accuracy" in (out / "summary.txt").read_text()


def test_detect_with_iva(tmp_path):
    manifest = _synth(tmp_path)
    out = tmp_path / "iva"
    code = main(["detect", str(manifest), "--method", "iva", "--out", str(out), "--rp-dim", "64",
                 "--order", "4", "--iva-max-iter", "100", "--evaluate", "all", "--cell-px", "8"])
    assert code in (0, 2)
    with Image.open(out / "corr_heatmap.png") as image:
        assert image.size == (12 * 8, 12 * 8)
    with open(out / "trace.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ["iteration", "cost"]


def test_bench_writes_one_row_per_method(tmp_path):
    manifest = _synth(tmp_path)
    bench = tmp_path / "bench.csv"
    code = main(["bench", str(manifest), "--rp-dim", "64", "--order", "4", "--rank", "4",
                 "--iva-max-iter", "50", "--pf2-max-iter", "50", "--repeats", "1",
                 "--out", str(bench)])
    assert code == 0
    with open(bench, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["iva", "parafac2"]
    assert list(rows[0]) == BENCH_COLUMNS
    assert all(float(r["total"]) >= 0 for r in rows)


def test_report_rerenders_images(tmp_path):
    manifest = _synth(tmp_path)
    out = tmp_path / "out"
    main(["detect", str(manifest), "--out", str(out), "--rp-dim", "64", "--rank", "4",
          "--pf2-max-iter", "100"])
    again = tmp_path / "again"
    assert main(["report", str(out / "report.json"), "--out", str(again), "--cell-px", "4"]) == 0
    assert (again / "summary.txt").read_text() == (out / "summary.txt").read_text()
    with Image.open(again / "corr_heatmap.png") as image:
        assert image.size == (12 * 4, 12 * 4)


def test_convert_command(tmp_path):
    np.save(tmp_path / "acts.npy", np.random.default_rng(0).standard_normal((2, 3, 5)))
    assert main(["convert", str(tmp_path / "acts.npy"), str(tmp_path / "acts.atf")]) == 0
    assert (tmp_path / "acts.atf").read_bytes()[:4] == b"ATF1"
    assert main(["convert", str(tmp_path / "nope.npy"), str(tmp_path / "x.atf")]) == 1


# full-size sweeps over the default synthetic zoo

@pytest.mark.slow
def test_default_zoo_accuracy_sweep(tmp_path):
    accuracy = {"parafac2": [], "iva": []}
    silhouettes = {"parafac2": [], "iva": []}
    for seed in range(10):
        zoo = generate_zoo(SynthSpec(seed=seed))
        for method in accuracy:
            config = DetectConfig(method=method, seed=seed, evaluate="all",
                                  rp=RpConfig(seed=seed))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                result = DetectionEngine(config).run_loaded(zoo.manifest, zoo.activations)
            accuracy[method].append(result.detection.metrics.accuracy)
            silhouettes[method].append(result.clusters.mean_silhouette
                                       if result.clusters is not None else -1.0)
    assert np.mean(accuracy["parafac2"]) >= 0.90
    assert np.mean(accuracy["iva"]) >= 0.85
    assert sum(p >= i for p, i in zip(accuracy["parafac2"], accuracy["iva"])) >= 8
    assert sum(p >= i for p, i in zip(silhouettes["parafac2"], silhouettes["iva"])) >= 7


@pytest.mark.slow
@pytest.mark.parametrize("method", ["parafac2", "iva"])
def test_default_zoo_silhouette_floor(tmp_path, method):
    zoo = generate_zoo(SynthSpec(seed=0))
    manifest_path = write_zoo(zoo, tmp_path / "zoo")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        result = DetectionEngine(DetectConfig(method=method)).run(manifest_path)
    assert result.clusters is not None
    assert result.clusters.mean_silhouette >= 0.65


@pytest.mark.slow
def test_clean_zoos_keep_the_family_wise_error_rate():
    hits = 0
    for seed in range(20):
        spec = SynthSpec(K=40, M=6, C=6, d_range=(48, 96), backdoor_fraction=0.0, seed=seed)
        zoo = generate_zoo(spec)
        engine = DetectionEngine(_config("parafac2", seed=seed, rp=RpConfig(target_dim=200, seed=seed)),
                                 workers=2)
        features = engine.extract_features(zoo.activations)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            decomposition = engine.decompose(features)
        n = effective_sample_size(features, "auto", 200)
        report = engine.detector.correlate(decomposition.vectors, zoo.manifest, n)
        hits += bool(report.significant_pairs())
    assert hits / 20 <= 0.10


@pytest.mark.slow
def test_bench_on_the_default_zoo(tmp_path):
    manifest_path = write_zoo(generate_zoo(SynthSpec(seed=0)), tmp_path / "zoo")
    bench = tmp_path / "bench.csv"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        assert main(["bench", str(manifest_path), "--repeats", "1", "--out", str(bench)]) == 0
    with open(bench, newline="") as fh:
        rows = {r["method"]: {k: float(v) for k, v in r.items() if k != "method"}
                for r in csv.DictReader(fh)}
    for row in rows.values():
        assert max(STAGES, key=lambda stage: row[stage]) == "decomposition"
        assert row["total"] < 300.0
        assert row["peak_rss_mb"] > 0.0
    slower = max(rows["iva"]["total"], rows["parafac2"]["total"])
    faster = min(rows["iva"]["total"], rows["parafac2"]["total"])
    assert slower <= 2.0 * faster
