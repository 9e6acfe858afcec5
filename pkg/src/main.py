#!/usr/bin/env python3
"""
TrojaTensor - backdoored model detection from model-zoo activations
Command-line entry point
"""

import argparse
import logging
import statistics
import sys
from pathlib import Path
from typing import List, Optional

from .core.config import DetectConfig, default_log_level, default_threads, load_environment, peak_rss_mb
from .core.decomposition.iva import IvaOptions
from .core.decomposition.parafac2 import Parafac2Options
from .core.engine import STAGES, DetectionEngine
from .core.errors import TrojaTensorError
from .core.features.projection import RpConfig
from .core.ingest.atf import convert_npy
from .core.synth.zoo_generator import SynthSpec, generate_zoo, write_zoo
from .report.writers import ReportWriter, rerender, write_bench_csv

logger = logging.getLogger("trojatensor")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

SCHEME_NAMES = {"gaussian": "gaussian", "sparse": "sparse_sign"}


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("manifest", type=Path, help="zoo manifest (JSON)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rp-dim", type=int, default=500, help="projected width R")
    parser.add_argument("--rp-scheme", choices=sorted(SCHEME_NAMES), default="gaussian")
    parser.add_argument("--rp-shared", action=argparse.BooleanOptionalAction, default=True,
                        help="one projection for the whole zoo (default) or one per model")
    parser.add_argument("--rp-standardize", action="store_true",
                        help="standardize projected columns instead of only centering")
    parser.add_argument("--rp-normalize", action=argparse.BooleanOptionalAction, default=True,
                        help="rescale each model's projected features to unit RMS (default)")
    parser.add_argument("--order", type=int, default=10, help="PCA model order N for IVA")
    parser.add_argument("--iva-tol", type=float, default=1e-6)
    parser.add_argument("--iva-max-iter", type=int, default=1024)
    parser.add_argument("--rank", type=int, default=10, help="PARAFAC2 rank")
    parser.add_argument("--pf2-tol", type=float, default=1e-8)
    parser.add_argument("--pf2-max-iter", type=int, default=2000)
    parser.add_argument("--component", type=int, default=1,
                        help="SCV / PARAFAC2 component feeding the correlation matrix")
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--bonferroni", choices=("global", "row"), default="global")
    parser.add_argument("--sample-size", choices=("auto", "projected"), default="auto")
    parser.add_argument("--evaluate", choices=("test", "all"), default="test")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trojatensor",
                                     description="Backdoored model detection by joint decomposition")
    parser.add_argument("--log-level", default=None,
                        help="DEBUG, INFO, WARNING or ERROR (env TROJATENSOR_LOG_LEVEL)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (env TROJATENSOR_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic model zoo")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--K", type=int, default=60)
    synth.add_argument("--backdoor-fraction", type=float, default=0.5)
    synth.add_argument("--M", type=int, default=10)
    synth.add_argument("--C", type=int, default=10)
    synth.add_argument("--d-min", type=int, default=64)
    synth.add_argument("--d-max", type=int, default=512)
    synth.add_argument("--shared-dim", type=int, default=5)
    synth.add_argument("--snr-db", type=float, default=0.0)
    synth.add_argument("--embed-jitter", type=float, default=0.1)
    synth.add_argument("--seed", type=int, default=0)

    convert = sub.add_parser("convert", help="convert a .npy activation array to ATF")
    convert.add_argument("npy", type=Path)
    convert.add_argument("atf", type=Path)
    convert.add_argument("--model-id", default=None)

    detect = sub.add_parser("detect", help="run the detection pipeline on a zoo")
    _add_pipeline_flags(detect)
    detect.add_argument("--method", choices=("iva", "parafac2"), default="parafac2")
    detect.add_argument("--out", type=Path, default=Path("trojatensor_out"))
    detect.add_argument("--cell-px", type=int, default=16, help="heatmap pixels per cell")

    bench = sub.add_parser("bench", help="time every pipeline stage")
    _add_pipeline_flags(bench)
    bench.add_argument("--methods", nargs="+", choices=("iva", "parafac2"),
                       default=["iva", "parafac2"])
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--out", type=Path, default=Path("bench.csv"))

    report = sub.add_parser("report", help="re-render images and summary from report.json")
    report.add_argument("report_json", type=Path)
    report.add_argument("--out", type=Path, default=None)
    report.add_argument("--cell-px", type=int, default=16)
    return parser


def config_from_args(args: argparse.Namespace, method: str) -> DetectConfig:
    """Every seeded component takes the single --seed"""
    return DetectConfig(
        method=method,
        seed=args.seed,
        rp=RpConfig(target_dim=args.rp_dim, seed=args.seed, scheme=SCHEME_NAMES[args.rp_scheme],
                    shared=args.rp_shared, standardize=args.rp_standardize, normalize=args.rp_normalize),
        order=args.order,
        iva=IvaOptions(max_iter=args.iva_max_iter, tol=args.iva_tol, seed=args.seed),
        rank=args.rank,
        parafac2=Parafac2Options(max_iter=args.pf2_max_iter, tol=args.pf2_tol, seed=args.seed),
        component=args.component,
        alpha=args.alpha,
        bonferroni=args.bonferroni,
        sample_size=args.sample_size,
        evaluate=args.evaluate,
    )


def cmd_synth(args: argparse.Namespace, workers: int) -> int:
    spec = SynthSpec(K=args.K, backdoor_fraction=args.backdoor_fraction, M=args.M, C=args.C,
                     d_range=(args.d_min, args.d_max), shared_dim=args.shared_dim,
                     snr_db=args.snr_db, seed=args.seed, embed_jitter=args.embed_jitter)
    manifest_path = write_zoo(generate_zoo(spec, workers), args.out)
    print(manifest_path)
    return EXIT_OK


def cmd_convert(args: argparse.Namespace, workers: int) -> int:
    convert_npy(args.npy, args.atf, args.model_id)
    return EXIT_OK


def cmd_detect(args: argparse.Namespace, workers: int) -> int:
    engine = DetectionEngine(config_from_args(args, args.method), workers)
    result = engine.run(args.manifest)
    report = ReportWriter(args.out, args.cell_px).write(result)
    metrics = report["detection"]["metrics"]
    if metrics:
        logger.info("accuracy %.3f, precision %s, recall %s", metrics["accuracy"],
                    metrics["precision"], metrics["recall"])
    if not result.converged:
        logger.warning("%s did not converge; results are from the last iterate", args.method)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, workers: int) -> int:
    rows = []
    for method in args.methods:
        engine = DetectionEngine(config_from_args(args, method), workers)
        runs = []
        for repeat in range(max(1, args.repeats)):
            result = engine.run(args.manifest)
            runs.append(result.timings)
            logger.info("bench %s run %d: %s", method, repeat + 1,
                        ", ".join(f"{s}={result.timings.get(s, 0.0):.3f}s" for s in STAGES))
        row = {"method": method}
        for stage in STAGES:
            row[stage] = statistics.median(run.get(stage, 0.0) for run in runs)
        row["total"] = statistics.median(sum(run.get(s, 0.0) for s in STAGES) for run in runs)
        row["peak_rss_mb"] = peak_rss_mb()
        rows.append(row)
    write_bench_csv(rows, args.out)
    print(args.out)
    return EXIT_OK


def cmd_report(args: argparse.Namespace, workers: int) -> int:
    print(rerender(args.report_json, args.out, args.cell_px))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "convert": cmd_convert,
    "detect": cmd_detect,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    load_environment()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(args.log_level or default_log_level()).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    logging.captureWarnings(True)
    workers = args.threads or default_threads()
    try:
        return COMMANDS[args.command](args, workers)
    except TrojaTensorError as e:
        logger.error("error: %s: %s", type(e).__name__, e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
