"""
Synthetic model zoos with a planted backdoor subspace

Clean models produce i.i.d. N(0, 1) activations. Backdoored models add a rank-`shared_dim`
component Z E_k, with Z (MC x shared_dim) common to all of them and E_k a per-model
perturbation of a common embedding. E_k maps into R^(d_k) through the first d_min
coordinates, which every model has; the component is scaled so its mean power over the
whole MC x d_k activation matrix is snr_db above the unit noise.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from ..errors import SpecViolation
from ..ingest.atf import ActivationSet, write_activations
from ..ingest.manifest import ModelEntry, ZooManifest, write_manifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# column j of the planted basis is scaled by DECAY ** j
DECAY = 0.8


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic zoo parameters"""

    K: int = 60
    backdoor_fraction: float = 0.5
    M: int = 10
    C: int = 10
    d_range: Tuple[int, int] = (64, 512)
    shared_dim: int = 5
    snr_db: float = 0.0
    seed: int = 0
    embed_jitter: float = 0.1
    test_every: int = 3
    arch: str = "synthetic"

    def __post_init__(self):
        d_min, d_max = self.d_range
        if self.K < 2:
            raise SpecViolation(f"K must be >= 2, got {self.K}")
        if not 0.0 <= self.backdoor_fraction <= 1.0:
            raise SpecViolation(f"backdoor_fraction must be in [0, 1], got {self.backdoor_fraction}")
        if self.M < 2 or self.C < 2:
            raise SpecViolation(f"M and C must be >= 2, got {self.M} x {self.C}")
        if self.shared_dim < 1:
            raise SpecViolation(f"shared_dim must be >= 1, got {self.shared_dim}")
        if d_min < self.shared_dim or d_max < d_min:
            raise SpecViolation(f"d_range {self.d_range} must satisfy shared_dim <= d_min <= d_max")
        if self.embed_jitter < 0:
            raise SpecViolation(f"embed_jitter must be >= 0, got {self.embed_jitter}")
        if self.test_every < 2:
            raise SpecViolation(f"test_every must be >= 2, got {self.test_every}")

    @property
    def backdoor_count(self) -> int:
        return int(round(self.K * self.backdoor_fraction))


@dataclass(frozen=True)
class SyntheticZoo:
    manifest: ZooManifest
    activations: List[ActivationSet]
    truth: Dict[str, str]


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def _layout(spec: SynthSpec) -> List[Tuple[str, str]]:
    """(label, split) per model in manifest order"""
    groups = []
    for label, count in (("backdoor", spec.backdoor_count), ("clean", spec.K - spec.backdoor_count)):
        splits = ["test" if j % spec.test_every == spec.test_every - 1 else "train"
                  for j in range(count)]
        groups += [(label, "train")] * splits.count("train")
        groups += [(label, "test")] * splits.count("test")
    return groups


def _model_activations(spec: SynthSpec, index: int, width: int, backdoor: bool,
                       basis: np.ndarray, embedding: np.ndarray) -> np.ndarray:
    rows = spec.M * spec.C
    d_min = spec.d_range[0]
    rng = _rng(spec.seed, index + 1)
    data = rng.standard_normal((rows, width))
    if backdoor:
        jitter = spec.embed_jitter * rng.standard_normal(embedding.shape)
        signal = basis @ (embedding + jitter)
        power = 10.0 ** (spec.snr_db / 10.0) * width / d_min
        signal *= np.sqrt(power / np.mean(signal ** 2))
        data[:, :d_min] += signal
    return data.reshape(spec.M, spec.C, width)


def generate_zoo(spec: SynthSpec, workers: int = 1) -> SyntheticZoo:
    """Build the zoo in memory; model paths are relative to the future zoo directory"""
    common = _rng(spec.seed, 0)
    d_min, d_max = spec.d_range
    rows = spec.M * spec.C
    widths = common.integers(d_min, d_max + 1, size=spec.K)
    basis = common.standard_normal((rows, spec.shared_dim)) * DECAY ** np.arange(spec.shared_dim)
    embedding = common.standard_normal((spec.shared_dim, d_min))

    layout = _layout(spec)
    ids = [f"model_{k:03d}" for k in range(spec.K)]

    def _build(k: int) -> ActivationSet:
        data = _model_activations(spec, k, int(widths[k]), layout[k][0] == "backdoor",
                                  basis, embedding)
        return ActivationSet(model_id=ids[k], data=data)

    if workers <= 1:
        activations = [_build(k) for k in range(spec.K)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            activations = list(pool.map(_build, range(spec.K)))

    entries = tuple(
        ModelEntry(id=ids[k], path=Path("models") / f"{ids[k]}.atf", label=label, split=split,
                   arch=spec.arch)
        for k, (label, split) in enumerate(layout)
    )
    notes = (f"synthetic zoo: seed={spec.seed}, backdoor_fraction={spec.backdoor_fraction}, "
             f"shared_dim={spec.shared_dim}, snr_db={spec.snr_db}")
    manifest = ZooManifest(models=entries, exemplars_per_class=spec.M, num_classes=spec.C,
                           notes=notes)
    logger.info("Generated %d models (%d backdoored), widths %d..%d",
                spec.K, spec.backdoor_count, int(widths.min()), int(widths.max()))
    return SyntheticZoo(manifest=manifest, activations=activations,
                        truth={e.id: e.label for e in entries})


def write_zoo(zoo: SyntheticZoo, out_dir: PathLike) -> Path:
    """Write ATF files, manifest.json and truth.csv; returns the manifest path"""
    out_dir = Path(out_dir)
    for entry, activations in zip(zoo.manifest.models, zoo.activations):
        write_activations(activations, out_dir / entry.path)
    manifest_path = out_dir / "manifest.json"
    write_manifest(zoo.manifest, manifest_path)
    with open(out_dir / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model_id", "label", "split"])
        for entry in zoo.manifest.models:
            writer.writerow([entry.id, entry.label, entry.split])
    logger.info("Wrote synthetic zoo to %s", out_dir)
    return manifest_path
