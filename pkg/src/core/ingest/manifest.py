"""
Model-zoo manifest loading and validation
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from ..errors import (
    DuplicateModelId,
    InconsistentShape,
    IoFailure,
    MissingFile,
    SchemaViolation,
)
from .atf import ActivationSet, read_activations, read_header

logger = logging.getLogger(__name__)

LABELS = ("clean", "backdoor", "unknown")
SPLITS = ("train", "test")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ModelEntry:
    """One model of the zoo"""

    id: str
    path: Path
    label: str
    split: str
    arch: str = ""

    @property
    def is_reference(self) -> bool:
        """Training model known to be backdoored"""
        return self.split == "train" and self.label == "backdoor"

    @property
    def has_truth(self) -> bool:
        return self.label in ("clean", "backdoor")


@dataclass(frozen=True)
class ZooManifest:
    """K models sharing the exemplar grid M x C"""

    models: Tuple[ModelEntry, ...]
    exemplars_per_class: int
    num_classes: int
    notes: str = ""
    root: Optional[Path] = field(default=None, compare=False)

    @property
    def K(self) -> int:
        return len(self.models)

    @property
    def ids(self) -> List[str]:
        return [m.id for m in self.models]

    @property
    def grid(self) -> Tuple[int, int]:
        return self.exemplars_per_class, self.num_classes

    def reference_indices(self) -> List[int]:
        return [i for i, m in enumerate(self.models) if m.is_reference]

    def to_dict(self) -> Dict[str, Any]:
        """JSON form, with model paths relative to `root` when possible"""
        models = []
        for m in self.models:
            path = m.path
            if self.root is not None:
                try:
                    path = m.path.relative_to(self.root)
                except ValueError:
                    pass
            models.append({"id": m.id, "path": path.as_posix(), "label": m.label,
                           "split": m.split, "arch": m.arch})
        return {
            "exemplars_per_class": self.exemplars_per_class,
            "num_classes": self.num_classes,
            "notes": self.notes,
            "models": models,
        }


def _require(obj: Dict[str, Any], key: str, where: str, kind) -> Any:
    if key not in obj:
        raise SchemaViolation(f"{where}{key}", "missing")
    value = obj[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise SchemaViolation(f"{where}{key}", f"expected integer, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise SchemaViolation(f"{where}{key}", f"expected string, got {value!r}")
    return value


def parse_manifest(document: Dict[str, Any], root: Path) -> ZooManifest:
    """Build and validate a manifest from its decoded JSON document"""
    if not isinstance(document, dict):
        raise SchemaViolation("<root>", "expected a JSON object")
    M = _require(document, "exemplars_per_class", "", int)
    C = _require(document, "num_classes", "", int)
    if M < 2:
        raise SchemaViolation("exemplars_per_class", f"must be >= 2, got {M}")
    if C < 2:
        raise SchemaViolation("num_classes", f"must be >= 2, got {C}")
    raw_models = document.get("models")
    if not isinstance(raw_models, list):
        raise SchemaViolation("models", "expected a list")
    if len(raw_models) < 2:
        raise SchemaViolation("models", f"need at least 2 models, got {len(raw_models)}")

    models = []
    seen = set()
    for i, raw in enumerate(raw_models):
        where = f"models[{i}]."
        if not isinstance(raw, dict):
            raise SchemaViolation(f"models[{i}]", "expected an object")
        model_id = _require(raw, "id", where, str)
        path = _require(raw, "path", where, str)
        label = _require(raw, "label", where, str)
        split = _require(raw, "split", where, str)
        arch = raw.get("arch", "")
        if not isinstance(arch, str):
            raise SchemaViolation(f"{where}arch", f"expected string, got {arch!r}")
        if label not in LABELS:
            raise SchemaViolation(f"{where}label", f"expected one of {LABELS}, got {label!r}")
        if split not in SPLITS:
            raise SchemaViolation(f"{where}split", f"expected one of {SPLITS}, got {split!r}")
        if split == "train" and label == "unknown":
            raise SchemaViolation(f"{where}label", "training models must be clean or backdoor")
        if model_id in seen:
            raise DuplicateModelId(f"model id '{model_id}' appears more than once")
        seen.add(model_id)
        resolved = Path(path)
        if not resolved.is_absolute():
            resolved = root / resolved
        models.append(ModelEntry(id=model_id, path=resolved, label=label, split=split, arch=arch))

    notes = document.get("notes", "")
    return ZooManifest(models=tuple(models), exemplars_per_class=M, num_classes=C,
                       notes=notes if isinstance(notes, str) else str(notes), root=root)


def load_manifest(path: PathLike) -> ZooManifest:
    """Load a manifest, check every referenced ATF file exists and shares (M, C)"""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaViolation("<root>", f"{path}: {e}") from e

    manifest = parse_manifest(document, path.resolve().parent)
    for entry in manifest.models:
        if not entry.path.is_file():
            raise MissingFile(entry.path)
        M, C, _ = read_header(entry.path)
        if (M, C) != manifest.grid:
            raise InconsistentShape(
                f"model '{entry.id}' stores {M} x {C} exemplars x classes, "
                f"manifest declares {manifest.grid[0]} x {manifest.grid[1]}"
            )
    logger.info("Loaded manifest %s: K=%d, M=%d, C=%d", path, manifest.K, *manifest.grid)
    return manifest


def write_manifest(manifest: ZooManifest, path: PathLike) -> None:
    """Write the manifest as UTF-8 JSON"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_activations(manifest: ZooManifest, workers: int = 1) -> List[ActivationSet]:
    """Read every model's activations in manifest order"""
    def _read(entry: ModelEntry) -> ActivationSet:
        return read_activations(entry.path, entry.id, expected=manifest.grid)

    if workers <= 1:
        return [_read(entry) for entry in manifest.models]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_read, manifest.models))
