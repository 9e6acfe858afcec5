"""
Correlation heatmap and cluster scatter images
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import cv2
import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from ..core.analysis.statistics import CorrelationReport
from ..core.errors import IoFailure

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# BGR
OUTLINE = (0, 255, 0)
TROJAN_COLOR = (0, 0, 255)
OTHER_COLOR = (255, 0, 0)
AXIS_COLOR = (160, 160, 160)


def heatmap_image(r: np.ndarray, significant: np.ndarray, cell_px: int = 16) -> np.ndarray:
    """K*cell_px square BGR image: colour = |r|, significant cells outlined in green"""
    K = r.shape[0]
    intensity = np.round(np.clip(np.abs(r), 0.0, 1.0) * 255).astype(np.uint8)
    image = cv2.applyColorMap(intensity, cv2.COLORMAP_HOT)
    image = cv2.resize(image, (K * cell_px, K * cell_px), interpolation=cv2.INTER_NEAREST)
    thickness = max(1, cell_px // 8)
    for i, j in zip(*np.nonzero(significant)):
        if i == j:
            continue
        # drawn on a copy of the cell so thick lines are clipped to it
        rows = slice(int(i) * cell_px, (int(i) + 1) * cell_px)
        cols = slice(int(j) * cell_px, (int(j) + 1) * cell_px)
        cell = np.ascontiguousarray(image[rows, cols])
        cv2.rectangle(cell, (0, 0), (cell_px - 1, cell_px - 1), OUTLINE, thickness)
        image[rows, cols] = cell
    return image


def _save_png(image_bgr: np.ndarray, path: PathLike, metadata: dict) -> None:
    path = Path(path)
    info = PngInfo()
    for key, value in metadata.items():
        info.add_text(key, value)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(cv2.cvtColor(image_bgr, cv2.COLOR_BGR2RGB)).save(path, pnginfo=info)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def render_heatmap(report: CorrelationReport, path: PathLike,
                   labels: Optional[Sequence[str]] = None, cell_px: int = 16) -> np.ndarray:
    """Write the |r| heatmap as PNG in manifest order; returns the BGR image"""
    image = heatmap_image(report.r, report.significant, cell_px)
    labels = list(labels) if labels is not None else list(report.ids)
    _save_png(image, path, {
        "labels": ",".join(labels),
        "alpha": f"{report.alpha:g}",
        "significant_pairs": str(len(report.significant_pairs())),
    })
    logger.info("Wrote correlation heatmap %s (%dx%d px)", path, image.shape[1], image.shape[0])
    return image


def render_clusters(points: np.ndarray, assignments: np.ndarray, trojan_cluster: int,
                    truth: Sequence[str], path: PathLike, size: int = 480) -> np.ndarray:
    """Scatter of 2-D contributions: red = trojan cluster, blue = other, filled = true backdoor"""
    points = np.asarray(points, dtype=np.float64)
    margin = size // 10
    image = np.full((size, size, 3), 255, dtype=np.uint8)
    low, high = points.min(axis=0), points.max(axis=0)
    span = np.where(high > low, high - low, 1.0)
    scaled = (points - low) / span * (size - 2 * margin)
    pixels = np.column_stack([margin + scaled[:, 0], size - margin - scaled[:, 1]]).round().astype(int)

    cv2.line(image, (margin, size - margin), (size - margin, size - margin), AXIS_COLOR, 1)
    cv2.line(image, (margin, margin), (margin, size - margin), AXIS_COLOR, 1)
    radius = max(3, size // 80)
    for (x, y), cluster, label in zip(pixels, assignments, truth):
        color = TROJAN_COLOR if cluster == trojan_cluster else OTHER_COLOR
        thickness = -1 if label == "backdoor" else 2
        cv2.circle(image, (int(x), int(y)), radius, color, thickness, lineType=cv2.LINE_AA)

    _save_png(image, path, {"x": "component 1", "y": "component 2"})
    logger.info("Wrote cluster plot %s", path)
    return image
