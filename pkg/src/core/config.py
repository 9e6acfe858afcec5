"""
Pipeline configuration and environment settings
"""

import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Any, Dict

import psutil
from dotenv import load_dotenv

try:
    import resource
except ImportError:  # Windows
    resource = None

from .decomposition.iva import IvaOptions
from .decomposition.parafac2 import Parafac2Options
from .errors import PreconditionViolation
from .features.projection import RpConfig

logger = logging.getLogger(__name__)

METHODS = ("iva", "parafac2")
SAMPLE_SIZE_POLICIES = ("auto", "projected")

THREADS_ENV = "TROJATENSOR_THREADS"
LOG_LEVEL_ENV = "TROJATENSOR_LOG_LEVEL"


@dataclass(frozen=True)
class DetectConfig:
    """Everything `detect` needs besides the manifest"""

    method: str = "parafac2"
    seed: int = 0
    rp: RpConfig = field(default_factory=RpConfig)
    order: int = 10
    min_variance: float = 0.9
    iva: IvaOptions = field(default_factory=IvaOptions)
    rank: int = 10
    parafac2: Parafac2Options = field(default_factory=Parafac2Options)
    component: int = 1
    alpha: float = 0.05
    bonferroni: str = "global"
    sample_size: str = "auto"
    evaluate: str = "test"
    z: float = 1.96
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300

    def __post_init__(self):
        if self.method not in METHODS:
            raise PreconditionViolation(f"method must be one of {METHODS}, got {self.method!r}")
        if self.sample_size not in SAMPLE_SIZE_POLICIES:
            raise PreconditionViolation(
                f"sample size policy must be one of {SAMPLE_SIZE_POLICIES}, got {self.sample_size!r}"
            )
        if not 0.0 < self.alpha < 1.0:
            raise PreconditionViolation(f"alpha must be in (0, 1), got {self.alpha}")
        if self.component < 1:
            raise PreconditionViolation(f"component must be >= 1, got {self.component}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def load_environment() -> None:
    """Read a .env file from the working directory, if any"""
    load_dotenv()


def default_threads() -> int:
    """Worker cap: TROJATENSOR_THREADS, else physical cores"""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            threads = int(value)
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", THREADS_ENV, value)
        else:
            if threads >= 1:
                return threads
            logger.warning("Ignoring %s=%d (must be >= 1)", THREADS_ENV, threads)
    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def default_log_level() -> str:
    return os.environ.get(LOG_LEVEL_ENV, "INFO").upper()


def peak_rss_mb() -> float:
    """Peak resident set size of this process so far, in MiB"""
    peak_wset = getattr(psutil.Process().memory_info(), "peak_wset", None)
    if peak_wset is not None:
        return peak_wset / 2 ** 20
    if resource is not None:
        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        # bytes on macOS, kilobytes elsewhere
        return peak / 2 ** 20 if sys.platform == "darwin" else peak / 2 ** 10
    return psutil.Process().memory_info().rss / 2 ** 20
