"""
Activation Tensor File (ATF) reader and writer

Layout, little-endian:
    b"ATF1" | u32 rank | rank x u32 dims | prod(dims) x float32, row-major

Rank 3 stores (M, C, d). Rank 4 stores (M, C, L, d) and is accepted only with L == 1.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from ..errors import (
    BadMagic,
    IoFailure,
    MissingFile,
    NonFiniteValue,
    SchemaViolation,
    ShapeMismatch,
    TruncatedFile,
)

logger = logging.getLogger(__name__)

MAGIC = b"ATF1"
_HEADER_DTYPE = "<I"
_PAYLOAD_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ActivationSet:
    """Final-layer activations of one model, shape M x C x d"""

    model_id: str
    data: np.ndarray
    layer_count: int = 1

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, order="C")
        if data.ndim != 3:
            raise ShapeMismatch(
                f"activation tensor of '{self.model_id}' must be M x C x d, got {data.shape}"
            )
        M, C, d = data.shape
        if M < 2 or C < 2 or d < 1:
            raise ShapeMismatch(
                f"activation tensor of '{self.model_id}' needs M >= 2, C >= 2, d >= 1, got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue(f"activation tensor of '{self.model_id}' has NaN/Inf entries")
        if self.layer_count != 1:
            raise SchemaViolation("layer_count", "only the final layer (L = 1) is supported")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _dims_from_header(raw: bytes, source: str) -> Tuple[Tuple[int, ...], int]:
    """Parse the header, returning (M, C, d) and the payload offset"""
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{source}: not an ATF file (expected magic {MAGIC!r})")
    if len(raw) < 8:
        raise TruncatedFile(f"{source}: header ends before the rank field")
    (rank,) = struct.unpack_from(_HEADER_DTYPE, raw, 4)
    if rank not in (3, 4):
        raise SchemaViolation("rank", f"{source}: expected 3, got {rank}")
    offset = 8 + 4 * rank
    if len(raw) < offset:
        raise TruncatedFile(f"{source}: header ends inside the dimension list")
    dims = struct.unpack_from("<" + "I" * rank, raw, 8)
    if rank == 4:
        if dims[2] != 1:
            raise SchemaViolation("dims", f"{source}: layer axis must be 1, got {dims[2]}")
        dims = (dims[0], dims[1], dims[3])
    return tuple(int(d) for d in dims), offset


def read_header(path: PathLike) -> Tuple[int, int, int]:
    """Return the (M, C, d) dims stored in an ATF file without reading the payload"""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    with open(path, "rb") as fh:
        raw = fh.read(8 + 4 * 4)
    dims, _ = _dims_from_header(raw, str(path))
    return dims


def decode(raw: bytes, model_id: str, source: str = "<bytes>") -> ActivationSet:
    """Decode a complete ATF byte string"""
    dims, offset = _dims_from_header(raw, source)
    count = int(np.prod(dims))
    expected = offset + count * _PAYLOAD_DTYPE.itemsize
    if len(raw) < expected:
        raise TruncatedFile(
            f"{source}: payload has {len(raw) - offset} bytes, header declares {expected - offset}"
        )
    if len(raw) > expected:
        raise SchemaViolation("payload", f"{source}: {len(raw) - expected} trailing bytes")
    values = np.frombuffer(raw, dtype=_PAYLOAD_DTYPE, count=count, offset=offset)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{source}: activation tensor has NaN/Inf entries")
    return ActivationSet(model_id=model_id, data=values.reshape(dims).astype(np.float32))


def encode(activations: ActivationSet) -> bytes:
    """Encode an activation set as ATF bytes (rank 3)"""
    M, C, d = activations.shape
    header = MAGIC + struct.pack("<4I", 3, M, C, d)
    return header + activations.data.astype(_PAYLOAD_DTYPE).tobytes(order="C")


def read_activations(path: PathLike, model_id: str,
                     expected: Tuple[int, int] = None) -> ActivationSet:
    """Read an ATF file, checking (M, C) against `expected` when given"""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    activations = decode(path.read_bytes(), model_id, str(path))
    if expected is not None and tuple(activations.shape[:2]) != tuple(expected):
        raise ShapeMismatch(
            f"{path}: activations are {activations.shape[0]} x {activations.shape[1]}, "
            f"manifest expects {expected[0]} x {expected[1]}"
        )
    logger.debug("Read %s: shape %s", path, activations.shape)
    return activations


def write_activations(activations: ActivationSet, path: PathLike) -> None:
    """Write an activation set to `path` in ATF format"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode(activations))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def convert_npy(npy_path: PathLike, atf_path: PathLike, model_id: str = None) -> ActivationSet:
    """Convert a float32/float64 .npy array of shape (M, C, d) or (M, C, 1, d) to ATF"""
    npy_path = Path(npy_path)
    if not npy_path.is_file():
        raise MissingFile(npy_path)
    try:
        array = np.load(npy_path, allow_pickle=False)
    except ValueError as e:
        raise SchemaViolation("npy", f"{npy_path}: {e}") from e
    if array.dtype not in (np.float32, np.float64):
        raise SchemaViolation("dtype", f"{npy_path}: expected float32/float64, got {array.dtype}")
    if array.ndim == 4:
        if array.shape[2] != 1:
            raise SchemaViolation("shape", f"{npy_path}: layer axis must be 1, got {array.shape[2]}")
        array = array[:, :, 0, :]
    if array.ndim != 3:
        raise SchemaViolation("shape", f"{npy_path}: expected M x C x d, got {array.shape}")
    activations = ActivationSet(model_id=model_id or npy_path.stem,
                                data=np.ascontiguousarray(array))
    write_activations(activations, atf_path)
    logger.info("Converted %s -> %s %s", npy_path, atf_path, activations.shape)
    return activations
