"""
Checkpoint service module.

File layout (all integers little-endian uint32):

    b"PRRK1"
    header length, header bytes   UTF-8 "key=value" lines
    tensor count
    per tensor: name length, name bytes, rank, dims..., float32 values (row-major)
"""

import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.exceptions import CheckpointError
from app.models.pipeline import ReflectionModel
from app.schemas.model import ModelConfig
from app.services.imageio import PathLike

logger = logging.getLogger(__name__)

MAGIC = b"PRRK1"
_U32 = struct.Struct("<I")
VALUE_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Metadata plus ordered named tensors."""
    metadata: Dict[str, str]
    tensors: Dict[str, np.ndarray]

    @property
    def preset(self) -> Optional[str]:
        return self.metadata.get("preset")

    def require(self, preset: str, config_hash: Optional[str] = None) -> None:
        """
        Raises:
            CheckpointError: If the checkpoint was written for another preset or model configuration
        """
        if self.preset != preset:
            raise CheckpointError(f"checkpoint preset {self.preset!r} does not match {preset!r}")
        stored = self.metadata.get("config_hash")
        if config_hash is not None and stored is not None and stored != config_hash:
            raise CheckpointError(f"checkpoint config hash {stored} does not match {config_hash}")


def _write_u32(stream: BinaryIO, value: int) -> None:
    stream.write(_U32.pack(value))


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_u32(stream: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(stream, 4, what))[0]


def encode_header(metadata: Mapping[str, object]) -> bytes:
    lines = []
    for key, value in metadata.items():
        text = str(value)
        if "=" in key or "\n" in key or "\n" in text:
            raise CheckpointError(f"metadata entry {key!r} cannot be stored")
        lines.append(f"{key}={text}\n")
    return "".join(lines).encode("utf-8")


def decode_header(data: bytes) -> Dict[str, str]:
    metadata = {}
    for line in data.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed header line {line!r}")
        metadata[key] = value
    return metadata


def dumps(tensors: Mapping[str, np.ndarray], metadata: Mapping[str, object]) -> bytes:
    stream = io.BytesIO()
    stream.write(MAGIC)
    header = encode_header(metadata)
    _write_u32(stream, len(header))
    stream.write(header)
    _write_u32(stream, len(tensors))
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        _write_u32(stream, len(encoded))
        stream.write(encoded)
        _write_u32(stream, array.ndim)
        for dim in array.shape:
            _write_u32(stream, dim)
        stream.write(np.ascontiguousarray(array, dtype=VALUE_DTYPE).tobytes())
    return stream.getvalue()


def loads(data: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        CheckpointError: On a wrong magic number or a truncated body
    """
    stream = io.BytesIO(data)
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r}, expected {MAGIC!r})")
    header = _read_exact(stream, _read_u32(stream, "header length"), "header")
    metadata = decode_header(header)
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(_read_u32(stream, "tensor count")):
        name = _read_exact(stream, _read_u32(stream, "name length"), "name").decode("utf-8")
        rank = _read_u32(stream, f"{name} rank")
        shape = tuple(_read_u32(stream, f"{name} dims") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        raw = _read_exact(stream, count * VALUE_DTYPE.itemsize, f"{name} values")
        tensors[name] = np.frombuffer(raw, dtype=VALUE_DTYPE).reshape(shape).astype(np.float32)
    return Checkpoint(metadata=metadata, tensors=tensors)


def save_checkpoint(path: PathLike, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, object]) -> Path:
    """
    Write tensors and metadata to ``path``.

    Args:
        path: Destination file
        tensors: Ordered name → array mapping, stored as float32
        metadata: Header entries (preset, stage, iteration, seed, config_hash, ...)

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(tensors, metadata))
    logger.info("saved checkpoint %s (%d tensors)", path, len(tensors))
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    Read a checkpoint file.

    Raises:
        CheckpointError: If the file is unreadable or malformed
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(data)


def save_model(path: PathLike, model: ReflectionModel, stage: str, iteration: int, seed: int) -> Path:
    """Save the complete model state with its configuration in the header."""
    metadata = {
        "preset": model.cfg.preset.value,
        "stage": stage,
        "iteration": iteration,
        "seed": seed,
        "config_hash": model.cfg.config_hash(),
        "model_config": model.cfg.model_dump_json(),
    }
    return save_checkpoint(path, model.state_dict(), metadata)


def load_model(path: PathLike, expected: Optional[ModelConfig] = None) -> Tuple[ReflectionModel, Checkpoint]:
    """
    Rebuild a model from a checkpoint.

    Args:
        path: Checkpoint file
        expected: Configuration the caller runs with; its preset and hash must match

    Returns:
        (model, checkpoint)

    Raises:
        CheckpointError: On a malformed file, preset or configuration mismatch, or missing tensors
    """
    checkpoint = load_checkpoint(path)
    if expected is not None:
        checkpoint.require(expected.preset.value, expected.config_hash())
        cfg = expected
    else:
        stored = checkpoint.metadata.get("model_config")
        if stored is None:
            raise CheckpointError(f"{path}: checkpoint carries no model configuration")
        try:
            cfg = ModelConfig.model_validate_json(stored)
        except ValidationError as exc:
            raise CheckpointError(f"{path}: invalid model configuration: {exc}") from exc
    seed = int(checkpoint.metadata.get("seed", 0))
    model = ReflectionModel(cfg, seed=seed)
    model.load_state_dict(checkpoint.tensors)
    return model, checkpoint
