"""Portable weight container.

File layout (all integers little-endian):

    bytes 0..3   magic "MDNW"
    bytes 4..5   container version, u16
    bytes 6..9   manifest byte length, u32
    ...          manifest: UTF-8 JSON {"entries": [{name, dtype, shape,
                 offset, length}, ...]}; offsets are relative to the start
                 of the payload region
    ...          payload: concatenated tensors, little-endian float32,
                 row-major
    last 4       CRC-32 of every preceding byte, u32

Round-trips are bit-exact; the writer is fully deterministic (sorted JSON
keys, parameters in name order) so identically-trained weights produce
identical files.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, ModelWeights, build_model, parameter_shapes
from .rng import RngState

__all__ = [
    "ChecksumError",
    "LoadResult",
    "WeightFormatError",
    "container_checksum",
    "load_weights",
    "save_weights",
]

MAGIC = b"MDNW"
VERSION = 1
_DTYPE_TAG = "f32"


class WeightFormatError(ValueError):
    """Bad magic, unknown version, or a malformed manifest."""


class ChecksumError(WeightFormatError):
    """Stored CRC does not match the file contents."""


@dataclass(frozen=True)
class LoadResult:
    weights: ModelWeights
    loaded_layers: tuple[str, ...]
    fresh_layers: tuple[str, ...]  # left at fresh init (permissive mode only)


def save_weights(weights: ModelWeights, path: str | Path) -> None:
    names = sorted(weights.names())
    entries = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(weights[name].data, dtype="<f4")
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": _DTYPE_TAG,
            "shape": list(arr.shape),
            "offset": len(payload),
            "length": len(raw),
        })
        payload.extend(raw)
    manifest = json.dumps({"entries": entries}, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    body = bytearray()
    body += MAGIC
    body += VERSION.to_bytes(2, "little")
    body += len(manifest).to_bytes(4, "little")
    body += manifest
    body += payload
    body += (zlib.crc32(bytes(body)) & 0xFFFFFFFF).to_bytes(4, "little")
    Path(path).write_bytes(bytes(body))


def container_checksum(path: str | Path) -> str:
    """Hex CRC-32 stored in the container trailer (used as a model id)."""
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise WeightFormatError(f"{path}: truncated container")
    return raw[-4:].hex()


def _read_container(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise WeightFormatError(f"{path}: truncated container")
    if raw[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {raw[:4]!r}")
    stored_crc = int.from_bytes(raw[-4:], "little")
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    version = int.from_bytes(raw[4:6], "little")
    if version != VERSION:
        raise WeightFormatError(f"{path}: unknown container version {version}")
    manifest_len = int.from_bytes(raw[6:10], "little")
    header_end = 10 + manifest_len
    payload = raw[header_end:-4]
    try:
        manifest = json.loads(raw[10:header_end].decode("utf-8"))
        entries = manifest["entries"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise WeightFormatError(f"{path}: malformed manifest: {exc}") from exc

    tensors: dict[str, np.ndarray] = {}
    claimed: list[tuple[int, int]] = []
    for entry in entries:
        name, dtype = entry["name"], entry["dtype"]
        shape = tuple(int(s) for s in entry["shape"])
        offset, length = int(entry["offset"]), int(entry["length"])
        if dtype != _DTYPE_TAG:
            raise WeightFormatError(f"{path}: unsupported dtype tag {dtype!r}")
        if offset < 0 or offset + length > len(payload):
            raise WeightFormatError(f"{path}: entry {name!r} out of bounds")
        if length != int(np.prod(shape)) * 4:
            raise WeightFormatError(f"{path}: entry {name!r} length/shape mismatch")
        for lo, hi in claimed:
            if offset < hi and lo < offset + length:
                raise WeightFormatError(f"{path}: entry {name!r} overlaps another entry")
        claimed.append((offset, offset + length))
        arr = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float32)
    return tensors


def load_weights(path: str | Path, config: ModelConfig, permissive: bool = False,
                 init_rng: RngState | None = None) -> LoadResult:
    """Load a container against a config.

    Strict mode requires an exact name/shape match. Permissive mode starts
    from a freshly initialized model (``init_rng`` required), overwrites every
    entry whose name and shape match, and reports the layers left at fresh
    initialization — the fine-tuning entry point when the head differs.
    """
    stored = _read_container(path)
    expected = parameter_shapes(config)

    if not permissive:
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        if missing or extra:
            raise ValueError(
                f"{path}: container does not match config "
                f"(missing={missing}, extra={extra}); use permissive mode to fine-tune")
        for name, shape in expected.items():
            if stored[name].shape != shape:
                raise ValueError(
                    f"{path}: parameter {name!r} has shape {stored[name].shape}, "
                    f"expected {shape}")
        tensors = {name: Tensor(stored[name], requires_grad=True) for name in expected}
        return LoadResult(ModelWeights(tensors), tuple(sorted(expected)), ())

    if init_rng is None:
        raise ValueError("permissive load needs init_rng for layers absent from the container")
    weights = build_model(config, init_rng)
    loaded, fresh = [], []
    for name, shape in expected.items():
        arr = stored.get(name)
        if arr is not None and arr.shape == shape:
            weights.tensors[name] = Tensor(arr, requires_grad=True)
            loaded.append(name)
        else:
            fresh.append(name)
    return LoadResult(weights, tuple(sorted(loaded)), tuple(sorted(fresh)))
