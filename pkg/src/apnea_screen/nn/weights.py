"""APNW binary weights file and its text manifest.

Layout (little-endian)::

    magic  b"APNW"
    u32    format version
    u32    class count
    u32    entry count
    entry* u8 layer kind, u8 rank, u32[rank] dims, f32[prod(dims)] payload

One entry per stored tensor, in ``Network.named_tensors()`` order.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import WeightsFormatError
from .layers import LayerKind
from .model import INPUT_SHAPE, Network, mobilenet_v2

MAGIC = b"APNW"
FORMAT_VERSION = 1


def _entry_bytes(kind: LayerKind, arr: np.ndarray) -> bytes:
    head = struct.pack("<BB", int(kind), arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def save_weights(model: Network, path: str | Path) -> Path:
    path = Path(path)
    entries = model.named_tensors()
    blob = bytearray(MAGIC)
    blob += struct.pack("<III", FORMAT_VERSION, model.num_classes, len(entries))
    lines = [f"format APNW v{FORMAT_VERSION}", f"classes {model.num_classes}",
             f"entries {len(entries)}"]
    for name, kind, arr in entries:
        data = _entry_bytes(kind, arr)
        blob += data
        digest = hashlib.sha256(data).hexdigest()[:16]
        shape = "x".join(map(str, arr.shape))
        lines.append(f"{name} {kind.name} {shape} {digest}")
    lines.append(f"file_sha256 {hashlib.sha256(blob).hexdigest()}")
    path.write_bytes(bytes(blob))
    manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_weights(path: str | Path) -> tuple[int, list[tuple[LayerKind, np.ndarray]]]:
    """Parse an APNW file into ``(class_count, [(kind, float32 array), ...])``."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, classes, count = struct.unpack_from("<III", buf, 4)
        if version != FORMAT_VERSION:
            raise WeightsFormatError(f"{path}: unsupported version {version}")
        pos, out = 16, []
        for _ in range(count):
            kind, rank = struct.unpack_from("<BB", buf, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += 4 * n
            out.append((LayerKind(kind), arr.copy()))
    except (struct.error, ValueError) as exc:
        raise WeightsFormatError(f"{path}: truncated or corrupt ({exc})") from exc
    if pos != len(buf):
        raise WeightsFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return classes, out


def load_weights(model: Network, path: str | Path) -> Network:
    """Copy the tensors of an APNW file into a structurally identical model."""
    classes, entries = read_weights(path)
    own = model.named_tensors()
    if classes != model.num_classes or len(entries) != len(own):
        raise WeightsFormatError(
            f"{path}: {classes} classes / {len(entries)} tensors, model has "
            f"{model.num_classes} / {len(own)}")
    for (name, kind, arr), (fkind, farr) in zip(own, entries):
        if kind != fkind or arr.shape != farr.shape:
            raise WeightsFormatError(f"{path}: tensor {name} is {fkind.name}{farr.shape}, "
                                     f"expected {kind.name}{arr.shape}")
        arr[...] = farr
    return model


def load_mobilenet(path: str | Path, input_shape=INPUT_SHAPE) -> Network:
    classes, _ = read_weights(path)
    return load_weights(mobilenet_v2(classes, input_shape=input_shape), path)


def verify_manifest(path: str | Path) -> bool:
    """True when the manifest's whole-file digest matches the weights file."""
    lines = manifest_path(path).read_text(encoding="utf-8").splitlines()
    recorded = dict(l.split(" ", 1) for l in lines if l.startswith("file_sha256"))
    return recorded.get("file_sha256") == hashlib.sha256(Path(path).read_bytes()).hexdigest()
