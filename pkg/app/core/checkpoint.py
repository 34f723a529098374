"""
Checkpoint codec shared by every trained artifact.

Layout (little endian):
    b"PKNC" | u32 version | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u32 rank | u32 dims... | f64 data
    trailing UTF-8 JSON config blob (dims, gate variant, vocab hash, stage, ...)
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from app.core.exceptions import FormatError

MAGIC = b"PKNC"
VERSION = 1


def write_checkpoint(path, tensors: Dict[str, np.ndarray], config: Dict[str, Any]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    chunks.append(json.dumps(config, sort_keys=True).encode("utf-8"))
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(path, 0, "checkpoint file does not exist")
    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise FormatError(path, offset, f"truncated: need {n} bytes, {len(blob) - offset} left")
        out = blob[offset:offset + n]
        offset += n
        return out

    if take(4) != MAGIC:
        raise FormatError(path, 0, "bad magic, expected PKNC")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(path, 4, f"unsupported checkpoint version {version}")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)

    try:
        config = json.loads(blob[offset:].decode("utf-8")) if offset < len(blob) else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(path, offset, f"config blob is not valid JSON: {e}")
    return tensors, config
