"""
Glance Service - the glance-and-compare preprocessing in front of the pick policy.

A glance is a 56x56 grayscale thumbnail in [0, 1]; the policy sees the
flattened difference between the current glance and the template (the glance
of the last picked frame).
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.core.exceptions import FormatError, ShapeError, UsageError
from app.schemas.config import GLANCE_SIZE

GLANCE_DIM = GLANCE_SIZE * GLANCE_SIZE
LUMA = np.array([0.299, 0.587, 0.114])

MAGIC = b"PKNG"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class FrameImage:
    """RGB frame, uint8 array of shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"frame must be (H, W, 3), got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _bilinear_axis(src_len: int, dst_len: int):
    # half-pixel centres; equal sizes map every sample onto itself
    pos = (np.arange(dst_len) + 0.5) * (src_len / dst_len) - 0.5
    pos = np.clip(pos, 0.0, src_len - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src_len - 1)
    return lo, hi, pos - lo


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    r0, r1, rw = _bilinear_axis(image.shape[0], height)
    c0, c1, cw = _bilinear_axis(image.shape[1], width)
    top = image[r0][:, c0] * (1 - cw) + image[r0][:, c1] * cw
    bottom = image[r1][:, c0] * (1 - cw) + image[r1][:, c1] * cw
    return top * (1 - rw)[:, None] + bottom * rw[:, None]


def make_glance(frame: FrameImage) -> np.ndarray:
    if frame.height < 1 or frame.width < 1:
        raise UsageError("cannot glance at a zero-sized frame")
    gray = (frame.pixels.astype(np.float64) @ LUMA) / 255.0
    return np.clip(resize_bilinear(gray, GLANCE_SIZE, GLANCE_SIZE), 0.0, 1.0)


def glance_diff(current: np.ndarray, template: np.ndarray) -> np.ndarray:
    if current.shape != (GLANCE_SIZE, GLANCE_SIZE) or template.shape != (GLANCE_SIZE, GLANCE_SIZE):
        raise ShapeError(f"glances must be {GLANCE_SIZE}x{GLANCE_SIZE}: {current.shape} vs {template.shape}")
    return (current - template).reshape(-1)


# =============================================================================
# Glance files
# =============================================================================

def write_glances(path, glances: np.ndarray) -> None:
    glances = np.asarray(glances)
    if glances.ndim != 3 or glances.shape[1:] != (GLANCE_SIZE, GLANCE_SIZE):
        raise ShapeError(f"glance stack must be (n, {GLANCE_SIZE}, {GLANCE_SIZE}), got {glances.shape}")
    pixels = np.clip(np.rint(glances * 255.0), 0, 255).astype(np.uint8)
    header = _HEADER.pack(MAGIC, VERSION, glances.shape[0], GLANCE_SIZE, GLANCE_SIZE)
    Path(path).write_bytes(header + pixels.tobytes())


def read_glances(path, expected_frames: int = None) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(path, 0, "glance file does not exist")
    if len(blob) < _HEADER.size:
        raise FormatError(path, len(blob), "truncated header")
    magic, version, n, h, w = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(path, 0, "bad magic, expected PKNG")
    if version != VERSION:
        raise FormatError(path, 4, f"unsupported glance version {version}")
    if (h, w) != (GLANCE_SIZE, GLANCE_SIZE):
        raise FormatError(path, 12, f"glance size {h}x{w}, expected {GLANCE_SIZE}x{GLANCE_SIZE}")
    if expected_frames is not None and n != expected_frames:
        raise FormatError(path, 8, f"{n} frames in header, manifest says {expected_frames}")
    need = _HEADER.size + n * h * w
    if len(blob) != need:
        raise FormatError(path, min(len(blob), need), f"payload holds {len(blob) - _HEADER.size} bytes, need {n * h * w}")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size).reshape(n, h, w)
    return pixels.astype(np.float64) / 255.0
