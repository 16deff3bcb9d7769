"""Camera frames, segmentation masks, and the overlay compositing step that
turns raw frames plus masks into enhanced virtual observations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_ALPHA = 0.45
DEFAULT_COLOR = (255, 255, 0)


@dataclass(frozen=True, eq=False)
class Frame:
    """An 8-bit RGB raster stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.dtype != np.uint8:
            raise ValueError("frame pixels must be a uint8 ndarray")
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"frame pixels must have shape (h, w, 3), got {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("frame must be at least 1x1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return np.ascontiguousarray(self.pixels).tobytes()


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Binary mask paired with a detection confidence.

    bits is a (height, width) uint8 array of 0/1 values.
    """

    bits: np.ndarray
    confidence: float = 1.0

    def __post_init__(self):
        b = self.bits
        if not isinstance(b, np.ndarray) or b.dtype != np.uint8:
            raise ValueError("mask bits must be a uint8 ndarray")
        if b.ndim != 2:
            raise ValueError(f"mask bits must have shape (h, w), got {b.shape}")
        if b.size and int(b.max(initial=0)) > 1:
            raise ValueError("mask bits must be 0 or 1")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def area(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class OverlayConfig:
    alpha: float = DEFAULT_ALPHA
    color: tuple[int, int, int] = DEFAULT_COLOR

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if len(self.color) != 3 or not all(0 <= c <= 255 for c in self.color):
            raise ValueError(f"color must be three 8-bit channels, got {self.color}")


@dataclass(frozen=True, eq=False)
class JointState:
    """Proprioceptive joint vector (gripper x, gripper y, aperture)."""

    joints: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 1:
            raise ValueError("joints must be a flat vector")
        if not np.all(np.isfinite(j)):
            raise ValueError("joints must be finite")
        object.__setattr__(self, "joints", j)

    @property
    def dim(self) -> int:
        return self.joints.shape[0]


@dataclass(frozen=True, eq=False)
class VirtualObservation:
    """Enhanced per-camera frames plus the joint state fed to a policy."""

    frames: tuple[Frame, ...]
    joint_state: JointState
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("observation needs at least one frame")
        w, h = self.frames[0].width, self.frames[0].height
        for f in self.frames:
            if (f.width, f.height) != (w, h):
                raise ValueError("all observation frames must share dimensions")


def compose_overlay(frame: Frame, mask: SegmentationMask, config: OverlayConfig = OverlayConfig()) -> Frame:
    """Blend the overlay color into frame pixels selected by the mask.

    Masked channels become round((1-alpha)*p + alpha*c), rounding half away
    from zero, clamped to [0, 255]. Unmasked pixels are untouched and the
    input frame is never modified.
    """
    if (frame.height, frame.width) != (mask.height, mask.width):
        raise ValueError(
            f"frame {frame.width}x{frame.height} does not match mask {mask.width}x{mask.height}"
        )
    out = frame.pixels.copy()
    sel = mask.bits != 0
    if sel.any():
        p = frame.pixels[sel].astype(np.float64)
        c = np.asarray(config.color, dtype=np.float64)
        # blend values are nonnegative, so floor(x + 0.5) rounds half away from zero
        blended = (1.0 - config.alpha) * p + config.alpha * c
        out[sel] = np.clip(np.floor(blended + 0.5), 0.0, 255.0).astype(np.uint8)
    return Frame(out)


def make_virtual_observation(
    raw_frames: Sequence[Frame],
    masks: Sequence[SegmentationMask],
    joint_state: JointState,
    config: OverlayConfig = OverlayConfig(),
    enabled: bool = True,
    timestamp: float = 0.0,
) -> VirtualObservation:
    """Apply the overlay to each (frame, mask) pair; pass through if disabled."""
    if len(raw_frames) != len(masks):
        raise ValueError(f"{len(raw_frames)} frames but {len(masks)} masks")
    if enabled:
        frames = tuple(compose_overlay(f, m, config) for f, m in zip(raw_frames, masks))
    else:
        frames = tuple(raw_frames)
    return VirtualObservation(frames=frames, joint_state=joint_state, timestamp=timestamp)


# ---------------------------------------------------------------------------
# Binary PPM (P6) and PGM (P5) readers/writers. Strict: maxval must be 255,
# payload must be exact, trailing bytes are an error. Header comments (#) are
# accepted on read; the writer emits the canonical single-space form.


def _parse_pnm_header(data: bytes, magic: bytes, path: Path) -> tuple[int, int, int]:
    """Return (width, height, payload offset) after magic + 3 header ints."""
    if data[:2] != magic:
        raise ValueError(f"{path}: expected magic {magic.decode()}, got {data[:2]!r}")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise ValueError(f"{path}: malformed header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ValueError(f"{path}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ValueError(f"{path}: maxval must be 255, got {maxval}")
    return width, height, pos


def write_ppm(frame: Frame, path: str | Path) -> None:
    path = Path(path)
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    path.write_bytes(header + frame.tobytes())


def read_ppm(path: str | Path) -> Frame:
    path = Path(path)
    data = path.read_bytes()
    width, height, pos = _parse_pnm_header(data, b"P6", path)
    need = width * height * 3
    payload = data[pos:]
    if len(payload) < need:
        raise ValueError(f"{path}: truncated pixel data ({len(payload)} of {need} bytes)")
    if len(payload) > need:
        raise ValueError(f"{path}: {len(payload) - need} trailing bytes after pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Frame(pixels.copy())


def write_pgm(mask: SegmentationMask, path: str | Path) -> None:
    """Write mask bits as a binary PGM with 0/255 values."""
    path = Path(path)
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    path.write_bytes(header + (mask.bits * np.uint8(255)).tobytes())


def read_pgm(path: str | Path) -> SegmentationMask:
    """Read a 0/255 binary PGM into a mask (confidence fixed at 1.0)."""
    path = Path(path)
    data = path.read_bytes()
    width, height, pos = _parse_pnm_header(data, b"P5", path)
    need = width * height
    payload = data[pos:]
    if len(payload) < need:
        raise ValueError(f"{path}: truncated mask data ({len(payload)} of {need} bytes)")
    if len(payload) > need:
        raise ValueError(f"{path}: {len(payload) - need} trailing bytes after mask data")
    values = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    bad = (values != 0) & (values != 255)
    if bad.any():
        raise ValueError(f"{path}: mask values must be 0 or 255")
    return SegmentationMask(bits=(values // 255).astype(np.uint8), confidence=1.0)
