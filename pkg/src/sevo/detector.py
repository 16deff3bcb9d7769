"""Bottle detection: noise model, simulated detector, and the external
detector wire protocol.

The simulated detector derives masks from scene ground truth and corrupts
them with dropouts, pixel jitter, and false positives. Detection quality is
coupled to illumination: a red LED cuts the miss rate, and unlit dark scenes
make the target almost never detectable.

External detectors are child processes speaking a binary request/reply
protocol over stdin/stdout; replies slower than the deadline make the
detector count as unavailable.
"""

from __future__ import annotations

import math
import os
import selectors
import struct
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .observation import Frame, SegmentationMask

LED_MISS_FACTOR = 0.3
DARK_VISIBILITY = 0.04
GLARE_TONE = 170.0
GLARE_VISIBILITY = 0.3
DEFAULT_TIMEOUT_MS = 1000

REQUEST_MAGIC = b"SEV1"
REPLY_MAGIC = b"SEVM"


class ProtocolError(ValueError):
    """Malformed request or reply bytes."""


class DetectorUnavailableError(RuntimeError):
    """The external detector died, hung past the deadline, or closed its pipe."""


@dataclass(frozen=True)
class DetectorNoise:
    miss_rate: float = 0.0
    jitter_px: int = 0
    false_positive_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must be in [0, 1]")
        if not 0.0 <= self.false_positive_rate <= 1.0:
            raise ValueError("false_positive_rate must be in [0, 1]")
        if self.jitter_px < 0:
            raise ValueError("jitter_px must be >= 0")


DEFAULT_NOISE = DetectorNoise(miss_rate=0.08, jitter_px=1, false_positive_rate=0.02)


@dataclass(frozen=True)
class Detection:
    label: str
    mask: SegmentationMask

    @property
    def confidence(self) -> float:
        return self.mask.confidence

    def area(self) -> int:
        return self.mask.area()


def effective_noise(noise: DetectorNoise, led_on: bool, dark: bool) -> DetectorNoise:
    """Illumination-adjusted noise: the LED scales the miss rate down by
    LED_MISS_FACTOR; a dark scene without the LED leaves only
    DARK_VISIBILITY of the hit probability."""
    miss = noise.miss_rate
    if led_on:
        miss = miss * LED_MISS_FACTOR
    elif dark:
        miss = 1.0 - (1.0 - miss) * DARK_VISIBILITY
    return replace(noise, miss_rate=miss)


def _shift(bits: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate bits, zero-filling edges."""
    if dy == 0 and dx == 0:
        return bits.copy()
    h, w = bits.shape
    out = np.zeros_like(bits)
    src_y0, src_y1 = max(0, -dy), min(h, h - dy)
    src_x0, src_x1 = max(0, -dx), min(w, w - dx)
    if src_y0 < src_y1 and src_x0 < src_x1:
        out[src_y0 + dy : src_y1 + dy, src_x0 + dx : src_x1 + dx] = bits[src_y0:src_y1, src_x0:src_x1]
    return out


def _view_point(x: float, y: float, camera, shape: tuple[int, int]) -> tuple[float, float]:
    h, w = shape
    x0, y0, cw, ch = camera.crop
    vx = (x - x0) * (w / cw)
    vy = (y - y0) * (h / ch)
    if camera.flip_h:
        vx = w - vx
    if camera.flip_v:
        vy = h - vy
    return vx, vy


def mock_detect(state, camera, noise: DetectorNoise, rng, shape: Optional[tuple[int, int]] = None) -> list[Detection]:
    """Detect the bottle in one camera view from ground truth plus noise.

    Draws from rng in a fixed order (miss, jitter, confidence, false-positive
    chance, false-positive parameters) so rollouts replay exactly. False
    positives latch onto reflective distractors when the scene has any.
    Washed-out scenes (floor brightness past GLARE_TONE, far outside the
    detector's training distribution) cut hit probability to GLARE_VISIBILITY.
    """
    from .sim_env import WORLD, truth_mask  # sim_env imports this module at top level

    if shape is None:
        if camera.kind == "wrist":
            shape = (WORLD, WORLD)
        else:
            x0, y0, cw, ch = camera.crop
            shape = (ch, cw)
    h, w = shape
    bits = truth_mask(state, camera, shape)

    miss_rate = noise.miss_rate
    scene = state.scene
    brightness = (sum(scene.floor_tone) / 3.0) * (sum(scene.lighting.ambient) / 3.0)
    if brightness > GLARE_TONE:
        miss_rate = 1.0 - (1.0 - miss_rate) * GLARE_VISIBILITY

    u_miss = float(rng.random())
    if noise.jitter_px > 0:
        jx = int(rng.integers(-noise.jitter_px, noise.jitter_px + 1))
        jy = int(rng.integers(-noise.jitter_px, noise.jitter_px + 1))
    else:
        jx = jy = 0
    conf = float(rng.uniform(0.55, 0.99))

    detections = []
    if bits.any() and u_miss >= miss_rate:
        detections.append(Detection("bottle", SegmentationMask(_shift(bits, jy, jx), conf)))

    if float(rng.random()) < noise.false_positive_rate:
        fp_idx = int(rng.integers(0, 4))
        fx = float(rng.uniform(0.0, WORLD))
        fy = float(rng.uniform(0.0, WORLD))
        fr = float(rng.uniform(1.5, 3.5))
        fconf = float(rng.uniform(0.30, 0.80))
        distractors = state.scene.reflective_distractors
        if distractors and camera.kind != "wrist":
            dx_w, dy_w = distractors[fp_idx % len(distractors)]
            vx, vy = _view_point(dx_w, dy_w, camera, shape)
        else:
            vx, vy = fx * w / WORLD, fy * h / WORLD
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        disc = ((xx - vx) ** 2 + (yy - vy) ** 2 <= (fr * min(h, w) / WORLD) ** 2).astype(np.uint8)
        if disc.any():
            detections.append(Detection("bottle", SegmentationMask(disc, fconf)))
    return detections


def select_target(detections: Sequence[Detection]) -> Optional[SegmentationMask]:
    """Pick the mask to overlay: the largest bottle-labeled detection,
    breaking area ties by confidence and then by earliest position."""
    best = None
    best_key = None
    for idx, det in enumerate(detections):
        if det.label != "bottle":
            continue
        key = (det.area(), det.confidence, -idx)
        if best_key is None or key > best_key:
            best, best_key = det, key
    return best.mask if best is not None else None


# ---------------------------------------------------------------------------
# Wire protocol


def encode_request(frame: Frame) -> bytes:
    return REQUEST_MAGIC + struct.pack("<II", frame.width, frame.height) + frame.tobytes()


def decode_request(stream) -> Frame:
    """Read one detection request from a binary stream."""
    magic = _read_stream(stream, 4)
    if magic != REQUEST_MAGIC:
        raise ProtocolError(f"bad request magic {magic!r}")
    width, height = struct.unpack("<II", _read_stream(stream, 8))
    if width == 0 or height == 0 or width * height > 64 * 1024 * 1024:
        raise ProtocolError(f"unreasonable frame size {width}x{height}")
    payload = _read_stream(stream, width * height * 3)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Frame(pixels.copy())


def encode_reply(detections: Sequence[Detection]) -> bytes:
    if len(detections) > 255:
        raise ProtocolError("at most 255 detections per reply")
    parts = [REPLY_MAGIC, struct.pack("<B", len(detections))]
    for det in detections:
        label = det.label.encode("ascii")
        if not 1 <= len(label) <= 255:
            raise ProtocolError(f"label length {len(label)} out of range")
        conf = det.confidence
        if not (math.isfinite(conf) and 0.0 <= conf <= 1.0):
            raise ProtocolError(f"confidence {conf} out of range")
        parts.append(struct.pack("<fB", conf, len(label)))
        parts.append(label)
        parts.append((det.mask.bits * np.uint8(255)).tobytes())
    return b"".join(parts)


def decode_reply(data: bytes, width: int, height: int) -> list[Detection]:
    """Parse a full reply buffer for a width x height request."""
    view = memoryview(data)

    def take(n):
        nonlocal view
        if len(view) < n:
            raise ProtocolError("truncated reply")
        chunk, view = view[:n], view[n:]
        return bytes(chunk)

    if take(4) != REPLY_MAGIC:
        raise ProtocolError("bad reply magic")
    (count,) = struct.unpack("<B", take(1))
    detections = []
    for _ in range(count):
        conf, label_len = struct.unpack("<fB", take(5))
        if label_len == 0:
            raise ProtocolError("empty detection label")
        label = take(label_len).decode("ascii")
        raw = np.frombuffer(take(width * height), dtype=np.uint8)
        if not np.isin(raw, (0, 255)).all():
            raise ProtocolError("mask bytes must be 0 or 255")
        if not (math.isfinite(conf) and 0.0 <= conf <= 1.0):
            raise ProtocolError(f"confidence {conf} out of range")
        bits = (raw.reshape(height, width) != 0).astype(np.uint8)
        detections.append(Detection(label, SegmentationMask(bits, float(conf))))
    if len(view):
        raise ProtocolError(f"{len(view)} trailing bytes after reply")
    return detections


def _read_stream(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise ProtocolError(f"stream ended {remaining} bytes short")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class DetectorEndpoint:
    """Client side of one external detector process."""

    def __init__(self, proc: subprocess.Popen):
        self._proc = proc
        self._lock = threading.Lock()
        self._sel = selectors.DefaultSelector()
        self._sel.register(proc.stdout, selectors.EVENT_READ)

    def _read_deadline(self, n: int, deadline: float) -> bytes:
        fd = self._proc.stdout.fileno()
        buf = bytearray()
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise DetectorUnavailableError("detector reply timed out")
            if not self._sel.select(remaining):
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                raise DetectorUnavailableError("detector closed its output")
            buf.extend(chunk)
        return bytes(buf)

    def detect(self, frame: Frame, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> list[Detection]:
        """One request/reply round trip. Raises DetectorUnavailableError when
        the process is dead or slower than timeout_ms, ProtocolError on a
        malformed reply."""
        with self._lock:
            if self._proc.poll() is not None:
                raise DetectorUnavailableError("detector process has exited")
            try:
                self._proc.stdin.write(encode_request(frame))
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise DetectorUnavailableError(f"could not send request: {exc}") from exc
            deadline = time.monotonic() + timeout_ms / 1000.0
            header = self._read_deadline(5, deadline)
            if header[:4] != REPLY_MAGIC:
                raise ProtocolError(f"bad reply magic {header[:4]!r}")
            count = header[4]
            body = bytearray()
            for _ in range(count):
                head = self._read_deadline(5, deadline)
                (_, label_len) = struct.unpack("<fB", head)
                body.extend(head)
                body.extend(self._read_deadline(label_len, deadline))
                body.extend(self._read_deadline(frame.width * frame.height, deadline))
            return decode_reply(bytes(header) + bytes(body), frame.width, frame.height)

    def close(self):
        self._sel.close()
        for pipe in (self._proc.stdin, self._proc.stdout):
            try:
                pipe.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_detector(argv: Sequence[str]) -> DetectorEndpoint:
    proc = subprocess.Popen(
        list(argv),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        bufsize=0,
    )
    return DetectorEndpoint(proc)


def external_detect(frame: Frame, endpoint: DetectorEndpoint, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> list[Detection]:
    """Query an external detector, degrading to no detections on any failure
    so a hung or broken detector can never arm the gate."""
    try:
        return endpoint.detect(frame, timeout_ms=timeout_ms)
    except (DetectorUnavailableError, ProtocolError):
        return []


def echo_server_loop(stdin=None, stdout=None):
    """Serve detection requests forever: every frame gets one full-confidence
    checkerboard "bottle" mask. Used to exercise the protocol end to end."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        try:
            frame = decode_request(stdin)
        except ProtocolError:
            return
        yy, xx = np.mgrid[0 : frame.height, 0 : frame.width]
        bits = ((xx + yy) % 2).astype(np.uint8)
        reply = encode_reply([Detection("bottle", SegmentationMask(bits, 1.0))])
        stdout.write(reply)
        stdout.flush()
