"""Tiny behavior-cloning policies over the composed observation stream.

Two variants share one architecture (affine encoder + tanh, one tanh hidden
layer, affine head emitting a short action chunk): "trainable" updates every
tensor, "frozen" keeps its random-projection encoder fixed and adapts only
the head. Gradients are hand-derived; training is plain minibatch SGD on
mean squared error. Policies serialize to a small tagged binary format.
"""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

POLICY_MAGIC = b"SEVP"
KIND_TRAINABLE = 0
KIND_FROZEN = 1
KIND_NAMES = {KIND_TRAINABLE: "trainable", KIND_FROZEN: "frozen"}

HIDDEN = 64
POOL = 4
PATCH = 16  # 64 / POOL
DEFAULT_CHUNK = 4
ENCODE_DECIMALS = 6

TENSOR_ORDER = ("enc.w", "enc.b", "head1.w", "head1.b", "head2.w", "head2.b")


@dataclass(frozen=True)
class InputSpec:
    cameras: int
    joint_dim: int = 3

    def __post_init__(self):
        if self.cameras < 1 or self.joint_dim < 1:
            raise ValueError("need at least one camera and one joint")

    @property
    def dim(self) -> int:
        return self.cameras * PATCH * PATCH * 3 + self.joint_dim


@dataclass(frozen=True, eq=False)
class Layer:
    w: np.ndarray
    b: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ValueError(f"layer shapes disagree: w {self.w.shape}, b {self.b.shape}")


@dataclass(frozen=True, eq=False)
class PolicyParams:
    kind: int
    chunk_len: int
    enc: Layer
    head1: Layer
    head2: Layer

    def __post_init__(self):
        if self.kind not in KIND_NAMES:
            raise ValueError(f"unknown policy kind {self.kind}")
        if not 1 <= self.chunk_len <= 255:
            raise ValueError("chunk_len must be in [1, 255]")
        if self.head2.w.shape[0] != self.chunk_len * 3:
            raise ValueError("head output does not match chunk_len * 3")
        if self.head1.w.shape[1] != self.enc.w.shape[0]:
            raise ValueError("encoder and hidden widths disagree")

    @property
    def input_dim(self) -> int:
        return self.enc.w.shape[1]

    @property
    def layers(self) -> tuple[Layer, Layer, Layer]:
        return (self.enc, self.head1, self.head2)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("bad training configuration")


def init_policy(spec: InputSpec, kind: int, chunk_len: int = DEFAULT_CHUNK, seed: int = 0) -> PolicyParams:
    """Fresh parameters: weights N(0, 1/sqrt(fan_in)) drawn encoder first,
    biases zero. The frozen variant marks its encoder non-trainable."""
    rng = np.random.default_rng(seed)
    d = spec.dim
    enc_w = rng.standard_normal((HIDDEN, d)) / math.sqrt(d)
    head1_w = rng.standard_normal((HIDDEN, HIDDEN)) / math.sqrt(HIDDEN)
    head2_w = rng.standard_normal((chunk_len * 3, HIDDEN)) / math.sqrt(HIDDEN)
    return PolicyParams(
        kind=kind,
        chunk_len=chunk_len,
        enc=Layer(enc_w, np.zeros(HIDDEN), frozen=(kind == KIND_FROZEN)),
        head1=Layer(head1_w, np.zeros(HIDDEN)),
        head2=Layer(head2_w, np.zeros(chunk_len * 3)),
    )


# ---------------------------------------------------------------------------
# Observation encoding


def encode_observation(frames: np.ndarray, joints: np.ndarray) -> np.ndarray:
    """Flatten one observation: each 64x64 camera frame is 4x4 area-mean
    pooled to 16x16, scaled to [0, 1], and quantized to 6 decimals; gripper
    x/y are scaled by the world size, aperture passes through."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[1:] != (64, 64, 3):
        raise ValueError(f"expected (C, 64, 64, 3) frames, got {frames.shape}")
    pooled = frames.reshape(-1, PATCH, POOL, PATCH, POOL, 3).astype(np.float64).sum(axis=(2, 4))
    feats = np.round(pooled / (POOL * POOL * 255.0), ENCODE_DECIMALS).ravel()
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (3,):
        raise ValueError(f"expected 3 joint values, got shape {joints.shape}")
    scaled = np.array([joints[0] / 64.0, joints[1] / 64.0, joints[2]])
    return np.concatenate([feats, scaled])


def encode_dataset(records: Sequence, chunk_len: int, deployment_filter: bool = True):
    """Turn episode records into supervised pairs (X, Y).

    Each step contributes its encoded observation and the next chunk_len
    actions flattened, padding past the episode end by repeating the final
    action. With deployment_filter, episodes recorded under the
    detector-motion binding keep only gate-armed steps (the policy never
    runs unarmed at deployment); ungated episodes keep every step.
    """
    from .safety_gate import ARMED, PHASES

    armed_code = PHASES.index(ARMED)
    xs, ys = [], []
    for rec in records:
        t_total = rec.length
        pooled = rec.sevo.reshape(t_total, -1, PATCH, POOL, PATCH, POOL, 3).astype(np.float64).sum(axis=(3, 5))
        feats = np.round(pooled / (POOL * POOL * 255.0), ENCODE_DECIMALS).reshape(t_total, -1)
        scaled = np.column_stack([rec.joints[:, 0] / 64.0, rec.joints[:, 1] / 64.0, rec.joints[:, 2]])
        x = np.concatenate([feats, scaled], axis=1)
        offsets = np.minimum(np.arange(t_total)[:, None] + np.arange(chunk_len)[None, :], t_total - 1)
        y = rec.actions[offsets].reshape(t_total, chunk_len * 3)
        if deployment_filter and rec.flags.overlay:
            keep = rec.gate_phase == armed_code
            x, y = x[keep], y[keep]
        if len(x):
            xs.append(x)
            ys.append(y)
    if not xs:
        return np.zeros((0, 0)), np.zeros((0, chunk_len * 3))
    return np.concatenate(xs), np.concatenate(ys)


# ---------------------------------------------------------------------------
# Forward / backward


def forward(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    """Action chunk for one observation vector."""
    return forward_batch(params, x[None, :])[0]


def forward_batch(params: PolicyParams, x: np.ndarray) -> np.ndarray:
    h1 = np.tanh(x @ params.enc.w.T + params.enc.b)
    h2 = np.tanh(h1 @ params.head1.w.T + params.head1.b)
    return h2 @ params.head2.w.T + params.head2.b


def mse_on(params: PolicyParams, x: np.ndarray, y: np.ndarray) -> float:
    pred = forward_batch(params, x)
    return float(np.mean((pred - y) ** 2))


def gradients(params: PolicyParams, x: np.ndarray, y: np.ndarray):
    """Hand-derived MSE gradients for one minibatch, in TENSOR_ORDER.
    Frozen layers report exact zeros."""
    batch = x.shape[0]
    h1 = np.tanh(x @ params.enc.w.T + params.enc.b)
    h2 = np.tanh(h1 @ params.head1.w.T + params.head1.b)
    pred = h2 @ params.head2.w.T + params.head2.b

    dy = 2.0 * (pred - y) / (batch * y.shape[1])
    d_head2_w = dy.T @ h2
    d_head2_b = dy.sum(axis=0)
    dh2 = dy @ params.head2.w
    dz2 = dh2 * (1.0 - h2 * h2)
    d_head1_w = dz2.T @ h1
    d_head1_b = dz2.sum(axis=0)
    dh1 = dz2 @ params.head1.w
    dz1 = dh1 * (1.0 - h1 * h1)
    d_enc_w = dz1.T @ x
    d_enc_b = dz1.sum(axis=0)

    grads = {
        "enc.w": d_enc_w,
        "enc.b": d_enc_b,
        "head1.w": d_head1_w,
        "head1.b": d_head1_b,
        "head2.w": d_head2_w,
        "head2.b": d_head2_b,
    }
    for name, layer in (("enc", params.enc), ("head1", params.head1), ("head2", params.head2)):
        if layer.frozen:
            grads[f"{name}.w"] = np.zeros_like(grads[f"{name}.w"])
            grads[f"{name}.b"] = np.zeros_like(grads[f"{name}.b"])
    return grads


def _apply_step(params: PolicyParams, grads: dict, lr: float) -> PolicyParams:
    def upd(name: str, layer: Layer) -> Layer:
        if layer.frozen:
            return layer
        return Layer(
            layer.w - lr * grads[f"{name}.w"],
            layer.b - lr * grads[f"{name}.b"],
            frozen=layer.frozen,
        )

    return replace(params, enc=upd("enc", params.enc), head1=upd("head1", params.head1), head2=upd("head2", params.head2))


def train(params: PolicyParams, x: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig()) -> PolicyParams:
    """Minibatch SGD on mean squared error; returns new parameters."""
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if x.shape[1] != params.input_dim or y.shape[1] != params.chunk_len * 3:
        raise ValueError(f"dataset shapes {x.shape}/{y.shape} do not fit the policy")
    rng = np.random.default_rng(config.seed)
    for _ in range(config.steps):
        idx = rng.integers(0, len(x), config.batch_size)
        grads = gradients(params, x[idx], y[idx])
        params = _apply_step(params, grads, config.learning_rate)
    return params


def grad_check(
    params: PolicyParams,
    x: np.ndarray,
    y: np.ndarray,
    rng,
    coords: int = 50,
    step: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients
    on randomly sampled trainable coordinates."""
    grads = gradients(params, x, y)
    names = [("enc", params.enc), ("head1", params.head1), ("head2", params.head2)]
    flat: list[tuple[str, str, int]] = []
    for name, layer in names:
        if layer.frozen:
            continue
        flat.extend((name, "w", i) for i in range(layer.w.size))
        flat.extend((name, "b", i) for i in range(layer.b.size))
    if not flat:
        raise ValueError("policy has no trainable coordinates")
    picks = rng.choice(len(flat), size=min(coords, len(flat)), replace=False)

    worst = 0.0
    for p in picks:
        name, field, i = flat[int(p)]
        layer = dict(names)[name]
        arr = getattr(layer, field)

        def perturbed(delta):
            bumped = arr.copy().ravel()
            bumped[i] += delta
            new_layer = Layer(
                bumped.reshape(arr.shape) if field == "w" else layer.w,
                bumped if field == "b" else layer.b,
                frozen=layer.frozen,
            )
            return replace(params, **{name: new_layer})

        up = mse_on(perturbed(step), x, y)
        down = mse_on(perturbed(-step), x, y)
        numeric = (up - down) / (2.0 * step)
        analytic = grads[f"{name}.{field}"].ravel()[i]
        err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Serialization


def _tensor_map(params: PolicyParams) -> dict[str, tuple[np.ndarray, bool]]:
    return {
        "enc.w": (params.enc.w, params.enc.frozen),
        "enc.b": (params.enc.b, params.enc.frozen),
        "head1.w": (params.head1.w, params.head1.frozen),
        "head1.b": (params.head1.b, params.head1.frozen),
        "head2.w": (params.head2.w, params.head2.frozen),
        "head2.b": (params.head2.b, params.head2.frozen),
    }


def save_policy(params: PolicyParams, path) -> None:
    """Write the tagged binary policy file (float32 tensors, little endian)."""
    tensors = _tensor_map(params)
    parts = [POLICY_MAGIC, struct.pack("<BBI", params.kind, params.chunk_len, len(TENSOR_ORDER))]
    for name in TENSOR_ORDER:
        arr, frozen = tensors[name]
        encoded = name.encode("ascii")
        parts.append(struct.pack("<B", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BI", 1 if frozen else 0, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_policy(path) -> PolicyParams:
    """Read a policy file back; malformed or truncated input raises ValueError."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ValueError(f"{path}: policy file truncated at byte {pos}")
        chunk = bytes(view[pos : pos + n])
        pos += n
        return chunk

    if take(4) != POLICY_MAGIC:
        raise ValueError(f"{path}: not a policy file")
    kind, chunk_len, count = struct.unpack("<BBI", take(6))
    if kind not in KIND_NAMES:
        raise ValueError(f"{path}: unknown policy kind {kind}")
    if count != len(TENSOR_ORDER):
        raise ValueError(f"{path}: expected {len(TENSOR_ORDER)} tensors, found {count}")
    tensors: dict[str, tuple[np.ndarray, bool]] = {}
    for expected in TENSOR_ORDER:
        (name_len,) = struct.unpack("<B", take(1))
        name = take(name_len).decode("ascii")
        if name != expected:
            raise ValueError(f"{path}: expected tensor {expected!r}, found {name!r}")
        frozen_flag, rank = struct.unpack("<BI", take(5))
        if rank > 2:
            raise ValueError(f"{path}: tensor {name!r} has unsupported rank {rank}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float64)
        tensors[name] = (arr, bool(frozen_flag))
    if pos != len(view):
        raise ValueError(f"{path}: {len(view) - pos} trailing bytes")

    def build(prefix):
        w, fw = tensors[f"{prefix}.w"]
        b, fb = tensors[f"{prefix}.b"]
        if fw != fb:
            raise ValueError(f"{path}: inconsistent frozen flags on {prefix}")
        return Layer(w, b, frozen=fw)

    return PolicyParams(kind=kind, chunk_len=chunk_len, enc=build("enc"), head1=build("head1"), head2=build("head2"))


class ChunkedController:
    """Serves one action per call, querying the policy for a fresh chunk
    only when the buffer is empty. reset() drops buffered actions (used when
    the safety gate disarms)."""

    def __init__(self, params: PolicyParams):
        self.params = params
        self._queue: deque = deque()
        self.queries = 0

    def reset(self) -> None:
        self._queue.clear()

    def act(self, x: np.ndarray) -> np.ndarray:
        if not self._queue:
            chunk = forward(self.params, x).reshape(self.params.chunk_len, 3)
            self._queue.extend(np.array(row) for row in chunk)
            self.queries += 1
        return self._queue.popleft()
