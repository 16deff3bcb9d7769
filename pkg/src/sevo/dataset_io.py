"""Episode storage.

An episode directory holds meta.json (identity, protocol flags, scene,
cameras), traj.csv (joints, actions, gate phase per step), and one image
tree per stream: raw/ (noisy camera frames), masks/ (detected target bits),
sevo/ (the frames actually shown to the policy). Images are the portable
binary PPM/PGM formats; floats round-trip exactly through repr.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .illumination import LedSpec, Lighting
from .observation import Frame, SegmentationMask, read_pgm, read_ppm, write_pgm, write_ppm
from .safety_gate import PHASES
from .sim_env import (
    BottleSpec,
    CameraRig,
    CameraSpec,
    FloorTexture,
    ProtocolFlags,
    SceneSpec,
)


@dataclass(frozen=True, eq=False)
class EpisodeRecord:
    """One recorded episode: metadata plus per-step arrays.

    Array shapes: raw and sevo (T, C, H, W, 3) uint8, masks (T, C, H, W)
    uint8 with values in {0, 1}, joints and actions (T, 3) float64,
    gate_phase (T,) uint8 indexing PHASES.
    """

    episode_id: str
    flags: ProtocolFlags
    scene: SceneSpec
    rig: CameraRig
    frame_rate: float
    action_dim: int
    raw: np.ndarray
    masks: np.ndarray
    sevo: np.ndarray
    joints: np.ndarray
    actions: np.ndarray
    gate_phase: np.ndarray

    def __post_init__(self):
        t = len(self.gate_phase)
        if t < 1:
            raise ValueError("episode must have at least one step")
        if self.raw.shape != self.sevo.shape or self.raw.shape[:4] != self.masks.shape:
            raise ValueError("raw, sevo, and masks shapes disagree")
        if self.raw.shape[0] != t or self.raw.ndim != 5 or self.raw.shape[4] != 3:
            raise ValueError(f"bad raw shape {self.raw.shape} for {t} steps")
        if self.joints.shape != (t, 3) or self.actions.shape != (t, self.action_dim):
            raise ValueError("joints/actions shapes disagree with step count")
        if self.raw.shape[1] != len(self.rig.cameras):
            raise ValueError("frame stream count disagrees with the rig")
        if int(self.gate_phase.max(initial=0)) >= len(PHASES):
            raise ValueError("gate_phase holds an unknown phase code")

    @property
    def length(self) -> int:
        return len(self.gate_phase)


def _fmt_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",")) if text else ()


def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def _parse_bool(text: str) -> bool:
    if text not in ("true", "false"):
        raise ValueError(f"expected true/false, got {text!r}")
    return text == "true"


def flags_to_mapping(flags: ProtocolFlags) -> dict:
    return {
        "overlay": _fmt_bool(flags.overlay),
        "red_light": _fmt_bool(flags.red_light),
        "varied_bg": _fmt_bool(flags.varied_bg),
        "null_episodes": _fmt_bool(flags.null_episodes),
        "wrist_camera": _fmt_bool(flags.wrist_camera),
    }


def flags_from_mapping(mapping: dict) -> ProtocolFlags:
    return ProtocolFlags(**{k: _parse_bool(mapping[k]) for k in flags_to_mapping(ProtocolFlags())})


def scene_to_mapping(scene: SceneSpec) -> dict:
    bottle = scene.bottle
    led = scene.lighting.led
    return {
        "floor_tone": ",".join(str(v) for v in scene.floor_tone),
        "texture": f"{scene.texture.kind},{repr(scene.texture.amplitude)},{scene.texture.period},{scene.texture.phase}",
        "clutter": ";".join(
            f"{x},{y},{w},{h},{c[0]},{c[1]},{c[2]}" for (x, y, w, h, c) in scene.clutter
        ),
        "distractors": ";".join(_fmt_floats(d) for d in scene.reflective_distractors),
        "bottle": "none" if bottle is None else _fmt_floats((bottle.x, bottle.y, bottle.translucency, *bottle.tint)),
        "ambient": _fmt_floats(scene.lighting.ambient),
        "led": "none" if led is None else f"{repr(led.power)},{led.mount},{repr(led.falloff_scale)}",
        "rng_seed": str(scene.rng_seed),
    }


def scene_from_mapping(mapping: dict) -> SceneSpec:
    tex = mapping["texture"].split(",")
    texture = FloorTexture(kind=tex[0], amplitude=float(tex[1]), period=int(tex[2]), phase=int(tex[3]))
    clutter = []
    if mapping["clutter"]:
        for item in mapping["clutter"].split(";"):
            x, y, w, h, r, g, b = (int(v) for v in item.split(","))
            clutter.append((x, y, w, h, (r, g, b)))
    distractors = tuple(_parse_floats(d) for d in mapping["distractors"].split(";")) if mapping["distractors"] else ()
    bottle = None
    if mapping["bottle"] != "none":
        bx, by, trans, tr, tg, tb = _parse_floats(mapping["bottle"])
        bottle = BottleSpec(x=bx, y=by, translucency=trans, tint=(tr, tg, tb))
    led = None
    if mapping["led"] != "none":
        power, mount, falloff = mapping["led"].split(",")
        led = LedSpec(power=float(power), mount=mount, falloff_scale=float(falloff))
    return SceneSpec(
        floor_tone=tuple(int(v) for v in mapping["floor_tone"].split(",")),
        texture=texture,
        clutter=tuple(clutter),
        reflective_distractors=distractors,
        bottle=bottle,
        lighting=Lighting(ambient=_parse_floats(mapping["ambient"]), led=led),
        rng_seed=int(mapping["rng_seed"]),
    )


def camera_to_mapping(camera: CameraSpec) -> dict:
    return {
        "kind": camera.kind,
        "crop": ",".join(str(v) for v in camera.crop),
        "flip_h": _fmt_bool(camera.flip_h),
        "flip_v": _fmt_bool(camera.flip_v),
    }


def camera_from_mapping(mapping: dict) -> CameraSpec:
    return CameraSpec(
        kind=mapping["kind"],
        crop=tuple(int(v) for v in mapping["crop"].split(",")),
        flip_h=_parse_bool(mapping["flip_h"]),
        flip_v=_parse_bool(mapping["flip_v"]),
    )


def _image_name(cam: int, t: int, ext: str) -> str:
    return f"cam{cam:02d}_t{t:04d}.{ext}"


def write_episode(record: EpisodeRecord, directory) -> Path:
    """Write one episode into directory (which must not already exist).
    Returns the manifest (meta.json) path."""
    ep_dir = Path(directory)
    ep_dir.mkdir(parents=True, exist_ok=False)

    meta = {
        "id": record.episode_id,
        "steps": record.length,
        "frame_rate": record.frame_rate,
        "action_dim": record.action_dim,
        "flags": flags_to_mapping(record.flags),
        "scene": scene_to_mapping(record.scene),
        "cameras": [camera_to_mapping(c) for c in record.rig.cameras],
    }
    manifest = ep_dir / "meta.json"
    manifest.write_bytes((json.dumps(meta, sort_keys=True, indent=2) + "\n").encode("ascii"))

    rows = ["t,q0,q1,q2,a0,a1,a2,gate_phase"]
    for t in range(record.length):
        joints = ",".join(repr(float(v)) for v in record.joints[t])
        acts = ",".join(repr(float(v)) for v in record.actions[t])
        rows.append(f"{t},{joints},{acts},{PHASES[int(record.gate_phase[t])]}")
    (ep_dir / "traj.csv").write_bytes(("\n".join(rows) + "\n").encode("ascii"))

    for stream in ("frames", "masks", "sevo"):
        (ep_dir / stream).mkdir()
    cams = record.raw.shape[1]
    for t in range(record.length):
        for c in range(cams):
            write_ppm(Frame(record.raw[t, c]), ep_dir / "frames" / _image_name(c, t, "ppm"))
            write_ppm(Frame(record.sevo[t, c]), ep_dir / "sevo" / _image_name(c, t, "ppm"))
            write_pgm(SegmentationMask(record.masks[t, c], 1.0), ep_dir / "masks" / _image_name(c, t, "pgm"))
    return manifest


def read_episode(ep_dir) -> EpisodeRecord:
    """Read one episode directory back; any missing or inconsistent piece
    raises ValueError."""
    ep_dir = Path(ep_dir)
    meta_path = ep_dir / "meta.json"
    if not meta_path.is_file():
        raise ValueError(f"{ep_dir} has no meta.json")
    meta = json.loads(meta_path.read_text())
    length = int(meta["steps"])
    rig = CameraRig(cameras=tuple(camera_from_mapping(m) for m in meta["cameras"]))

    csv_lines = (ep_dir / "traj.csv").read_text().splitlines()
    if len(csv_lines) != length + 1:
        raise ValueError(f"traj.csv has {len(csv_lines) - 1} rows, expected {length}")
    joints = np.zeros((length, 3))
    actions = np.zeros((length, 3))
    phases = np.zeros(length, dtype=np.uint8)
    for idx, line in enumerate(csv_lines[1:]):
        parts = line.split(",")
        if len(parts) != 8 or int(parts[0]) != idx:
            raise ValueError(f"bad traj.csv row {idx}: {line!r}")
        joints[idx] = [float(v) for v in parts[1:4]]
        actions[idx] = [float(v) for v in parts[4:7]]
        if parts[7] not in PHASES:
            raise ValueError(f"unknown gate phase {parts[7]!r}")
        phases[idx] = PHASES.index(parts[7])

    raw_steps, sevo_steps, mask_steps = [], [], []
    cams = len(rig.cameras)
    for t in range(length):
        raw_t, sevo_t, mask_t = [], [], []
        for c in range(cams):
            raw_t.append(read_ppm(ep_dir / "frames" / _image_name(c, t, "ppm")).pixels)
            sevo_t.append(read_ppm(ep_dir / "sevo" / _image_name(c, t, "ppm")).pixels)
            mask_t.append(read_pgm(ep_dir / "masks" / _image_name(c, t, "pgm")).bits)
        raw_steps.append(np.stack(raw_t))
        sevo_steps.append(np.stack(sevo_t))
        mask_steps.append(np.stack(mask_t))

    return EpisodeRecord(
        episode_id=str(meta["id"]),
        flags=flags_from_mapping(meta["flags"]),
        scene=scene_from_mapping(meta["scene"]),
        rig=rig,
        frame_rate=float(meta["frame_rate"]),
        action_dim=int(meta["action_dim"]),
        raw=np.stack(raw_steps),
        masks=np.stack(mask_steps),
        sevo=np.stack(sevo_steps),
        joints=joints,
        actions=actions,
        gate_phase=phases,
    )


def list_episodes(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if (p / "meta.json").is_file())


def records_equal(a: EpisodeRecord, b: EpisodeRecord) -> bool:
    """Exact equality of metadata and every array."""
    meta_same = (
        a.episode_id == b.episode_id
        and a.flags == b.flags
        and scene_to_mapping(a.scene) == scene_to_mapping(b.scene)
        and a.rig == b.rig
        and a.frame_rate == b.frame_rate
        and a.action_dim == b.action_dim
    )
    if not meta_same:
        return False
    return all(
        np.array_equal(getattr(a, name), getattr(b, name))
        for name in ("raw", "masks", "sevo", "joints", "actions", "gate_phase")
    )
