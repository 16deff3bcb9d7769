"""Red-LED lighting model: spectral red-channel gain with distance falloff
and the specular highlight it anchors on the bottle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

MOUNTS = ("arm_base", "overhead")

# world coordinates of the two supported mounts (64x64-unit workspace)
LED_POSITIONS = {
    "arm_base": (60.0, 32.0),
    "overhead": (32.0, 32.0),
}

ANCHOR_RADIUS_PX = 2


@dataclass(frozen=True)
class LedSpec:
    """power 1.0 is full intensity; falloff_scale is in world units."""

    power: float = 1.0
    mount: str = "arm_base"
    falloff_scale: float = 24.0

    def __post_init__(self):
        if self.power < 0:
            raise ValueError(f"power must be >= 0, got {self.power}")
        if self.mount not in MOUNTS:
            raise ValueError(f"mount must be one of {MOUNTS}, got {self.mount!r}")
        if self.falloff_scale <= 0:
            raise ValueError(f"falloff_scale must be > 0, got {self.falloff_scale}")

    @property
    def position(self) -> tuple[float, float]:
        return LED_POSITIONS[self.mount]


@dataclass(frozen=True)
class Lighting:
    ambient: tuple[float, float, float] = (1.0, 1.0, 1.0)
    led: Optional[LedSpec] = None

    def __post_init__(self):
        if len(self.ambient) != 3 or not all(0.0 <= g <= 1.0 for g in self.ambient):
            raise ValueError(f"ambient gains must be three values in [0, 1], got {self.ambient}")


def _gain(led: LedSpec, distance: float) -> float:
    return 255.0 * led.power / (1.0 + (distance / led.falloff_scale) ** 2)


def led_contribution(led: LedSpec, distance: float) -> tuple[int, int, int]:
    """Red-only additive contribution at a given distance, 8-bit scale.

    Rounds half away from zero and clamps at 255; monotone nonincreasing
    in distance.
    """
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    g = math.floor(_gain(led, distance) + 0.5)
    return (int(min(255, g)), 0, 0)


def red_gain_map(led: LedSpec, shape: tuple[int, int] = (64, 64)) -> np.ndarray:
    """Unrounded per-pixel red gain over the world grid (quantized later,
    when the frame is assembled)."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    lx, ly = led.position
    dist = np.hypot(xs - lx, ys - ly)
    return 255.0 * led.power / (1.0 + (dist / led.falloff_scale) ** 2)


def specular_anchor(led: Optional[LedSpec], bottle_pose: tuple[float, float], camera=None):
    """Highlight disc the LED paints on the bottle: (center, radius_px, intensity).

    Independent of ambient light by construction. center is in view pixels
    when a camera transform is supplied, world coordinates otherwise. Returns
    None when no LED is present.
    """
    if led is None:
        return None
    lx, ly = led.position
    distance = math.hypot(bottle_pose[0] - lx, bottle_pose[1] - ly)
    intensity = led_contribution(led, distance)[0]
    if camera is not None:
        center = camera.world_to_view(bottle_pose)
    else:
        center = (int(math.floor(bottle_pose[0] + 0.5)), int(math.floor(bottle_pose[1] + 0.5)))
    return center, ANCHOR_RADIUS_PX, intensity
