import numpy as np
import pytest

from sevo.illumination import (
    LedSpec,
    Lighting,
    led_contribution,
    red_gain_map,
    specular_anchor,
)


def test_peak_at_source():
    assert led_contribution(LedSpec(power=1.0), 0.0) == (255, 0, 0)


def test_zero_power_dark_everywhere():
    led = LedSpec(power=0.0)
    for d in (0.0, 5.0, 100.0):
        assert led_contribution(led, d) == (0, 0, 0)


def test_half_intensity_at_falloff_scale():
    # 255/2 = 127.5 rounds half away from zero to 128
    led = LedSpec(power=1.0, falloff_scale=10.0)
    assert led_contribution(led, 10.0) == (128, 0, 0)


def test_monotone_falloff():
    rng = np.random.default_rng(21)
    led = LedSpec(power=0.8, falloff_scale=17.0)
    dists = np.sort(rng.uniform(0, 120, 64))
    gains = [led_contribution(led, float(d))[0] for d in dists]
    assert all(a >= b for a, b in zip(gains, gains[1:]))


def test_red_only():
    rng = np.random.default_rng(22)
    for _ in range(20):
        led = LedSpec(power=float(rng.random()), falloff_scale=float(rng.uniform(1, 40)))
        g = led_contribution(led, float(rng.uniform(0, 90)))
        assert g[1] == 0 and g[2] == 0


def test_gain_map_matches_pointwise_gain():
    led = LedSpec(power=1.0, mount="overhead", falloff_scale=24.0)
    gains = red_gain_map(led)
    assert gains.shape == (64, 64)
    lx, ly = led.position
    for (y, x) in [(0, 0), (32, 32), (10, 50)]:
        d = np.hypot(x - lx, y - ly)
        assert gains[y, x] == pytest.approx(255.0 / (1.0 + (d / 24.0) ** 2))


def test_anchor_none_without_led():
    assert specular_anchor(None, (10.0, 10.0)) is None


def test_anchor_peak_intensity_at_source():
    led = LedSpec(power=1.0, mount="arm_base")
    center, radius, intensity = specular_anchor(led, led.position)
    assert intensity == 255
    assert radius == 2
    assert center == (60, 32)


def test_anchor_depends_only_on_led_and_geometry():
    led = LedSpec(power=0.7, falloff_scale=20.0)
    a = specular_anchor(led, (30.0, 40.0))
    b = specular_anchor(led, (30.0, 40.0))
    assert a == b


def test_validation():
    with pytest.raises(ValueError):
        LedSpec(power=-0.1)
    with pytest.raises(ValueError):
        LedSpec(mount="ceiling")
    with pytest.raises(ValueError):
        LedSpec(falloff_scale=0.0)
    with pytest.raises(ValueError):
        Lighting(ambient=(1.2, 0.5, 0.5))
    with pytest.raises(ValueError):
        led_contribution(LedSpec(), -1.0)
