"""Frozen reference implementations used by unit and acceptance tests.

These are deliberately written as plain scalar Python, independent of the
library's vectorized code paths, so agreement is meaningful.
"""

import math


def overlay_reference(pixels, bits, alpha, color):
    """Per-pixel scalar overlay blend.

    pixels: nested list [h][w][3] of ints, bits: [h][w] of 0/1.
    Returns nested list of blended ints.
    """
    out = []
    for y in range(len(pixels)):
        row = []
        for x in range(len(pixels[y])):
            if bits[y][x]:
                px = []
                for ch in range(3):
                    p = float(pixels[y][x][ch])
                    c = float(color[ch])
                    v = (1.0 - alpha) * p + alpha * c
                    v = math.floor(v + 0.5)
                    px.append(int(min(255.0, max(0.0, v))))
                row.append(px)
            else:
                row.append([int(v) for v in pixels[y][x]])
        out.append(row)
    return out


def gate_reference(stream, debounce, flicker_tolerance, frame_rate):
    """Step-by-step gate interpreter.

    Returns a list of (phase, arm_enabled) per input frame. Semantics:
    detection must persist for ceil(debounce*frame_rate) frames, where runs
    of absence no longer than flicker_tolerance pause (but keep) progress;
    longer absence resets to IDLE, or knocks ARMED back to DEBOUNCING with
    zero progress.
    """
    threshold = math.ceil(debounce * frame_rate)
    phase = "IDLE"
    present = 0
    absent = 0
    out = []
    for detected in stream:
        if phase == "IDLE":
            if detected:
                present = 1
                absent = 0
                phase = "ARMED" if present >= threshold else "DEBOUNCING"
        elif phase == "DEBOUNCING":
            if detected:
                present += 1
                absent = 0
                if present >= threshold:
                    phase = "ARMED"
            else:
                absent += 1
                if absent > flicker_tolerance:
                    phase = "IDLE"
                    present = 0
                    absent = 0
        else:  # ARMED
            if detected:
                present += 1
                absent = 0
            else:
                absent += 1
                if absent > flicker_tolerance:
                    phase = "DEBOUNCING"
                    present = 0
                    absent = 0
        out.append((phase, phase == "ARMED"))
    return out
