"""Detection-gated motion: a debounced state machine that enables arm action
only after the target has been detected continuously for the debounce window,
with a small tolerance for single-frame detector dropouts."""

from __future__ import annotations

import math
from dataclasses import dataclass

IDLE = "IDLE"
DEBOUNCING = "DEBOUNCING"
ARMED = "ARMED"
PHASES = (IDLE, DEBOUNCING, ARMED)


@dataclass(frozen=True)
class GateConfig:
    debounce: float = 1.0
    flicker_tolerance: int = 2
    frame_rate: float = 30.0

    def __post_init__(self):
        if self.debounce <= 0:
            raise ValueError(f"debounce must be > 0, got {self.debounce}")
        if self.flicker_tolerance < 0:
            raise ValueError(f"flicker_tolerance must be >= 0, got {self.flicker_tolerance}")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be > 0, got {self.frame_rate}")

    @property
    def threshold(self) -> int:
        """Detection frames required to arm."""
        return math.ceil(self.debounce * self.frame_rate)


@dataclass(frozen=True)
class GateState:
    phase: str = IDLE
    consecutive_present: int = 0
    consecutive_absent: int = 0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.consecutive_present < 0 or self.consecutive_absent < 0:
            raise ValueError("counters must be >= 0")


def gate_step(state: GateState, detected: bool, config: GateConfig = GateConfig()) -> tuple[GateState, bool]:
    """Advance the gate one frame; returns (new state, arm_enabled).

    Transitions: IDLE starts debouncing on detection; absence runs no longer
    than flicker_tolerance pause progress, longer ones reset to IDLE; the gate
    arms once consecutive_present reaches ceil(debounce*frame_rate) and stays
    armed across tolerated dropouts; absence beyond the tolerance while ARMED
    disarms back to DEBOUNCING with zero progress. arm_enabled reflects the
    post-transition phase, so the threshold-reaching frame is already armed.
    """
    threshold = config.threshold
    phase = state.phase
    present = state.consecutive_present
    absent = state.consecutive_absent

    if phase == IDLE:
        if detected:
            present, absent = 1, 0
            phase = ARMED if present >= threshold else DEBOUNCING
    elif phase == DEBOUNCING:
        if detected:
            present += 1
            absent = 0
            if present >= threshold:
                phase = ARMED
        else:
            absent += 1
            if absent > config.flicker_tolerance:
                phase, present, absent = IDLE, 0, 0
    else:  # ARMED
        if detected:
            present += 1
            absent = 0
        else:
            absent += 1
            if absent > config.flicker_tolerance:
                phase, present, absent = DEBOUNCING, 0, 0

    new_state = GateState(phase=phase, consecutive_present=present, consecutive_absent=absent)
    return new_state, new_state.phase == ARMED


def reset(state: GateState) -> GateState:
    """Return the quiescent IDLE state."""
    return GateState()
