"""Input script builders shared by the sequencer tests and the acceptance run."""

import numpy as np

from ethd_sim.safety import SafetyCause, SafetyMode, SafetyState
from ethd_sim.sequencer import AvatarTimingModel, SequencerInputs

NOMINAL = SafetyState()
HALTED = SafetyState(SafetyMode.HALTED, SafetyCause.HEAD_IN_WORKSPACE)
FAST = AvatarTimingModel(approach_duration_s=0.010, arm_raise_duration_s=0.005)


def nominal_script(halt_at=None, halt_ticks=0):
    """A tick script that satisfies each guard a few ticks after it is reached.

    Inputs are latched on: once the user is at the mark they stay there, and
    so on. ``halt_at`` inserts ``halt_ticks`` Halted ticks at that tick.
    """
    stages = [
        (5, SequencerInputs(user_at_mark=True)),
        (10, SequencerInputs(True, True)),
        (40, SequencerInputs(True, True)),           # avatar timers run out
        (45, SequencerInputs(True, True, True)),     # contact
        (55, SequencerInputs(True, True, True, True)),
    ]
    script = []
    for tick in range(70):
        inputs = SequencerInputs()
        for start, inp in stages:
            if tick >= start:
                inputs = inp
        script.append((inputs, NOMINAL))
    if halt_at is not None:
        held = [(script[halt_at][0], HALTED)] * halt_ticks
        script = script[:halt_at] + held + script[halt_at:]
    return script


def random_script(rng: np.random.Generator, length=300):
    safeties = [NOMINAL, NOMINAL, NOMINAL, HALTED,
                SafetyState(SafetyMode.PASSTHROUGH, SafetyCause.OUTSIDE_SAFE_ZONE),
                SafetyState(SafetyMode.ESTOP, SafetyCause.EMERGENCY_STOP)]
    bits = rng.random((length, 4)) < 0.3
    which = rng.integers(0, len(safeties), length)
    return [(SequencerInputs(*map(bool, b)), safeties[w]) for b, w in zip(bits, which)]


def in_order(visited):
    return all(int(b) == int(a) + 1 for a, b in zip(visited, visited[1:]))
