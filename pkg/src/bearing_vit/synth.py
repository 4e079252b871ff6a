"""Synthetic bearing vibration: damped-resonance impulse trains plus Gaussian noise.

Each fault impact excites a structural resonance that rings down
exponentially.  Impacts repeat at the characteristic fault frequency with
optional multiplicative slip jitter, shaft-rate amplitude modulation (inner
race) and alternating amplitudes (ball).

Randomness comes from numpy's PCG64 bit generator seeded per call.  Gaussian
variates are produced with the Box-Muller transform from PCG64 uniforms:
``z0 = sqrt(-2 ln u1) cos(2 pi u2)``, ``z1 = sqrt(-2 ln u1) sin(2 pi u2)``
with ``u1`` in (0, 1].  The jitter and noise draws use two independent
child streams of ``SeedSequence(seed)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernels
from .errors import InvalidSpec
from .signal_io import Channel, FaultLabel, Segment, Signal, segment_signal

# Ring-down is truncated once exp(-decay * dt) < exp(-RINGDOWN_SPAN).
RINGDOWN_SPAN = 40.0


class FaultKind(str, enum.Enum):
    NORMAL = "Normal"
    INNER_RACE = "InnerRace"
    OUTER_RACE = "OuterRace"
    BALL = "Ball"


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    impact_rate: float = 0.0
    resonance_freq: float = 3000.0
    decay: float = 800.0
    impact_amp: float = 1.0
    slip_jitter: float = 0.0
    noise_std: float = 0.1
    modulation: float | None = None
    shaft_rate: float = 29.95
    # amplitude factor applied to every second impact
    alternation: float = 1.0

    def validate(self, sample_rate: float) -> None:
        problems = []
        if not self.impact_rate >= 0:
            problems.append("impact_rate must be >= 0")
        if not 0 <= self.resonance_freq < sample_rate / 2:
            problems.append("resonance_freq must lie in [0, sample_rate/2)")
        if not self.noise_std >= 0:
            problems.append("noise_std must be >= 0")
        if not 0 <= self.slip_jitter <= 0.2:
            problems.append("slip_jitter must lie in [0, 0.2]")
        if not self.decay >= 0:
            problems.append("decay must be >= 0")
        if self.modulation is not None and not 0 <= self.modulation <= 1:
            problems.append("modulation must lie in [0, 1]")
        if not self.shaft_rate >= 0:
            problems.append("shaft_rate must be >= 0")
        if problems:
            raise InvalidSpec("; ".join(problems))


def box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normal variates from ``rng`` uniforms via Box-Muller."""
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return np.concatenate((radius * np.cos(angle), radius * np.sin(angle)))[:n]


def impact_times(spec: FaultSpec, duration: float, rng: np.random.Generator) -> np.ndarray:
    if spec.impact_rate <= 0:
        return np.zeros(0)
    period = 1.0 / spec.impact_rate
    count = int(math.ceil(duration * spec.impact_rate * 1.5)) + 2
    factors = np.ones(count)
    if spec.slip_jitter > 0:
        factors = np.clip(1.0 + spec.slip_jitter * box_muller(rng, count), 0.1, None)
    times = period * np.concatenate(([0.0], np.cumsum(factors[:-1])))
    return times[times < duration]


def generate_signal(
    spec: FaultSpec,
    duration: float,
    sample_rate: float,
    seed: int,
    *,
    source_id: str | None = None,
) -> Signal:
    if not duration > 0:
        raise InvalidSpec("duration must be > 0")
    if not sample_rate > 0:
        raise InvalidSpec("sample_rate must be > 0")
    spec.validate(sample_rate)
    n = int(round(duration * sample_rate))
    if n < 1:
        raise InvalidSpec("duration shorter than one sample")
    jitter_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    t = np.arange(n) / sample_rate

    if spec.kind is FaultKind.NORMAL:
        x = spec.impact_amp * np.sin(2.0 * np.pi * spec.shaft_rate * t)
    else:
        times = impact_times(spec, duration, np.random.default_rng(jitter_ss))
        amps = np.full(times.shape, float(spec.impact_amp))
        if spec.modulation:
            amps *= 1.0 + spec.modulation * np.cos(2.0 * np.pi * spec.shaft_rate * times)
        amps[1::2] *= spec.alternation
        window = n if spec.decay == 0 else int(math.ceil(RINGDOWN_SPAN / spec.decay * sample_rate)) + 1
        x = kernels.impulse_train(
            n, times, amps, sample_rate, spec.decay, spec.resonance_freq, window
        )
    if spec.noise_std > 0:
        x = x + spec.noise_std * box_muller(np.random.default_rng(noise_ss), n)
    return Signal(
        samples=x,
        sample_rate=float(sample_rate),
        source_id=source_id or f"synth-{spec.kind.value}-{seed}",
        channel=Channel.DRIVE_END,
    )


# Proportioned like CWRU characteristic frequencies at ~1797 rpm.
DEFAULT_SUITE: tuple[tuple[str, FaultSpec], ...] = (
    ("N", FaultSpec(FaultKind.NORMAL, impact_amp=0.1, noise_std=0.1)),
    (
        "7_IR",
        FaultSpec(
            FaultKind.INNER_RACE, impact_rate=162.0, resonance_freq=2600.0, decay=900.0,
            impact_amp=1.0, slip_jitter=0.02, noise_std=0.1, modulation=0.6,
        ),
    ),
    (
        "7_OR1",
        FaultSpec(
            FaultKind.OUTER_RACE, impact_rate=107.0, resonance_freq=3600.0, decay=700.0,
            impact_amp=1.0, slip_jitter=0.02, noise_std=0.1,
        ),
    ),
    (
        "7_BA",
        FaultSpec(
            FaultKind.BALL, impact_rate=141.0, resonance_freq=4400.0, decay=1100.0,
            impact_amp=0.8, slip_jitter=0.02, noise_std=0.1, alternation=0.5,
        ),
    ),
)


def default_suite(n_classes: int = 4) -> dict[FaultLabel, FaultSpec]:
    if not 2 <= n_classes <= len(DEFAULT_SUITE):
        raise InvalidSpec(f"default suite offers 2..{len(DEFAULT_SUITE)} classes, asked {n_classes}")
    return {FaultLabel.from_name(name): spec for name, spec in DEFAULT_SUITE[:n_classes]}


def class_seed(seed: int, class_id: int) -> int:
    return int(np.random.SeedSequence([seed, class_id]).generate_state(1)[0])


def generate_class_signals(
    specs: Mapping[FaultLabel, FaultSpec],
    segments_per_class: int,
    segment_len: int,
    sample_rate: float,
    seed: int,
) -> dict[FaultLabel, Signal]:
    """One independent signal per class, exactly long enough for the requested segments."""
    if len(specs) < 2:
        raise InvalidSpec("need at least 2 classes")
    if segments_per_class < 1 or segment_len < 1:
        raise InvalidSpec("segments_per_class and segment_len must be >= 1")
    duration = segments_per_class * segment_len / sample_rate
    return {
        label: generate_signal(
            spec,
            duration,
            sample_rate,
            class_seed(seed, label.class_id),
            source_id=f"{label.name}.f64",
        )
        for label, spec in specs.items()
    }


def generate_dataset(
    specs: Mapping[FaultLabel, FaultSpec],
    segments_per_class: int,
    segment_len: int,
    sample_rate: float,
    seed: int,
) -> list[Segment]:
    signals = generate_class_signals(specs, segments_per_class, segment_len, sample_rate, seed)
    segments: list[Segment] = []
    for label, sig in signals.items():
        segments.extend(segment_signal(sig, segment_len, segment_len, label)[:segments_per_class])
    return segments
