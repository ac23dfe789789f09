"""Synthetic single-foot IMU gait generator with exact phase labels.

The waveforms are stand-ins, not biomechanical models.  Each cycle is a
stance phase (accelerometer near 1 g, an impact transient at foot contact,
quiet gyroscope) then a swing phase (half-sine gyroscope
excursion about the medio-lateral axis plus a forward/vertical acceleration
bump).  Rear-foot strikes produce a sharper, larger impact than fore-foot
strikes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datapipe import ACCEL_RANGE_G, GYRO_RANGE_DPS, STANCE, SWING, ImuRecording, PhaseEventList

RATE_HZ = 1000.0
SPEEDS_KMH = (5, 7, 9, 11, 13, 17, 19)
STRIKES = ("FFS", "RFS")
SUBJECTS = ("S1", "S2", "S3")
DEFAULT_CORPUS_S = 1593.0

# speed -> (cycle_s, stance_fraction)
_TIMING = {
    ("walking", 5): (1.05, 0.62),
    ("walking", 7): (0.95, 0.58),
    ("running", 9): (0.78, 0.42),
    ("running", 11): (0.74, 0.39),
    ("running", 13): (0.70, 0.37),
    ("running", 17): (0.64, 0.34),
    ("running", 19): (0.62, 0.33),
}

JITTER = 0.03
ACCEL_NOISE_G = 0.05
GYRO_NOISE_DPS = 10.0
GYRO_PER_ACCEL_NOISE = GYRO_NOISE_DPS / ACCEL_NOISE_G


def activity_for(speed_kmh: float) -> str:
    return "walking" if speed_kmh <= 7 else "running"


def profile_timing(speed_kmh: float, activity: str | None = None) -> tuple[float, float]:
    activity = activity or activity_for(speed_kmh)
    key = (activity, int(speed_kmh)) if float(speed_kmh).is_integer() else None
    if key not in _TIMING:
        raise ValueError(f"no timing for {activity} at {speed_kmh} km/h; speeds are {SPEEDS_KMH}")
    return _TIMING[key]


@dataclass
class GaitProfile:
    speed_kmh: float = 5
    strike: str = "RFS"
    subject_id: str = "S1"
    activity: str = ""
    stance_fraction: float = 0.0
    cycle_s: float = 0.0
    noise_std: float = ACCEL_NOISE_G  # g; gyro noise scales to 10 deg/s at the default
    amplitude: float = 1.0
    timing: float = 1.0

    def __post_init__(self):
        if self.strike not in STRIKES:
            raise ValueError(f"strike must be one of {STRIKES}, got {self.strike!r}")
        self.activity = self.activity or activity_for(self.speed_kmh)
        cycle, frac = profile_timing(self.speed_kmh, self.activity)
        self.cycle_s = self.cycle_s or cycle * self.timing
        self.stance_fraction = self.stance_fraction or frac


def phase_events(profile: GaitProfile, duration_s: float, rng: np.random.Generator) -> PhaseEventList:
    """Alternating stance/swing onsets with durations jittered by +-3%.

    The recording starts at a uniformly random point of the first cycle, so
    the first event (at t=0) may be either phase.
    """
    stance = profile.cycle_s * profile.stance_fraction
    swing = profile.cycle_s - stance
    durations = (stance, swing)
    offset = rng.uniform(0.0, profile.cycle_s)
    phase = STANCE if offset < stance else SWING
    first = (stance - offset) if phase == STANCE else (profile.cycle_s - offset)
    times, phases = [0.0], [phase]
    t = first * (1 + rng.uniform(-JITTER, JITTER))
    while t < duration_s:
        phase = 1 - phase
        times.append(t)
        phases.append(phase)
        t += durations[phase] * (1 + rng.uniform(-JITTER, JITTER))
    # microsecond onsets survive the label-file text round trip
    times = np.round(times, 6)
    if len(times) > 1 and times[1] <= 0.0:
        times, phases = times[1:], phases[1:]
    return PhaseEventList(times, phases)


def _render(profile: GaitProfile, events: PhaseEventList, n: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / RATE_HZ
    k = np.searchsorted(events.times, t, side="right") - 1
    bounds = np.concatenate([events.times, [max(n / RATE_HZ, events.times[-1] + 1e-3)]])
    tau = t - bounds[k]
    dur = bounds[k + 1] - bounds[k]
    stance = events.phases[k] == STANCE
    swing = ~stance

    speed = profile.speed_kmh
    amp = profile.amplitude
    rfs = profile.strike == "RFS"
    impact_g = (3.0 + 0.35 * speed) * (1.6 if rfs else 1.0) * amp
    impact_tau = 0.010 if rfs else 0.018
    impact_hz = 45.0 if rfs else 30.0
    gyro_peak = (250.0 + 28.0 * speed) * amp

    out = np.zeros((n, 6))
    out[:, 2] = 1.0  # gravity on the vertical axis
    half = np.sin(np.pi * tau / dur)
    full = np.sin(2 * np.pi * tau / dur)

    env = np.where(stance, np.exp(-tau / impact_tau), 0.0)
    out[:, 2] += impact_g * env * np.cos(2 * np.pi * impact_hz * tau)
    out[:, 0] += -0.4 * impact_g * env * np.sin(2 * np.pi * impact_hz * tau)
    # slow roll-over during ground contact
    out[:, 4] += np.where(stance, (-0.04 if rfs else 0.03) * gyro_peak * half, 0.0)
    out[:, 0] += np.where(stance, 0.15 * amp * half, 0.0)

    out[:, 4] += np.where(swing, gyro_peak * half, 0.0)
    out[:, 3] += np.where(swing, 0.12 * gyro_peak * full, 0.0)
    out[:, 0] += np.where(swing, (0.8 + 0.12 * speed) * amp * full + 1.5 * amp * np.exp(-tau / 0.03), 0.0)
    out[:, 2] += np.where(swing, (0.5 + 0.08 * speed) * amp * half, 0.0)

    out[:, :3] += rng.normal(0.0, profile.noise_std, size=(n, 3))
    out[:, 3:] += rng.normal(0.0, profile.noise_std * GYRO_PER_ACCEL_NOISE, size=(n, 3))
    np.clip(out[:, :3], -ACCEL_RANGE_G, ACCEL_RANGE_G, out=out[:, :3])
    np.clip(out[:, 3:], -GYRO_RANGE_DPS, GYRO_RANGE_DPS, out=out[:, 3:])
    return out


def synth_recording(profile: GaitProfile, duration_s: float, seed: int = 0) -> tuple[ImuRecording, PhaseEventList]:
    """One 1000 Hz recording and its exact phase onsets."""
    if duration_s <= profile.cycle_s:
        raise ValueError(f"duration {duration_s}s must exceed one gait cycle ({profile.cycle_s}s)")
    rng = np.random.default_rng(seed)
    events = phase_events(profile, duration_s, rng)
    n = int(round(duration_s * RATE_HZ))
    samples = _render(profile, events, n, rng)
    rec = ImuRecording(
        samples=samples, rate_hz=RATE_HZ, subject_id=profile.subject_id, activity=profile.activity,
        speed_kmh=profile.speed_kmh, strike=profile.strike,
    )
    return rec, events


def synth_dataset(subjects: int = 3, duration_s: float | None = None, seed: int = 0,
                  speeds=SPEEDS_KMH, strikes=STRIKES) -> list[tuple[ImuRecording, PhaseEventList]]:
    """One recording per subject x speed x strike.

    ``duration_s`` is per recording; the default spreads a 1593 s
    corpus evenly over all conditions.  Each subject gets its own
    amplitude and cadence multipliers.
    """
    n_cond = subjects * len(speeds) * len(strikes)
    if duration_s is None:
        duration_s = DEFAULT_CORPUS_S / n_cond
    root = np.random.SeedSequence(seed)
    subj_seqs = root.spawn(subjects)
    out = []
    for s, sseq in enumerate(subj_seqs):
        sid = f"S{s + 1}"
        srng = np.random.default_rng(sseq)
        amplitude = float(srng.uniform(0.85, 1.15))
        timing = float(srng.uniform(0.95, 1.05))
        cond_seqs = sseq.spawn(len(speeds) * len(strikes))
        i = 0
        for speed in speeds:
            for strike in strikes:
                profile = GaitProfile(speed, strike, sid, amplitude=amplitude, timing=timing)
                rec_seed = int(cond_seqs[i].generate_state(1)[0])
                out.append(synth_recording(profile, duration_s, rec_seed))
                i += 1
    return out
