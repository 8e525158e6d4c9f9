"""Synthetic multichannel EMG with scripted gesture schedules.

Each class has a non-negative activation template over channels. A subject
scales the shared templates by its own gains, so held-out subjects differ
from training subjects. Within a schedule the channel means cross-fade
between templates over a raised-cosine ramp centred on each nominal
transition, and the label switches at the ramp midpoint.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .signal_io import Recording

GESTURE_CODES = {"R": "relax", "O": "open", "C": "close", "I": "wave_in", "W": "wave_out", "P": "pinch"}


class SynthConfigError(ValueError):
    pass


def parse_schedule(codes: str, hold_s: float = 5.0) -> list[tuple[str, float]]:
    """``"ROCORORCR"`` -> [("relax", 5.0), ("open", 5.0), ...]."""
    try:
        return [(GESTURE_CODES[c], float(hold_s)) for c in codes.upper()]
    except KeyError as exc:
        raise SynthConfigError(f"unknown gesture code {exc.args[0]!r}") from None


def _default_schedules():
    return [parse_schedule("ROCORORCR", 5.0)]


@dataclass
class SynthConfig:
    subjects: int = 10
    channels: int = 8
    class_names: tuple[str, ...] = ("relax", "open", "close")
    sample_rate_hz: int = 200
    schedules: list = field(default_factory=_default_schedules)
    ramp: int = 40
    noise_scale: float = 0.05
    subject_gain_sd: float = 0.25
    min_template_distance: float = 0.3
    min_samples: int = 600
    seed: int = 0

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        self.schedules = [[(str(g), float(h)) for g, h in s] for s in self.schedules]
        if self.subjects < 1 or self.channels < 1:
            raise SynthConfigError("subjects and channels must be >= 1")
        if self.ramp < 0 or self.noise_scale < 0:
            raise SynthConfigError("ramp and noise_scale must be non-negative")
        for sched in self.schedules:
            for gesture, hold in sched:
                if gesture not in self.class_names:
                    raise SynthConfigError(f"schedule gesture {gesture!r} not in class table")
                if hold < 1.0:
                    raise SynthConfigError(f"hold of {hold}s for {gesture!r} is shorter than 1 s")
            if schedule_length(sched, self.sample_rate_hz) < self.min_samples:
                raise SynthConfigError("schedule is shorter than one window")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_names"] = list(self.class_names)
        d["schedules"] = [[list(x) for x in s] for s in self.schedules]
        return d


def schedule_length(schedule, fs: int) -> int:
    return sum(int(round(h * fs)) for _, h in schedule)


def class_templates(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Shared (K, C) templates; relax is low activity, others draw random muscle patterns."""
    K, C = len(cfg.class_names), cfg.channels
    for _ in range(1000):
        G = rng.uniform(0.1, 0.7, size=(K, C))
        if "relax" in cfg.class_names:
            G[cfg.class_names.index("relax")] = rng.uniform(0.02, 0.08, size=C)
        dist = np.linalg.norm(G[:, None] - G[None], axis=-1)
        if K == 1 or dist[~np.eye(K, dtype=bool)].min() >= cfg.min_template_distance:
            return G
    raise SynthConfigError("could not draw templates with the requested minimum distance")


def subject_templates(shared: np.ndarray, gain_sd: float, rng: np.random.Generator) -> np.ndarray:
    channel_gain = np.exp(rng.normal(0.0, gain_sd, size=shared.shape[1]))
    jitter = np.exp(rng.normal(0.0, gain_sd / 2, size=shared.shape))
    return shared * channel_gain * jitter


def raised_cosine(n: int, ramp: int, tau: int) -> np.ndarray:
    """0 before tau - ramp/2, 1 after tau + ramp/2, smooth S-curve in between."""
    t = np.arange(n, dtype=np.float64)
    if ramp == 0:
        return (t >= tau).astype(np.float64)
    u = np.clip((t - (tau - ramp / 2)) / ramp, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * u)


def render(schedule, templates, class_names, fs, ramp):
    """Noise-free channel means and labels for one schedule.

    Outside the ramps every sample is its class template exactly; inside a
    ramp the mean blends the two neighbouring templates.
    """
    lengths = [int(round(h * fs)) for _, h in schedule]
    n = sum(lengths)
    idx = [class_names.index(g) for g, _ in schedule]
    labels = np.repeat(idx, lengths)
    mean = templates[labels].copy()
    if ramp > 0:
        taus = np.cumsum(lengths)[:-1]
        for prev, cur, tau in zip(idx[:-1], idx[1:], taus):
            lo, hi = max(0, int(np.floor(tau - ramp / 2))), min(n, int(np.ceil(tau + ramp / 2)) + 1)
            w = raised_cosine(n, ramp, tau)[lo:hi, None]
            mean[lo:hi] = templates[prev] + w * (templates[cur] - templates[prev])
    return mean, labels


def generate(cfg: SynthConfig) -> list[Recording]:
    """One recording per (subject, schedule)."""
    rng = np.random.default_rng(cfg.seed)
    shared = class_templates(cfg, rng)
    recordings = []
    for s in range(cfg.subjects):
        srng = np.random.default_rng([cfg.seed, s + 1])
        templates = subject_templates(shared, cfg.subject_gain_sd, srng)
        for k, sched in enumerate(cfg.schedules):
            mean, labels = render(sched, templates, cfg.class_names, cfg.sample_rate_hz, cfg.ramp)
            noise = srng.normal(0.0, 1.0, size=mean.shape) * cfg.noise_scale * mean
            recordings.append(
                Recording(
                    subject_id=f"s{s:02d}",
                    session_id=f"r{k}",
                    sample_rate_hz=cfg.sample_rate_hz,
                    samples=mean + noise,
                    labels=labels,
                    class_names=cfg.class_names,
                )
            )
    return recordings


def random_schedule(
    rng: np.random.Generator,
    class_names,
    n_segments: int,
    hold_range=(1.5, 4.0),
    rest: str = "relax",
) -> list[tuple[str, float]]:
    """Random gesture sequence without repeats, mixing rest and non-rest transitions."""
    sched = [(rest, round(float(rng.uniform(*hold_range)), 2))]
    for _ in range(n_segments - 1):
        prev = sched[-1][0]
        options = [c for c in class_names if c != prev]
        sched.append((str(rng.choice(options)), round(float(rng.uniform(*hold_range)), 2)))
    return sched
