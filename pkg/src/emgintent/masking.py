"""Mask generation for the four masked-reconstruction training tasks.

Mask sets are boolean arrays: ``emg_mask`` is (T, C) and always
channel-aligned, ``intent_mask`` is (T,). Every (epoch, window, task) triple
gets its own RNG sub-stream, so masks are re-drawn each epoch yet reproducible
bit for bit from the seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class MaskConfigError(ValueError):
    pass


class Task(enum.IntEnum):
    ACTION_RECON = 0
    EMG_RECON = 1
    JOINT_RECON = 2
    SELF_SUPERVISED_EMG = 3


SUPERVISED_TASKS = (Task.ACTION_RECON, Task.EMG_RECON, Task.JOINT_RECON)


class MaskType(enum.IntEnum):
    SPAN = 0
    END = 1
    TRANSITION = 2


def _default_mix():
    return {
        Task.ACTION_RECON: (0.5, 0.25, 0.25),
        Task.EMG_RECON: (2 / 3, 1 / 3, 0.0),
        Task.JOINT_RECON: (2 / 3, 1 / 3, 0.0),
        Task.SELF_SUPERVISED_EMG: (1.0, 0.0, 0.0),
    }


def _default_p_range():
    return {t: (0.15, 0.5) for t in MaskType}


@dataclass
class MaskConfig:
    """Masking hyperparameters.

    ``mix[task]`` gives (pi_span, pi_end, pi_transition); ``p_range[type]``
    bounds the masked proportion for each mask type.
    """

    lambda_span: float = 7.0
    mix: dict = field(default_factory=_default_mix)
    p_range: dict = field(default_factory=_default_p_range)
    transition_buffer_radius: int = 50
    rng_seed: int = 42

    def __post_init__(self):
        # partial dicts override the defaults entry by entry
        self.mix = {**_default_mix(), **{Task(k): tuple(map(float, v)) for k, v in self.mix.items()}}
        self.p_range = {
            **_default_p_range(),
            **{MaskType(k): tuple(map(float, v)) for k, v in self.p_range.items()},
        }
        self.validate()

    def validate(self) -> None:
        if self.lambda_span <= 0:
            raise MaskConfigError("lambda_span must be positive")
        if self.transition_buffer_radius < 0:
            raise MaskConfigError("transition_buffer_radius must be >= 0")
        for task in Task:
            if task not in self.mix:
                raise MaskConfigError(f"no mask mixture for task {task.name}")
            mix = self.mix[task]
            if len(mix) != 3 or any(p < 0 for p in mix) or not math.isclose(sum(mix), 1.0):
                raise MaskConfigError(
                    f"mixture for {task.name} must be 3 non-negative weights summing to 1, got {mix}"
                )
            if task != Task.ACTION_RECON and mix[MaskType.TRANSITION] > 0:
                raise MaskConfigError("transition masking applies only to ACTION_RECON")
        if self.mix[Task.SELF_SUPERVISED_EMG][MaskType.SPAN] != 1.0:
            raise MaskConfigError("SELF_SUPERVISED_EMG uses span masking only")
        for mtype in MaskType:
            lo, hi = self.p_range[mtype]
            if not 0.0 <= lo <= hi <= 1.0:
                raise MaskConfigError(f"p_range for {mtype.name} must satisfy 0<=p_min<=p_max<=1")

    def to_dict(self) -> dict:
        return {
            "lambda_span": self.lambda_span,
            "mix": {t.name: list(v) for t, v in self.mix.items()},
            "p_range": {m.name: list(v) for m, v in self.p_range.items()},
            "transition_buffer_radius": self.transition_buffer_radius,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskConfig":
        d = dict(d)
        if "mix" in d:
            d["mix"] = {Task[k]: v for k, v in d["mix"].items()}
        if "p_range" in d:
            d["p_range"] = {MaskType[k]: v for k, v in d["p_range"].items()}
        return cls(**d)


@dataclass(frozen=True, eq=False)
class MaskedExample:
    """One training window with its mask sets.

    ``labels`` is None for unlabeled windows, which only take part in the
    self-supervised EMG task.
    """

    emg: np.ndarray
    labels: np.ndarray | None
    emg_mask: np.ndarray
    intent_mask: np.ndarray
    task: Task
    mask_type: MaskType
    block_emg_to_intent: bool = False
    window_id: int = -1

    @property
    def window_len(self) -> int:
        return self.emg.shape[0]


def example_rng(seed: int, epoch: int, window_id: int, task: int) -> np.random.Generator:
    """Independent sub-stream for one (epoch, window, task) triple."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch + 1, window_id, int(task)]))


def mask_count(p: float, T: int) -> int:
    return int(math.floor(p * T))


def draw_span_length(lam: float, rng: np.random.Generator) -> int:
    """Poisson span length, re-drawn until non-zero (before clamping)."""
    while True:
        length = int(rng.poisson(lam))
        if length > 0:
            return length


def span_mask(T: int, n_target: int, lam: float, rng: np.random.Generator) -> np.ndarray:
    """Union of Poisson-length spans at uniform starts until >= n_target covered."""
    mask = np.zeros(T, dtype=bool)
    n_target = min(n_target, T)
    covered = 0
    while covered < n_target:
        length = min(draw_span_length(lam, rng), T)
        start = int(rng.integers(0, T - length + 1))
        mask[start : start + length] = True
        covered = int(mask.sum())
    return mask


def end_mask(T: int, n: int) -> np.ndarray:
    mask = np.zeros(T, dtype=bool)
    if n > 0:
        mask[T - min(n, T) :] = True
    return mask


def change_points(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1


def transition_mask(labels: np.ndarray, radius: int) -> np.ndarray:
    T = len(labels)
    mask = np.zeros(T, dtype=bool)
    for tau in change_points(labels):
        mask[max(0, tau - radius) : min(T, tau + radius + 1)] = True
    return mask


def _draw_p(cfg: MaskConfig, mtype: MaskType, rng: np.random.Generator) -> float:
    lo, hi = cfg.p_range[mtype]
    return float(rng.uniform(lo, hi)) if hi > lo else lo


def sample_span_mask(T: int, cfg: MaskConfig, rng: np.random.Generator) -> np.ndarray:
    p = _draw_p(cfg, MaskType.SPAN, rng)
    return span_mask(T, mask_count(p, T), cfg.lambda_span, rng)


def sample_end_mask(T: int, cfg: MaskConfig, rng: np.random.Generator) -> np.ndarray:
    p = _draw_p(cfg, MaskType.END, rng)
    return end_mask(T, mask_count(p, T))


def sample_transition_mask(labels: np.ndarray, cfg: MaskConfig, rng=None) -> np.ndarray:
    """Intent mask around every label change; empty when the window has none."""
    return transition_mask(labels, cfg.transition_buffer_radius)


def _sample_time_mask(task, labels, T, cfg, rng):
    mix = cfg.mix[task]
    mtype = MaskType(int(rng.choice(3, p=np.asarray(mix) / sum(mix))))
    if mtype == MaskType.TRANSITION:
        mask = sample_transition_mask(labels, cfg, rng)
        if not mask.any():
            mtype = MaskType.SPAN
    if mtype == MaskType.SPAN:
        mask = sample_span_mask(T, cfg, rng)
    elif mtype == MaskType.END:
        mask = sample_end_mask(T, cfg, rng)
    if not mask.any():
        # the task definitions require a non-empty mask set
        mask = span_mask(T, 1, cfg.lambda_span, rng)
    return mtype, mask


def make_masked_example(
    emg: np.ndarray,
    labels: np.ndarray | None,
    task: Task,
    cfg: MaskConfig,
    rng: np.random.Generator,
    window_id: int = -1,
) -> MaskedExample:
    task = Task(task)
    emg = np.asarray(emg)
    T, C = emg.shape
    if labels is None and task != Task.SELF_SUPERVISED_EMG:
        raise MaskConfigError(f"task {task.name} needs intent labels")

    if task == Task.SELF_SUPERVISED_EMG:
        mtype, time_mask = MaskType.SPAN, sample_span_mask(T, cfg, rng)
        if not time_mask.any():
            time_mask = span_mask(T, 1, cfg.lambda_span, rng)
        emg_mask = np.repeat(time_mask[:, None], C, axis=1)
        intent_mask = np.ones(T, dtype=bool)
        return MaskedExample(emg, labels, emg_mask, intent_mask, task, mtype, True, window_id)

    mtype, time_mask = _sample_time_mask(task, labels, T, cfg, rng)
    no_time = np.zeros(T, dtype=bool)
    emg_time = time_mask if task in (Task.EMG_RECON, Task.JOINT_RECON) else no_time
    intent_mask = time_mask if task in (Task.ACTION_RECON, Task.JOINT_RECON) else no_time
    emg_mask = np.repeat(emg_time[:, None], C, axis=1)
    return MaskedExample(emg, labels, emg_mask, intent_mask.copy(), task, mtype, False, window_id)


def inference_example(emg: np.ndarray) -> MaskedExample:
    """All intent tokens masked, EMG fully visible."""
    T, C = np.shape(emg)
    return MaskedExample(
        np.asarray(emg),
        None,
        np.zeros((T, C), dtype=bool),
        np.ones(T, dtype=bool),
        Task.ACTION_RECON,
        MaskType.SPAN,
    )
