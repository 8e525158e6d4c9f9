"""Online replay with bounded look-ahead and label hold.

To decide the label at timestep ``t`` the engine runs every window whose last
sample lies in ``[t, t + lookahead]`` (spaced ``inference_stride`` apart),
takes each window's logits at absolute timestep ``t``, averages them and
emits the argmax. The label is then held for ``hold`` samples and the next
decision happens at ``t + hold``. Samples are pushed into a
:class:`StreamBuffer` in arrival order, and a decision only runs once
``t + lookahead`` has arrived (or the stream has ended).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

UNDEFINED = -1
PREDICTION_FORMAT = "emgintent-predictions/1"


class StreamConfigError(ValueError):
    pass


class CausalityViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class StreamConfig:
    window_len: int = 600
    lookahead: int = 50
    hold: int = 20
    inference_stride: int = 10
    sample_rate_hz: int = 200

    def __post_init__(self):
        if self.lookahead < 0 or self.hold < 1 or self.inference_stride < 1 or self.window_len < 1:
            raise StreamConfigError("need lookahead >= 0, hold >= 1, stride >= 1, window_len >= 1")
        if self.lookahead >= self.window_len:
            # a window ending at t + lookahead must still contain t
            raise StreamConfigError(f"lookahead {self.lookahead} must be < window_len {self.window_len}")

    @property
    def update_rate_hz(self) -> float:
        return self.sample_rate_hz / self.hold

    @property
    def latency_bound_s(self) -> float:
        return (self.lookahead + self.hold) / self.sample_rate_hz

    def to_dict(self) -> dict:
        return asdict(self)


class StreamBuffer:
    """Append-only sample store that refuses reads past what has arrived.

    ``max_read`` is the highest sample index touched since the last
    :meth:`reset_audit`, which is how causality is audited.
    """

    def __init__(self, channels: int, capacity: int, dtype=np.float64):
        self._data = np.empty((capacity, channels), dtype=dtype)
        self.arrived = 0
        self.max_read = -1

    def push(self, samples: np.ndarray) -> None:
        n = len(samples)
        self._data[self.arrived : self.arrived + n] = samples
        self.arrived += n

    def window(self, end: int, length: int) -> np.ndarray:
        """Samples ``(end - length, end]``."""
        if end >= self.arrived:
            raise CausalityViolation(f"read of sample {end} before arrival ({self.arrived} arrived)")
        if end - length + 1 < 0:
            raise ValueError("window starts before the stream")
        self.max_read = max(self.max_read, end)
        return self._data[end - length + 1 : end + 1]

    def reset_audit(self) -> None:
        self.max_read = -1


@dataclass
class PredictionStream:
    labels: np.ndarray
    decision_times: np.ndarray
    config: StreamConfig
    warmup_end: int
    logits: np.ndarray | None = None
    max_read: np.ndarray | None = None
    arrived: np.ndarray | None = None
    timing: np.ndarray | None = None
    class_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def defined(self) -> np.ndarray:
        return self.labels != UNDEFINED


def participating_ends(t: int, cfg: StreamConfig, n: int) -> list[int]:
    """Window end indices used for the decision at ``t`` (clipped to the stream)."""
    last = min(t + cfg.lookahead, n - 1)
    return list(range(t, last + 1, cfg.inference_stride))


def aggregate(step_logits: np.ndarray) -> tuple[int, np.ndarray]:
    """Average per-window logit vectors for one timestep; argmax, ties to the lowest index."""
    mean = np.mean(step_logits, axis=0)
    return int(np.argmax(mean)), mean


def decide(t: int, buffer: StreamBuffer, predict: Callable, cfg: StreamConfig, n: int, cache=None):
    """Label for timestep ``t`` using windows ending in ``[t, t + lookahead]``.

    ``predict`` maps a (B, T, C) array of windows to (B, T, K) logits.
    ``cache`` (dict end -> logits) avoids re-running windows shared between
    consecutive decisions. Returns ``(label, mean_logits)``.
    """
    T = cfg.window_len
    if t < T - 1:
        return UNDEFINED, None
    ends = participating_ends(t, cfg, n)
    cache = {} if cache is None else cache
    todo = [e for e in ends if e not in cache]
    if todo:
        out = predict(np.stack([buffer.window(e, T) for e in todo]))
        for e, lg in zip(todo, out):
            cache[e] = lg
    step = np.stack([cache[e][T - 1 - (e - t)] for e in ends])
    return aggregate(step)


def run_stream(
    samples: np.ndarray, predict: Callable, cfg: StreamConfig, keep_logits: bool = True, class_names=()
) -> PredictionStream:
    """Replay ``samples`` (n, C) chronologically and emit held labels.

    Decisions happen at ``T-1, T-1+hold, ...``; timesteps before ``T-1`` stay
    :data:`UNDEFINED`. Near the end of the stream only windows that fit are
    used. For auditing, ``max_read[i]`` is the highest sample read from the
    buffer during decision i (-1 when every window came from the cache) and
    ``arrived[i]`` the number of samples that had arrived at that point.
    """
    samples = np.asarray(samples)
    n, C = samples.shape
    T = cfg.window_len
    labels = np.full(n, UNDEFINED, dtype=np.int64)
    warmup_end = T - 1
    buf = StreamBuffer(C, n, samples.dtype)
    cache: dict[int, np.ndarray] = {}
    times, logits, reads, arrived, timing = [], [], [], [], []
    for t in range(warmup_end, n, cfg.hold):
        need = min(t + cfg.lookahead, n - 1) + 1
        if need > buf.arrived:
            buf.push(samples[buf.arrived : need])
        buf.reset_audit()
        t0 = time.perf_counter()
        label, mean = decide(t, buf, predict, cfg, n, cache)
        timing.append(time.perf_counter() - t0)
        labels[t : t + cfg.hold] = label
        times.append(t)
        logits.append(mean)
        reads.append(buf.max_read)
        arrived.append(buf.arrived)
        for e in [e for e in cache if e < t + cfg.hold]:
            del cache[e]
    return PredictionStream(
        labels=labels,
        decision_times=np.array(times, dtype=np.int64),
        config=cfg,
        warmup_end=warmup_end,
        logits=np.array(logits) if keep_logits and logits else None,
        max_read=np.array(reads, dtype=np.int64),
        arrived=np.array(arrived, dtype=np.int64),
        timing=np.array(timing),
        class_names=tuple(class_names),
    )


def stream_recording(rec, model, cfg: StreamConfig, **kwargs) -> PredictionStream:
    """Replay a (preprocessed) recording through a trained model."""
    if model.cfg.window_len != cfg.window_len:
        raise StreamConfigError(
            f"model window {model.cfg.window_len} != stream window {cfg.window_len}"
        )
    kwargs.setdefault("class_names", rec.class_names)
    return run_stream(rec.samples, model.predict_windows, cfg, **kwargs)


def emission_delays(stream: PredictionStream) -> np.ndarray:
    """Per defined timestep u: samples between u and the arrival of the data that fixed its label.

    A change at ``u`` is first reflected by the next decision at ``t' >= u``,
    which is issued once the buffer holds sample ``t' + lookahead``. When the
    stream carries its arrival audit that measured count is used.
    """
    cfg = stream.config
    n = len(stream)
    times = stream.decision_times
    u = np.arange(stream.warmup_end, n)
    idx = np.searchsorted(times, u, side="left")
    valid = idx < len(times)
    if stream.arrived is not None:
        issued = stream.arrived[idx[valid]] - 1
    else:
        issued = np.minimum(times[idx[valid]] + cfg.lookahead, n - 1)
    return issued - u[valid]


# -- prediction files -----------------------------------------------------


def save_predictions(stream: PredictionStream, path, extra: dict | None = None) -> None:
    """CSV ``t,label[,logit...]`` preceded by a ``# {json}`` config line."""
    header = {
        "format": PREDICTION_FORMAT,
        "config": stream.config.to_dict(),
        "warmup_end": stream.warmup_end,
        "class_names": list(stream.class_names),
    }
    if extra:
        header.update(extra)
    K = stream.logits.shape[1] if stream.logits is not None else 0
    step_logits = None
    if K:
        idx = np.searchsorted(stream.decision_times, np.arange(len(stream)), side="right") - 1
        step_logits = np.where((idx >= 0)[:, None], stream.logits[np.maximum(idx, 0)], np.nan)
    with Path(path).open("w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "label"] + [f"logit{k}" for k in range(K)])
        for t in range(len(stream)):
            row = [t, int(stream.labels[t])]
            if K:
                row += ["" if np.isnan(v) else repr(float(v)) for v in step_logits[t]]
            w.writerow(row)


def load_predictions(path) -> PredictionStream:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing config header line")
        header = json.loads(first[2:])
        reader = csv.reader(fh)
        cols = next(reader)
        K = len(cols) - 2
        labels, logit_rows = [], []
        for row in reader:
            labels.append(int(row[1]))
            if K:
                logit_rows.append([float(v) if v else np.nan for v in row[2:]])
    cfg = StreamConfig(**header["config"])
    labels = np.array(labels, dtype=np.int64)
    n = len(labels)
    times = np.arange(header["warmup_end"], n, cfg.hold, dtype=np.int64)
    logits = np.array(logit_rows)[times] if K and len(times) else None
    return PredictionStream(
        labels=labels,
        decision_times=times,
        config=cfg,
        warmup_end=int(header["warmup_end"]),
        logits=logits,
        class_names=tuple(header.get("class_names", ())),
    )
