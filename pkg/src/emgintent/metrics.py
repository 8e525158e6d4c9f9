"""Raw accuracy, transition accuracy and latency offsets for label streams.

Prediction arrays use -1 for timesteps without a defined label (stream
warmup). Those steps are excluded from raw accuracy, and any transition whose
reaction buffer touches one, or runs off either end of the stream, is left
unscored.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .masking import change_points

UNDEFINED = -1


class AlignmentError(ValueError):
    pass


class Verdict(str, enum.Enum):
    CORRECT = "correct"
    BUFFER_VIOLATION = "buffer_violation"
    MAINTENANCE_VIOLATION = "maintenance_violation"
    UNSCORED = "unscored"


@dataclass
class TransitionEvent:
    tau: int
    y_old: int
    y_new: int
    buffer: tuple[int, int]
    maintenance: tuple[int, int]
    verdict: Verdict
    predicted_switch_time: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        d["buffer"] = list(self.buffer)
        d["maintenance"] = list(self.maintenance)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionEvent":
        return cls(
            tau=d["tau"],
            y_old=d["y_old"],
            y_new=d["y_new"],
            buffer=tuple(d["buffer"]),
            maintenance=tuple(d["maintenance"]),
            verdict=Verdict(d["verdict"]),
            predicted_switch_time=d["predicted_switch_time"],
        )


def _labels(pred) -> np.ndarray:
    return np.asarray(getattr(pred, "labels", pred))


def _check(pred, truth):
    pred, truth = _labels(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise AlignmentError(f"prediction length {pred.shape} != truth length {truth.shape}")
    return pred, truth


def upsample_hold(times, labels, n: int) -> np.ndarray:
    """Zero-order hold of labels emitted at ``times`` onto ``n`` timesteps."""
    times = np.asarray(times)
    out = np.full(n, UNDEFINED, dtype=np.int64)
    idx = np.searchsorted(times, np.arange(n), side="right") - 1
    ok = idx >= 0
    out[ok] = np.asarray(labels)[idx[ok]]
    return out


def raw_accuracy(pred, truth) -> float | None:
    """Fraction of defined timesteps where the prediction equals the truth."""
    pred, truth = _check(pred, truth)
    defined = pred != UNDEFINED
    if not defined.any():
        return None
    return float(np.mean(pred[defined] == truth[defined]))


def score_transitions(pred, truth, buffer_half_width: int) -> list[TransitionEvent]:
    """Score every ground-truth label change.

    A transition y_old -> y_new at tau is correct when, inside the buffer
    [tau - b, tau + b], the prediction only takes the values y_old / y_new and
    switches from y_old to y_new at least once (pred[u-1] == y_old and
    pred[u] == y_new for some u in the buffer), and every timestep of the
    maintenance period [tau + b + 1, next_tau - b - 1] predicts y_new.
    """
    pred, truth = _check(pred, truth)
    b = int(buffer_half_width)
    if b < 1:
        raise ValueError("buffer half-width must be >= 1")
    n = len(truth)
    taus = change_points(truth)
    events = []
    for i, tau in enumerate(taus):
        tau = int(tau)
        y_old, y_new = int(truth[tau - 1]), int(truth[tau])
        lo, hi = tau - b, tau + b
        m_lo = hi + 1
        m_hi = (int(taus[i + 1]) - b - 1) if i + 1 < len(taus) else n - 1
        ev = TransitionEvent(tau, y_old, y_new, (lo, hi), (m_lo, m_hi), Verdict.UNSCORED)
        events.append(ev)
        if lo < 1 or hi > n - 1:
            continue
        # lo >= 1 so pred[lo - 1] exists for the edge switch test
        window = pred[lo - 1 : hi + 1]
        if (window == UNDEFINED).any():
            continue
        buf = window[1:]
        if not np.isin(buf, (y_old, y_new)).all():
            ev.verdict = Verdict.BUFFER_VIOLATION
            continue
        switches = np.flatnonzero((window[:-1] == y_old) & (window[1:] == y_new))
        if switches.size == 0:
            ev.verdict = Verdict.BUFFER_VIOLATION
            continue
        ev.predicted_switch_time = lo + int(switches[0])
        if m_hi >= m_lo and not (pred[m_lo : m_hi + 1] == y_new).all():
            ev.verdict = Verdict.MAINTENANCE_VIOLATION
            continue
        ev.verdict = Verdict.CORRECT
    return events


def transition_accuracy(events) -> float | None:
    scored = [e for e in events if e.verdict != Verdict.UNSCORED]
    if not scored:
        return None
    return sum(e.verdict == Verdict.CORRECT for e in scored) / len(scored)


def offsets_ms(events, sample_rate_hz: float) -> list[float]:
    return [
        abs(e.predicted_switch_time - e.tau) * 1000.0 / sample_rate_hz
        for e in events
        if e.verdict == Verdict.CORRECT
    ]


def latency_offsets(events, sample_rate_hz: float) -> dict:
    """Mean/median |switch - tau| in ms over correct transitions; None when there are none."""
    offs = offsets_ms(events, sample_rate_hz)
    if not offs:
        return {"mean_ms": None, "median_ms": None, "offsets_ms": []}
    return {
        "mean_ms": float(np.mean(offs)),
        "median_ms": float(np.median(offs)),
        "offsets_ms": offs,
    }


@dataclass
class EvalConfig:
    buffer_half_width: int = 100
    sample_rate_hz: int = 200
    lookahead: int | None = None
    hold: int | None = None
    method: str = "model"


@dataclass
class MetricsReport:
    raw_accuracy: float | None
    transition_accuracy: float | None
    n_defined: int
    n_correct_steps: int
    n_scored: int
    n_correct_transitions: int
    latency: dict
    transitions: list[TransitionEvent]
    config: dict
    subject_id: str | None = None
    session_id: str | None = None
    per_class: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transitions"] = [e.to_dict() for e in self.transitions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["transitions"] = [TransitionEvent.from_dict(e) for e in d["transitions"]]
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def table(self) -> str:
        def fmt(v, spec=".3f"):
            return "n/a" if v is None else format(v, spec)

        rows = [
            ("raw accuracy", fmt(self.raw_accuracy)),
            (
                "transition accuracy",
                f"{fmt(self.transition_accuracy)} ({self.n_correct_transitions}/{self.n_scored} scored)",
            ),
            ("mean offset (ms)", fmt(self.latency["mean_ms"], ".1f")),
            ("median offset (ms)", fmt(self.latency["median_ms"], ".1f")),
            ("buffer half-width", str(self.config.get("buffer_half_width"))),
        ]
        for name, acc in self.per_class.items():
            rows.append((f"  recall[{name}]", fmt(acc)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def evaluate(pred, truth, cfg: EvalConfig | None = None, class_names=(), subject_id=None,
             session_id=None) -> MetricsReport:
    cfg = cfg or EvalConfig()
    labels, truth = _check(pred, truth)
    defined = labels != UNDEFINED
    events = score_transitions(labels, truth, cfg.buffer_half_width)
    scored = [e for e in events if e.verdict != Verdict.UNSCORED]
    per_class = {}
    for k, name in enumerate(class_names):
        sel = defined & (truth == k)
        if sel.any():
            per_class[name] = float(np.mean(labels[sel] == k))
    return MetricsReport(
        raw_accuracy=raw_accuracy(labels, truth),
        transition_accuracy=transition_accuracy(events),
        n_defined=int(defined.sum()),
        n_correct_steps=int((labels[defined] == truth[defined]).sum()),
        n_scored=len(scored),
        n_correct_transitions=sum(e.verdict == Verdict.CORRECT for e in scored),
        latency=latency_offsets(events, cfg.sample_rate_hz),
        transitions=events,
        config=asdict(cfg),
        subject_id=subject_id,
        session_id=session_id,
        per_class=per_class,
    )
