"""Hand-crafted features + shrinkage LDA, one label per sliding window."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .signal_io import Recording, WindowSpec, window_starts
from .stream import PredictionStream, StreamConfig

BASELINE_FORMAT = "emgintent-lda/1"
STD_FLOOR = 1e-8


class LDAFitError(ValueError):
    pass


def rms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(x * x, axis=0))


def waveform_length(x: np.ndarray) -> np.ndarray:
    return np.abs(np.diff(x, axis=0)).sum(axis=0)


def median_amplitude_spectrum(x: np.ndarray) -> np.ndarray:
    """Median DFT magnitude over the non-zero frequency bins, per channel."""
    mag = np.abs(np.fft.rfft(x, axis=0))[1:]
    return np.median(mag, axis=0)


def featurize(window: np.ndarray) -> np.ndarray:
    """(T, C) window -> 3C vector laid out [rms, wl, mas] per channel."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    if window.shape[0] < 2:
        raise ValueError("window needs at least two samples")
    return np.stack([rms(window), waveform_length(window), median_amplitude_spectrum(window)], axis=1).reshape(-1)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


@dataclass
class LDA:
    """Multiclass linear discriminant with a shrunk pooled covariance."""

    coef: np.ndarray
    intercept: np.ndarray
    classes: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, shrinkage: float = 0.1) -> "LDA":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        classes = np.unique(y)
        if len(classes) < 2:
            raise LDAFitError("need at least two classes")
        n, p = X.shape
        means = np.stack([X[y == k].mean(axis=0) for k in classes])
        centered = X - means[np.searchsorted(classes, y)]
        S = centered.T @ centered / max(n - len(classes), 1)
        mu = np.trace(S) / p
        cov = (1.0 - shrinkage) * S + shrinkage * mu * np.eye(p)
        if not np.isfinite(cov).all() or np.linalg.cond(cov) > 1e12:
            raise LDAFitError("pooled covariance is singular even after shrinkage")
        priors = np.array([np.mean(y == k) for k in classes])
        coef = np.linalg.solve(cov, means.T).T
        intercept = -0.5 * np.sum(coef * means, axis=1) + np.log(priors)
        return cls(coef, intercept, classes)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X) @ self.coef.T + self.intercept

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def majority_label(labels: np.ndarray, num_classes: int) -> int:
    return int(np.argmax(np.bincount(labels, minlength=num_classes)))


@dataclass
class LDABaseline:
    standardizer: Standardizer
    lda: LDA
    spec: WindowSpec
    class_names: tuple[str, ...]
    shrinkage: float = 0.1

    @classmethod
    def fit(cls, recordings: Sequence[Recording], spec: WindowSpec = WindowSpec(), shrinkage=0.1):
        """Train on every window of (preprocessed) recordings, labeled by majority vote."""
        feats, labels = [], []
        K = recordings[0].num_classes
        for rec in recordings:
            for s in window_starts(len(rec), spec):
                feats.append(featurize(rec.samples[s : s + spec.window_len]))
                labels.append(majority_label(rec.labels[s : s + spec.window_len], K))
        if not feats:
            raise LDAFitError("no complete windows to train on")
        X = np.array(feats)
        std = Standardizer.fit(X)
        return cls(std, LDA.fit(std(X), np.array(labels), shrinkage), spec, recordings[0].class_names, shrinkage)

    def predict_window(self, window: np.ndarray) -> int:
        return int(self.lda.predict(self.standardizer(featurize(window)[None]))[0])

    def predict_stream(self, rec: Recording) -> PredictionStream:
        """Label each window at its last sample and hold it until the next window ends."""
        T, stride = self.spec.window_len, self.spec.stride
        n = len(rec)
        starts = list(window_starts(n, self.spec))
        labels = np.full(n, -1, dtype=np.int64)
        times = np.array([s + T - 1 for s in starts], dtype=np.int64)
        if starts:
            X = np.array([featurize(rec.samples[s : s + T]) for s in starts])
            win_labels = self.lda.predict(self.standardizer(X))
            for t, lab in zip(times, win_labels):
                labels[t : t + stride] = lab
            # hold the last window's label to the end of the recording
            labels[times[-1] :] = win_labels[-1]
        cfg = StreamConfig(window_len=T, lookahead=0, hold=stride, inference_stride=stride,
                           sample_rate_hz=rec.sample_rate_hz)
        return PredictionStream(labels, times, cfg, T - 1, class_names=rec.class_names)

    def save(self, path) -> None:
        meta = {
            "format": BASELINE_FORMAT,
            "window_len": self.spec.window_len,
            "stride": self.spec.stride,
            "class_names": list(self.class_names),
            "shrinkage": self.shrinkage,
            "mean": self.standardizer.mean.tolist(),
            "std": self.standardizer.std.tolist(),
            "coef": self.lda.coef.tolist(),
            "intercept": self.lda.intercept.tolist(),
            "classes": self.lda.classes.tolist(),
        }
        Path(path).write_text(json.dumps(meta) + "\n")

    @classmethod
    def load(cls, path) -> "LDABaseline":
        meta = json.loads(Path(path).read_text())
        if meta.get("format") != BASELINE_FORMAT:
            raise ValueError(f"{path}: not an LDA baseline file")
        return cls(
            Standardizer(np.array(meta["mean"]), np.array(meta["std"])),
            LDA(np.array(meta["coef"]), np.array(meta["intercept"]), np.array(meta["classes"])),
            WindowSpec(meta["window_len"], meta["stride"]),
            tuple(meta["class_names"]),
            meta["shrinkage"],
        )
