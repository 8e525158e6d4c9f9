"""Recording ingestion, preprocessing and sliding windows.

On disk a recording is a CSV with header ``t,ch0,...,ch{C-1},label``. Channel
values are stored in raw Myo units (signed 8-bit range) and divided by 128 at
load time, so in memory amplitudes lie roughly in [-1, 1]. Scaling by a power
of two is exact, which makes ``load(save(r)) == r`` hold bit for bit.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

RAW_SCALE = 128.0
MANIFEST_FORMAT = "emgintent-manifest/1"


class RecordingError(ValueError):
    """Base class for ingestion failures."""


class RecordingParseError(RecordingError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class LabelMappingError(RecordingError, KeyError):
    def __init__(self, gesture: str, path=None):
        self.gesture = gesture
        where = f" in {path}" if path is not None else ""
        super().__init__(f"unknown gesture {gesture!r}{where}")

    __str__ = ValueError.__str__


class SchemaError(RecordingError):
    pass


class ShortRecordingWarning(UserWarning):
    """Raised (as a warning) when a recording cannot hold a single window."""


@dataclass(frozen=True, eq=False)
class Recording:
    """A labeled multichannel EMG time series.

    ``samples`` has shape (T_total, C); ``labels`` holds one class index per
    sample, indexing into ``class_names``.
    """

    subject_id: str
    session_id: str
    sample_rate_hz: int
    samples: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise SchemaError(f"samples must be (T, C) with C >= 1, got {samples.shape}")
        if labels.shape != (samples.shape[0],):
            raise SchemaError(
                f"labels length {labels.shape} does not match {samples.shape[0]} samples"
            )
        if self.sample_rate_hz <= 0:
            raise SchemaError("sample_rate_hz must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise SchemaError("label index outside the class table")

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.session_id == other.session_id
            and self.sample_rate_hz == other.sample_rate_hz
            and self.class_names == other.class_names
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.labels, other.labels)
        )

    def replace(self, **changes) -> "Recording":
        fields = dict(
            subject_id=self.subject_id,
            session_id=self.session_id,
            sample_rate_hz=self.sample_rate_hz,
            samples=self.samples,
            labels=self.labels,
            class_names=self.class_names,
        )
        fields.update(changes)
        return Recording(**fields)


@dataclass(frozen=True)
class FileEntry:
    path: str
    subject_id: str
    session_id: str


@dataclass
class Manifest:
    """Dataset manifest: class table, acquisition constants and file list."""

    classes: dict[str, int]
    sample_rate_hz: int = 200
    channels: int = 8
    files: list[FileEntry] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        indices = sorted(self.classes.values())
        if indices != list(range(len(indices))):
            raise SchemaError(f"class indices must be 0..K-1, got {indices}")

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.classes, key=self.classes.__getitem__))

    @classmethod
    def from_class_names(cls, names: Sequence[str], **kwargs) -> "Manifest":
        return cls(classes={n: i for i, n in enumerate(names)}, **kwargs)

    def entry_for(self, path) -> FileEntry | None:
        name = Path(path).name
        for entry in self.files:
            if Path(entry.path).name == name:
                return entry
        return None

    def resolve(self, entry: FileEntry) -> Path:
        p = Path(entry.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "sample_rate_hz": self.sample_rate_hz,
            "channels": self.channels,
            "classes": dict(self.classes),
            "files": [
                {"path": f.path, "subject_id": f.subject_id, "session_id": f.session_id}
                for f in self.files
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RecordingParseError(path, exc.lineno, exc.msg) from None
    try:
        files = [
            FileEntry(str(f["path"]), str(f["subject_id"]), str(f["session_id"]))
            for f in raw.get("files", [])
        ]
        return Manifest(
            classes={str(k): int(v) for k, v in raw["classes"].items()},
            sample_rate_hz=int(raw["sample_rate_hz"]),
            channels=int(raw["channels"]),
            files=files,
            root=path.parent,
        )
    except KeyError as exc:
        raise SchemaError(f"{path}: manifest missing field {exc.args[0]!r}") from None


def load_recording(
    path,
    manifest: Manifest,
    subject_id: str | None = None,
    session_id: str | None = None,
) -> Recording:
    """Read one recording CSV, mapping gesture names through the manifest."""
    path = Path(path)
    entry = manifest.entry_for(path)
    if subject_id is None:
        subject_id = entry.subject_id if entry else path.stem
    if session_id is None:
        session_id = entry.session_id if entry else "0"

    C = manifest.channels
    expected = ["t"] + [f"ch{c}" for c in range(C)] + ["label"]
    rows: list[list[float]] = []
    labels: list[int] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise RecordingParseError(path, 1, "empty file")
        header = [h.strip() for h in header]
        if header != expected:
            n_ch = sum(h.startswith("ch") for h in header)
            if n_ch != C:
                raise SchemaError(
                    f"{path}: file has {n_ch} channels, manifest declares {C}"
                )
            raise RecordingParseError(path, 1, f"bad header {header}, expected {expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != C + 2:
                raise RecordingParseError(
                    path, lineno, f"expected {C + 2} fields, got {len(row)}"
                )
            try:
                values = [float(v) for v in row[1 : C + 1]]
            except ValueError as exc:
                raise RecordingParseError(path, lineno, str(exc)) from None
            gesture = row[-1].strip()
            if gesture not in manifest.classes:
                raise LabelMappingError(gesture, path)
            rows.append(values)
            labels.append(manifest.classes[gesture])

    samples = np.array(rows, dtype=np.float64).reshape(-1, C) / RAW_SCALE
    return Recording(
        subject_id=subject_id,
        session_id=session_id,
        sample_rate_hz=manifest.sample_rate_hz,
        samples=samples,
        labels=np.array(labels, dtype=np.int64),
        class_names=manifest.class_names,
    )


def save_recording(rec: Recording, path) -> None:
    """Write ``rec`` in the CSV format read by :func:`load_recording`."""
    C = rec.channels
    raw = rec.samples * RAW_SCALE
    names = rec.class_names
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"ch{c}" for c in range(C)] + ["label"])
        for t in range(len(rec)):
            writer.writerow([t, *(repr(float(v)) for v in raw[t]), names[rec.labels[t]]])


def save_dataset(recordings: Sequence[Recording], out_dir) -> Manifest:
    """Write recordings plus ``manifest.json`` into ``out_dir``."""
    if not recordings:
        raise ValueError("no recordings to save")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    first = recordings[0]
    entries = []
    for rec in recordings:
        if rec.class_names != first.class_names or rec.channels != first.channels:
            raise SchemaError("recordings disagree on class table or channel count")
        name = f"{rec.subject_id}_{rec.session_id}.csv"
        save_recording(rec, out_dir / name)
        entries.append(FileEntry(name, rec.subject_id, rec.session_id))
    manifest = Manifest.from_class_names(
        first.class_names,
        sample_rate_hz=first.sample_rate_hz,
        channels=first.channels,
        files=entries,
        root=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def load_dataset(manifest_path) -> list[Recording]:
    manifest = load_manifest(manifest_path)
    return [
        load_recording(manifest.resolve(e), manifest, e.subject_id, e.session_id)
        for e in manifest.files
    ]


def median_filter(x: np.ndarray, width: int) -> np.ndarray:
    """Sliding median along axis 0; edge windows shrink to the available samples."""
    if width < 1 or width % 2 == 0:
        raise ValueError(f"median window must be odd and >= 1, got {width}")
    x = np.asarray(x, dtype=np.float64)
    half = width // 2
    n = x.shape[0]
    if half == 0 or n == 0:
        return x.copy()
    out = np.empty_like(x)
    if n >= width:
        view = np.lib.stride_tricks.sliding_window_view(x, width, axis=0)
        out[half : n - half] = np.median(view, axis=-1)
    for i in list(range(min(half, n))) + list(range(max(n - half, half), n)):
        out[i] = np.median(x[max(0, i - half) : i + half + 1], axis=0)
    return out


def preprocess(rec: Recording, median_window: int = 3) -> Recording:
    """Median filter each channel, then full-wave rectify."""
    filtered = median_filter(rec.samples, median_window)
    return rec.replace(samples=np.abs(filtered))


@dataclass(frozen=True)
class WindowSpec:
    window_len: int = 600
    stride: int = 30

    def __post_init__(self):
        if self.window_len < 1 or self.stride < 1:
            raise ValueError("window_len and stride must be >= 1")

    def count(self, n: int) -> int:
        if n < self.window_len:
            return 0
        return (n - self.window_len) // self.stride + 1


@dataclass(frozen=True, eq=False)
class Window:
    start: int
    emg: np.ndarray
    labels: np.ndarray


def window_starts(n: int, spec: WindowSpec) -> range:
    return range(0, spec.count(n) * spec.stride, spec.stride)


def windows(rec: Recording, spec: WindowSpec) -> list[Window]:
    """Cut ``rec`` into windows starting at 0, stride, 2*stride, ...

    A recording shorter than one window yields an empty list and a
    :class:`ShortRecordingWarning`.
    """
    n = len(rec)
    if n < spec.window_len:
        msg = (
            f"recording {rec.subject_id}/{rec.session_id} has {n} samples, "
            f"shorter than window {spec.window_len}; skipped"
        )
        logger.warning(msg)
        warnings.warn(msg, ShortRecordingWarning, stacklevel=2)
        return []
    T = spec.window_len
    return [
        Window(s, rec.samples[s : s + T], rec.labels[s : s + T])
        for s in window_starts(n, spec)
    ]


def iter_windows(recordings: Sequence[Recording], spec: WindowSpec) -> Iterator[Window]:
    for rec in recordings:
        yield from windows(rec, spec)
