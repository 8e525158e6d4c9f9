"""Training loop, subject-level splits and the checkpoint format."""

from __future__ import annotations

import io
import json
import logging
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .masking import (
    SUPERVISED_TASKS,
    MaskConfig,
    Task,
    example_rng,
    make_masked_example,
)
from .model import Batch, MaskedTransformer, ModelConfig
from .optim import AdamW, linear_schedule, warmup_steps
from .signal_io import Recording, Window, WindowSpec, preprocess, windows

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "emgintent-checkpoint/1"
VALIDATION_EPOCH = 1_000_000


class TrainConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 12
    learning_rate: float = 1e-4
    warmup_ratio: float = 0.05
    weight_decay: float = 0.01
    seed: int = 42
    window_len: int = 600
    stride: int = 30
    median_window: int = 3
    val_fraction: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window_len, self.stride)


@dataclass
class TrainResult:
    model: MaskedTransformer
    log: list[dict]
    best_epoch: int
    class_names: tuple[str, ...] = ()
    train_config: TrainConfig = field(default_factory=TrainConfig)
    mask_config: MaskConfig = field(default_factory=MaskConfig)


def split_by_subject(
    recordings: Sequence[Recording], val_fraction: float, seed: int
) -> tuple[list[Recording], list[Recording]]:
    """Hold out ``max(1, floor(frac * n_subjects))`` whole subjects for validation."""
    subjects = sorted({r.subject_id for r in recordings})
    if len(subjects) < 2:
        raise TrainConfigError("need at least two subjects for a subject-level validation split")
    n_val = max(1, int(val_fraction * len(subjects)))
    rng = np.random.default_rng(seed)
    val_subjects = set(rng.choice(subjects, size=n_val, replace=False).tolist())
    train = [r for r in recordings if r.subject_id not in val_subjects]
    val = [r for r in recordings if r.subject_id in val_subjects]
    return train, val


def _collect(recordings, spec) -> list[Window]:
    out = []
    for rec in recordings:
        out.extend(windows(rec, spec))
    return out


def _make_examples(items, mask_cfg, seed, epoch):
    return [
        make_masked_example(
            w.emg, labels, task, mask_cfg, example_rng(seed, epoch, wid, task), window_id=wid
        )
        for wid, w, labels, task in items
    ]


def _task_items(labeled: list[Window], unlabeled: list[Window]):
    items = [(i, w, w.labels, t) for i, w in enumerate(labeled) for t in SUPERVISED_TASKS]
    off = len(labeled)
    items += [(off + i, w, None, Task.SELF_SUPERVISED_EMG) for i, w in enumerate(unlabeled)]
    return items


def evaluate_loss(model, items, mask_cfg, seed, batch_size) -> float:
    """Mean masked loss with fixed (epoch-independent) masks and dropout off."""
    total, count = 0.0, 0
    for i in range(0, len(items), batch_size):
        chunk = items[i : i + batch_size]
        batch = Batch.from_examples(
            _make_examples(chunk, mask_cfg, seed, VALIDATION_EPOCH), model.cfg.dtype
        )
        total += model.loss(batch).total * len(chunk)
        count += len(chunk)
    return total / count


def train(
    train_recs: Sequence[Recording],
    val_recs: Sequence[Recording],
    model_cfg: ModelConfig,
    mask_cfg: MaskConfig | None = None,
    train_cfg: TrainConfig | None = None,
    init: MaskedTransformer | None = None,
    unlabeled: Sequence[Recording] = (),
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Optimize the masked objective and keep the lowest-validation-loss weights.

    Recordings must already be preprocessed. Each labeled window appears once
    per supervised task per epoch; ``unlabeled`` recordings contribute
    self-supervised EMG examples only. Passing ``init`` continues training
    from existing weights (fine-tuning on a second corpus).
    """
    mask_cfg = mask_cfg or MaskConfig()
    train_cfg = train_cfg or TrainConfig()
    if model_cfg.window_len != train_cfg.window_len:
        raise TrainConfigError("model and training window lengths differ")
    spec = train_cfg.window_spec
    train_w = _collect(train_recs, spec)
    unl_w = _collect(unlabeled, spec)
    val_w = _collect(val_recs, spec)
    if not train_w and not unl_w:
        raise TrainConfigError("training set has no complete windows")
    if not val_w:
        raise TrainConfigError("validation set is empty")
    train_subj = {r.subject_id for r in train_recs}
    if train_subj & {r.subject_id for r in val_recs}:
        raise TrainConfigError("validation subjects overlap training subjects")

    seed = train_cfg.seed
    if init is not None:
        model = MaskedTransformer(model_cfg, {k: v.copy() for k, v in init.params.items()})
    else:
        model = MaskedTransformer(model_cfg, seed=seed)
    items = _task_items(train_w, unl_w)
    val_items = _task_items(val_w, [])
    bs = train_cfg.batch_size
    steps_per_epoch = -(-len(items) // bs)
    total_steps = steps_per_epoch * train_cfg.epochs
    warmup = warmup_steps(total_steps, train_cfg.warmup_ratio)
    opt = AdamW(model.params, weight_decay=train_cfg.weight_decay)

    log: list[dict] = []
    best_val, best_epoch, best_params = np.inf, -1, None
    step = 0
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([seed, epoch + 1, 2**32 - 1]).permutation(len(items))
        drop_rng = np.random.default_rng([seed, epoch + 1, 2**32 - 2])
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            chunk = [items[j] for j in order[b * bs : (b + 1) * bs]]
            batch = Batch.from_examples(_make_examples(chunk, mask_cfg, seed, epoch), model_cfg.dtype)
            terms, grads = model.loss_and_grads(batch, train=True, rng=drop_rng)
            lr = linear_schedule(step, train_cfg.learning_rate, total_steps, warmup)
            opt.step(model.params, grads, lr)
            epoch_loss += terms.total * len(chunk)
            step += 1
        val_loss = evaluate_loss(model, val_items, mask_cfg, seed, bs)
        entry = {
            "epoch": epoch + 1,
            "step": step,
            "train_loss": epoch_loss / len(items),
            "val_loss": val_loss,
            "lr": linear_schedule(step, train_cfg.learning_rate, total_steps, warmup),
        }
        log.append(entry)
        logger.info(
            "epoch %d train %.5f val %.5f (%.1fs)",
            epoch + 1, entry["train_loss"], val_loss, time.perf_counter() - t0,
        )
        if on_epoch:
            on_epoch(entry)
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch + 1
            best_params = {k: v.copy() for k, v in model.params.items()}

    best = MaskedTransformer(model_cfg, best_params)
    class_names = train_recs[0].class_names if train_recs else val_recs[0].class_names
    return TrainResult(best, log, best_epoch, class_names, train_cfg, mask_cfg)


def fit(
    recordings: Sequence[Recording],
    model_cfg: ModelConfig,
    mask_cfg: MaskConfig | None = None,
    train_cfg: TrainConfig | None = None,
    **kwargs,
) -> TrainResult:
    """Preprocess, split subjects into train/validation, then :func:`train`."""
    train_cfg = train_cfg or TrainConfig()
    prepped = [preprocess(r, train_cfg.median_window) for r in recordings]
    train_recs, val_recs = split_by_subject(prepped, train_cfg.val_fraction, train_cfg.seed)
    return train(train_recs, val_recs, model_cfg, mask_cfg, train_cfg, **kwargs)


# -- checkpoints -------------------------------------------------------------


def _write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    """npz writer with fixed zip timestamps so identical arrays give identical bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def save_checkpoint(path, result: TrainResult, sample_rate_hz: int = 200) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "model": result.model.cfg.to_dict(),
        "class_names": list(result.class_names),
        "sample_rate_hz": sample_rate_hz,
        "train": result.train_config.to_dict(),
        "mask": result.mask_config.to_dict(),
        "best_epoch": result.best_epoch,
    }
    arrays = {f"param/{k}": v for k, v in result.model.params.items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    _write_npz(path, arrays)


@dataclass
class Checkpoint:
    model: MaskedTransformer
    class_names: tuple[str, ...]
    sample_rate_hz: int
    train_config: TrainConfig
    mask_config: MaskConfig
    meta: dict


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        params = {k[len("param/") :]: data[k].copy() for k in data.files if k.startswith("param/")}
    cfg = ModelConfig(**meta["model"])
    return Checkpoint(
        model=MaskedTransformer(cfg, params),
        class_names=tuple(meta["class_names"]),
        sample_rate_hz=int(meta["sample_rate_hz"]),
        train_config=TrainConfig(**meta["train"]),
        mask_config=MaskConfig.from_dict(meta["mask"]),
        meta=meta,
    )
