"""``emgintent`` command line: synth, train, stream, eval, baselines and report.

Every command writes a ``*.run.json`` echo of its arguments and resolved
configuration beside its outputs. Values from ``--config`` files take
precedence over individual flags. ``EMGINTENT_LOG_LEVEL`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .baseline import LDABaseline
from .masking import MaskConfig
from .metrics import EvalConfig, MetricsReport, evaluate
from .model import ModelConfig
from .report import format_table, summarize
from .signal_io import (
    Manifest,
    RecordingError,
    WindowSpec,
    load_dataset,
    load_manifest,
    load_recording,
    preprocess,
    save_dataset,
)
from .stream import StreamConfig, load_predictions, save_predictions, stream_recording
from .synth import SynthConfig, generate, parse_schedule, random_schedule
from .training import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    split_by_subject,
    train,
)

logger = logging.getLogger("emgintent")


class CLIError(Exception):
    pass


def _echo(path: Path, args: argparse.Namespace, resolved: dict | None = None) -> None:
    argv = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    payload = {"version": __version__, "args": argv}
    if resolved:
        payload["resolved"] = resolved
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _subject_list(s: str | None) -> set[str]:
    return {x.strip() for x in s.split(",") if x.strip()} if s else set()


def _infer_manifest(path: Path, class_names, sample_rate_hz: int) -> Manifest:
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    channels = sum(h.startswith("ch") for h in header)
    return Manifest.from_class_names(class_names, sample_rate_hz=sample_rate_hz, channels=channels)


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> None:
    cfg = {
        "subjects": args.subjects,
        "channels": args.channels,
        "ramp": args.ramp,
        "noise_scale": args.noise,
        "seed": args.seed,
        "schedules": [parse_schedule(args.schedule, args.hold_seconds)],
    }
    cfg.update(_read_config(args.config))
    synth_cfg = SynthConfig(**cfg)
    if args.random_schedules:
        rng = __import__("numpy").random.default_rng(synth_cfg.seed + 10_000)
        extra = [random_schedule(rng, synth_cfg.class_names, 12) for _ in range(args.random_schedules)]
        synth_cfg = replace(synth_cfg, schedules=synth_cfg.schedules + extra)
    recs = generate(synth_cfg)
    out = Path(args.out)
    save_dataset(recs, out)
    _echo(out / "synth.run.json", args, {"synth": synth_cfg.to_dict()})
    print(f"wrote {len(recs)} recordings to {out}")


def _train_configs(args, manifest: Manifest):
    train_cfg = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        window_len=args.window_len,
        stride=args.stride,
    )
    model_cfg = ModelConfig(
        channels=manifest.channels,
        num_classes=len(manifest.classes),
        window_len=args.window_len,
        d_model=args.d_model,
        n_heads=args.heads,
        n_layers=args.layers,
        dropout=args.dropout,
    )
    mask_cfg = MaskConfig(rng_seed=args.seed)
    file_cfg = _read_config(args.config)
    if "train" in file_cfg:
        train_cfg = replace(train_cfg, **file_cfg["train"])
    if "model" in file_cfg:
        model_cfg = replace(model_cfg, **file_cfg["model"])
    if "mask" in file_cfg:
        mask_cfg = MaskConfig.from_dict({**mask_cfg.to_dict(), **file_cfg["mask"]})
    if model_cfg.window_len != train_cfg.window_len:
        model_cfg = replace(model_cfg, window_len=train_cfg.window_len)
    return model_cfg, mask_cfg, train_cfg


def cmd_train(args) -> None:
    manifest = load_manifest(args.manifest)
    model_cfg, mask_cfg, train_cfg = _train_configs(args, manifest)
    exclude = _subject_list(args.exclude_subjects)
    recs = [r for r in load_dataset(args.manifest) if r.subject_id not in exclude]
    if not recs:
        raise CLIError("no training recordings left after exclusions")
    recs = [preprocess(r, train_cfg.median_window) for r in recs]
    val_subjects = _subject_list(args.val_subjects)
    if val_subjects:
        tr = [r for r in recs if r.subject_id not in val_subjects]
        va = [r for r in recs if r.subject_id in val_subjects]
    else:
        tr, va = split_by_subject(recs, train_cfg.val_fraction, train_cfg.seed)
    init = load_checkpoint(args.init).model if args.init else None
    if init is not None:
        model_cfg = init.cfg
    unlabeled = []
    if args.unlabeled_manifest:
        unlabeled = [preprocess(r, train_cfg.median_window) for r in load_dataset(args.unlabeled_manifest)]
    result = train(tr, va, model_cfg, mask_cfg, train_cfg, init=init, unlabeled=unlabeled)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.npz", result, manifest.sample_rate_hz)
    (out / "train_log.json").write_text(json.dumps(result.log, indent=2) + "\n")
    _echo(
        out / "train.run.json",
        args,
        {
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "mask": mask_cfg.to_dict(),
            "train_subjects": sorted({r.subject_id for r in tr}),
            "val_subjects": sorted({r.subject_id for r in va}),
            "best_epoch": result.best_epoch,
        },
    )
    print(f"best epoch {result.best_epoch}; checkpoint at {out / 'checkpoint.npz'}")


def _load_input(path: Path, manifest_path, class_names, sample_rate_hz):
    sibling = path.parent / "manifest.json"
    if manifest_path:
        manifest = load_manifest(manifest_path)
    elif sibling.exists() and load_manifest(sibling).entry_for(path):
        manifest = load_manifest(sibling)
    else:
        manifest = _infer_manifest(path, class_names, sample_rate_hz)
    return load_recording(path, manifest)


def cmd_stream(args) -> None:
    ckpt = load_checkpoint(args.model)
    rec = _load_input(Path(args.input), args.manifest, ckpt.class_names, ckpt.sample_rate_hz)
    if rec.class_names != ckpt.class_names:
        raise CLIError("recording class table differs from the checkpoint's")
    rec = preprocess(rec, ckpt.train_config.median_window)
    cfg = StreamConfig(
        window_len=ckpt.model.cfg.window_len,
        lookahead=args.lookahead,
        hold=args.hold,
        inference_stride=args.stride,
        sample_rate_hz=rec.sample_rate_hz,
    )
    ps = stream_recording(rec, ckpt.model, cfg, keep_logits=not args.no_logits)
    out = Path(args.out)
    save_predictions(
        ps, out, {"method": "transformer", "subject_id": rec.subject_id, "session_id": rec.session_id}
    )
    _echo(out.with_suffix(".run.json"), args, {"stream": cfg.to_dict()})
    print(f"{len(ps.decision_times)} decisions at {cfg.update_rate_hz:g} Hz -> {out}")


def _pred_header(path: Path) -> dict:
    with path.open() as fh:
        return json.loads(fh.readline()[2:])


def cmd_eval(args) -> None:
    pred_path = Path(args.pred)
    header = _pred_header(pred_path)
    pred = load_predictions(pred_path)
    truth = _load_input(
        Path(args.truth), args.manifest, pred.class_names, pred.config.sample_rate_hz
    )
    cfg = EvalConfig(
        buffer_half_width=args.buffer,
        sample_rate_hz=truth.sample_rate_hz,
        lookahead=pred.config.lookahead,
        hold=pred.config.hold,
        method=header.get("method", "model"),
    )
    report = evaluate(pred, truth.labels, cfg, truth.class_names, truth.subject_id, truth.session_id)
    out = Path(args.report)
    report.save(out)
    table = report.table()
    out.with_suffix(".txt").write_text(table + "\n")
    _echo(out.with_suffix(".run.json"), args)
    print(table)


def cmd_train_baseline(args) -> None:
    exclude = _subject_list(args.exclude_subjects)
    recs = [preprocess(r, 3) for r in load_dataset(args.manifest) if r.subject_id not in exclude]
    model = LDABaseline.fit(recs, WindowSpec(args.window_len, args.stride), args.shrinkage)
    out = Path(args.out)
    model.save(out)
    _echo(out.with_suffix(".run.json"), args)
    print(f"LDA baseline trained on {len(recs)} recordings -> {out}")


def cmd_eval_baseline(args) -> None:
    model = LDABaseline.load(args.model)
    rec = _load_input(Path(args.input), args.manifest, model.class_names, 200)
    rec = preprocess(rec, 3)
    ps = model.predict_stream(rec)
    out = Path(args.out)
    save_predictions(ps, out, {"method": "lda", "subject_id": rec.subject_id, "session_id": rec.session_id})
    _echo(out.with_suffix(".run.json"), args)
    if args.report:
        cfg = EvalConfig(args.buffer, rec.sample_rate_hz, 0, model.spec.stride, "lda")
        report = evaluate(ps, rec.labels, cfg, rec.class_names, rec.subject_id, rec.session_id)
        report.save(args.report)
        print(report.table())
    else:
        print(f"baseline predictions -> {out}")


def cmd_report(args) -> None:
    reports = [MetricsReport.load(p) for p in args.reports]
    summary = summarize(reports)
    table = format_table(summary, args.sample_rate)
    if args.out:
        out = Path(args.out)
        out.with_suffix(".json").write_text(json.dumps(summary, indent=2) + "\n")
        out.with_suffix(".md").write_text(table + "\n")
        _echo(out.with_suffix(".run.json"), args)
    print(table)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emgintent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus plus manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--schedule", default="ROCORORCR", help="gesture codes R/O/C/I/W/P")
    p.add_argument("--hold-seconds", type=float, default=5.0)
    p.add_argument("--random-schedules", type=int, default=0, help="extra random sessions per subject")
    p.add_argument("--ramp", type=int, default=40)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON with SynthConfig fields")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the masked transformer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help='JSON with "model", "train", "mask" sections')
    p.add_argument("--exclude-subjects", help="comma-separated subjects held out for testing")
    p.add_argument("--val-subjects", help="comma-separated validation subjects (default: 10%% split)")
    p.add_argument("--init", help="checkpoint to continue training from")
    p.add_argument("--unlabeled-manifest", help="corpus used for self-supervised EMG examples")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--window-len", type=int, default=600)
    p.add_argument("--stride", type=int, default=30)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.15)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stream", help="replay a recording through a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--manifest")
    p.add_argument("--lookahead", type=int, default=50)
    p.add_argument("--hold", type=int, default=20)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--no-logits", action="store_true")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("eval", help="score a prediction file against a recording")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--manifest")
    p.add_argument("--buffer", type=int, default=100, help="reaction buffer half-width (timesteps)")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-baseline", help="fit the feature + LDA baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--exclude-subjects")
    p.add_argument("--window-len", type=int, default=600)
    p.add_argument("--stride", type=int, default=30)
    p.add_argument("--shrinkage", type=float, default=0.1)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("eval-baseline", help="run the LDA baseline over a recording")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--buffer", type=int, default=100)
    p.set_defaults(func=cmd_eval_baseline)

    p = sub.add_parser("report", help="mean ± SD table across subjects")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.add_argument("--sample-rate", type=int, default=200)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("EMGINTENT_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CLIError, RecordingError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"emgintent {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
