"""Train a desk-scale model, replay held-out subjects online, compare with LDA.

Subjects s08 and s09 are never seen in training. The model is the shrunk
configuration (d=64, two layers, 0.5 s windows) that trains in a few minutes
on one CPU core. Then the same predictions are scored at several look-ahead
settings and reaction-buffer widths.

    python demos/03_train_and_stream.py [out_dir]
"""

import logging
import sys
import time
from pathlib import Path

from emgintent.baseline import LDABaseline
from emgintent.masking import MaskConfig
from emgintent.metrics import EvalConfig, evaluate
from emgintent.model import ModelConfig
from emgintent.report import format_table, summarize
from emgintent.signal_io import WindowSpec, preprocess
from emgintent.stream import StreamConfig, stream_recording
from emgintent.synth import SynthConfig, generate
from emgintent.training import TrainConfig, save_checkpoint, split_by_subject, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/run")
out.mkdir(parents=True, exist_ok=True)

recs = [preprocess(r, 3) for r in generate(SynthConfig(subjects=10, seed=0))]
test = [r for r in recs if r.subject_id in ("s08", "s09")]
pool = [r for r in recs if r not in test]
tr, va = split_by_subject(pool, 0.1, 42)
print("train", sorted({r.subject_id for r in tr}), "val", sorted({r.subject_id for r in va}))

model_cfg = ModelConfig(channels=8, num_classes=3, window_len=100, d_model=64, n_heads=4, n_layers=2)
train_cfg = TrainConfig(batch_size=32, epochs=6, learning_rate=1e-3, window_len=100, stride=50)
t0 = time.perf_counter()
result = train(tr, va, model_cfg, MaskConfig(), train_cfg)
print(f"trained in {time.perf_counter() - t0:.0f}s, best epoch {result.best_epoch}")
save_checkpoint(out / "checkpoint.npz", result)

lda = LDABaseline.fit(pool, WindowSpec(600, 30))
reports = []
for rec in test:
    ps = lda.predict_stream(rec)
    reports.append(evaluate(ps, rec.labels, EvalConfig(100, lookahead=0, method="lda"), rec.class_names,
                            rec.subject_id))
    for lookahead in (0, 25, 50):
        cfg = StreamConfig(window_len=100, lookahead=lookahead, hold=20, inference_stride=10)
        ps = stream_recording(rec, result.model, cfg)
        reports.append(evaluate(ps, rec.labels, EvalConfig(100, lookahead=lookahead, method="transformer"),
                                rec.class_names, rec.subject_id))

print()
print(format_table(summarize(reports)))

# the same predictions under tighter reaction buffers
print("\nbuffer sweep at 0.25 s look-ahead:")
cfg = StreamConfig(window_len=100, lookahead=50, hold=20, inference_stride=10)
streams = [(stream_recording(r, result.model, cfg), r) for r in test]
for b in (30, 60, 100):
    accs = [evaluate(ps, r.labels, EvalConfig(b)).transition_accuracy for ps, r in streams]
    print(f"  +/-{b / 200:.2f} s: transition accuracy {sum(accs) / len(accs):.2f}")

ps0, rec0 = streams[0]
rep = evaluate(ps0, rec0.labels, EvalConfig(100), rec0.class_names)
print("\nper-transition detail for", rec0.subject_id)
for e in rep.transitions:
    sw = "-" if e.predicted_switch_time is None else f"{e.predicted_switch_time - e.tau:+d}"
    print(f"  tau={e.tau:5d} {e.y_old}->{e.y_new} switch {sw:>5} {e.verdict.value}")
