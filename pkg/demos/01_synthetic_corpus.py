"""Build the synthetic corpus and look at what a recording contains.

Ten subjects each perform the relax/open/close schedule ROCORORCR with
five-second holds. Labels switch halfway through a 0.2 s cross-fade, so the
annotation is only an approximate marker of movement onset.

    python demos/01_synthetic_corpus.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from emgintent.masking import change_points
from emgintent.signal_io import preprocess, save_dataset
from emgintent.synth import SynthConfig, generate

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/corpus")
cfg = SynthConfig(subjects=10, seed=0)
recs = generate(cfg)
save_dataset(recs, out)
print(f"{len(recs)} recordings of {len(recs[0])} samples x {recs[0].channels} channels -> {out}")

rec = preprocess(recs[0], 3)
taus = change_points(rec.labels)
print("label changes at", taus.tolist())

# mean rectified amplitude per class, per channel: the templates the model must tell apart
for k, name in enumerate(rec.class_names):
    print(f"{name:>6}", np.round(rec.samples[rec.labels == k].mean(axis=0), 3))

# subjects share templates only up to their own gains
gains = np.array([preprocess(r, 3).samples[r.labels == 1].mean(axis=0) for r in recs])
print("per-channel spread of 'open' across subjects (sd/mean):", np.round(gains.std(0) / gains.mean(0), 2))

# how far the envelope is from its settled value at the labelled instant
tau = int(taus[0])
before, after = rec.samples[tau - 100].mean(), rec.samples[tau + 100].mean()
for dt in (-20, -10, 0, 10, 20):
    frac = (rec.samples[tau + dt].mean() - before) / (after - before)
    print(f"tau{dt:+d}: {frac:5.2f} of the way to the new level")
