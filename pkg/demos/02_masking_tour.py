"""What the four masked-reconstruction tasks hide from the model.

Each training window appears once per supervised task per epoch, with a new
mask every epoch. The masks below come from the same window.
"""

import numpy as np

from emgintent.masking import MaskConfig, Task, example_rng, make_masked_example
from emgintent.signal_io import WindowSpec, preprocess, windows
from emgintent.synth import SynthConfig, generate


def strip(mask, width=100):
    """One character per 6 timesteps: '#' if any step in the bin is masked."""
    bins = np.array_split(mask, width)
    return "".join("#" if b.any() else "." for b in bins)


rec = preprocess(generate(SynthConfig(subjects=1))[0], 3)
# a window that straddles the relax -> open change at t=1000
win = [w for w in windows(rec, WindowSpec(600, 30)) if w.start == 690][0]
print("labels ", "".join("ROC"[k] for k in win.labels[::6]))

cfg = MaskConfig()
for task in Task:
    lab = None if task == Task.SELF_SUPERVISED_EMG else win.labels
    for epoch in range(2):
        ex = make_masked_example(win.emg, lab, task, cfg, example_rng(42, epoch, 0, task))
        print(f"{task.name:<20} epoch {epoch} [{ex.mask_type.name.lower():<10}]")
        print("   emg   ", strip(ex.emg_mask[:, 0]))
        print("   intent", strip(ex.intent_mask), "(blocked from EMG)" if ex.block_emg_to_intent else "")

# ACTION_RECON with a transition mask hides the labels around every change point
cfg_t = MaskConfig(mix={Task.ACTION_RECON: (0.0, 0.0, 1.0)})
ex = make_masked_example(win.emg, win.labels, Task.ACTION_RECON, cfg_t, np.random.default_rng(0))
print("\ntransition mask covers", np.flatnonzero(ex.intent_mask)[[0, -1]].tolist(), "around tau=310")
