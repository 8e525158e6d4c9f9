"""How transition accuracy treats early, late, flickering and wrong predictions.

A transition counts only if the prediction switches from the old to the new
class inside the reaction buffer, shows no third class there, and then holds
the new class without a single slip until the next buffer.
"""

import numpy as np

from emgintent.metrics import latency_offsets, raw_accuracy, score_transitions


def segments(*parts):
    return np.concatenate([np.full(n, k) for k, n in parts])


truth = segments((0, 400), (1, 400), (2, 400))
cases = {
    "exact": truth.copy(),
    "late 0.4 s": segments((0, 480), (1, 400), (2, 320)),
    "late 0.6 s": segments((0, 520), (1, 400), (2, 280)),
    "early 0.3 s": segments((0, 340), (1, 400), (2, 460)),
    "flicker in maintenance": truth.copy(),
    "third class in buffer": truth.copy(),
    "double switch in buffer": truth.copy(),
}
cases["flicker in maintenance"][600] = 0
cases["third class in buffer"][380] = 2
cases["double switch in buffer"][410:420] = 0

for name, pred in cases.items():
    events = score_transitions(pred, truth, 100)
    verdicts = ", ".join(e.verdict.value for e in events)
    lat = latency_offsets(events, 200)
    mean = "n/a" if lat["mean_ms"] is None else f"{lat['mean_ms']:.0f} ms"
    print(f"{name:<26} raw {raw_accuracy(pred, truth):.3f}  [{verdicts}]  mean offset {mean}")

# a detector that lags 0.35 s looks fine on raw accuracy and fails tight buffers
pred = segments((0, 470), (1, 400), (2, 330))
for b in (30, 60, 100):
    ok = sum(e.verdict.value == "correct" for e in score_transitions(pred, truth, b))
    print(f"lag 0.35 s, buffer +/-{b / 200:.2f} s: {ok}/2 transitions correct, raw {raw_accuracy(pred, truth):.3f}")
