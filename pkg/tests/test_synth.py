import numpy as np
import pytest

from emgintent.masking import change_points
from emgintent.synth import (
    SynthConfig,
    SynthConfigError,
    class_templates,
    generate,
    parse_schedule,
    random_schedule,
    raised_cosine,
)


def test_default_schedule_length():
    recs = generate(SynthConfig(subjects=2))
    assert all(len(r) == 9000 for r in recs)
    names = recs[0].class_names
    seq = [names[recs[0].labels[i * 1000]] for i in range(9)]
    assert "".join(s[0].upper() for s in seq) == "ROCORORCR"


def test_zero_noise_zero_ramp_exact_templates():
    cfg = SynthConfig(subjects=2, noise_scale=0.0, ramp=0)
    for rec in generate(cfg):
        bounds = np.r_[0, change_points(rec.labels), len(rec)]
        for a, b in zip(bounds[:-1], bounds[1:]):
            seg = rec.samples[a:b]
            assert (seg == seg[0]).all()
        # the same class reuses the same template across segments
        for k in range(3):
            rows = rec.samples[rec.labels == k]
            assert (rows == rows[0]).all()


def test_envelope_detector_within_half_ramp():
    cfg = SynthConfig(subjects=3, noise_scale=0.0, ramp=40)
    for rec in generate(cfg):
        for tau in change_points(rec.labels):
            # settled levels well outside the ramp on either side
            a, b = rec.samples[tau - 100], rec.samples[tau + 100]
            d = b - a
            w = (rec.samples[tau - 100 : tau + 100] - a) @ d / (d @ d)
            detected = tau - 100 + int(np.argmax(w >= 0.5))
            assert abs(detected - tau) <= cfg.ramp / 2


def test_raised_cosine_shape():
    w = raised_cosine(100, 20, 50)
    assert (w[:40] == 0).all() and (w[60:] == 1).all()
    assert w[50] == pytest.approx(0.5)
    assert np.all(np.diff(w) >= 0)
    assert raised_cosine(10, 0, 4).tolist() == [0] * 4 + [1] * 6


def test_templates_distinct():
    cfg = SynthConfig(class_names=("relax", "open", "close", "wave_in", "wave_out", "pinch"))
    G = class_templates(cfg, np.random.default_rng(0))
    assert (G >= 0).all()
    d = np.linalg.norm(G[:, None] - G[None], axis=-1)
    assert d[~np.eye(6, dtype=bool)].min() >= cfg.min_template_distance


def test_deterministic_and_subjects_differ():
    a = generate(SynthConfig(subjects=3, seed=5))
    b = generate(SynthConfig(subjects=3, seed=5))
    assert all(x == y for x, y in zip(a, b))
    assert not np.allclose(a[0].samples, a[1].samples)
    c = generate(SynthConfig(subjects=3, seed=6))
    assert not np.array_equal(a[0].samples, c[0].samples)


def test_noise_scales_with_template():
    rec = generate(SynthConfig(subjects=1, noise_scale=0.05))[0]
    clean = generate(SynthConfig(subjects=1, noise_scale=0.0))[0]
    rel = (rec.samples - clean.samples) / clean.samples
    assert abs(rel.std() - 0.05) < 0.005


def test_config_errors():
    with pytest.raises(SynthConfigError):
        SynthConfig(schedules=[[("relax", 0.5), ("open", 5.0)]])
    with pytest.raises(SynthConfigError):
        SynthConfig(schedules=[[("relax", 1.0), ("open", 1.0)]], min_samples=600)
    with pytest.raises(SynthConfigError):
        SynthConfig(schedules=[[("grab", 5.0)]])
    with pytest.raises(SynthConfigError):
        parse_schedule("RXO")


def test_random_schedule():
    rng = np.random.default_rng(0)
    sched = random_schedule(rng, ("relax", "open", "close"), 12)
    assert len(sched) == 12 and sched[0][0] == "relax"
    assert all(a[0] != b[0] for a, b in zip(sched, sched[1:]))
    assert all(1.5 <= h <= 4.0 for _, h in sched)
    cfg = SynthConfig(subjects=1, schedules=[sched])
    assert len(generate(cfg)[0]) == sum(round(h * 200) for _, h in sched)
