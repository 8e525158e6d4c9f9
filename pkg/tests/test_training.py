import numpy as np
import pytest

from emgintent.masking import MaskConfig
from emgintent.model import ModelConfig
from emgintent.signal_io import preprocess
from emgintent.synth import SynthConfig, generate
from emgintent.training import (
    TrainConfig,
    TrainConfigError,
    fit,
    load_checkpoint,
    save_checkpoint,
    split_by_subject,
    train,
)

SMALL_MODEL = ModelConfig(channels=4, num_classes=3, window_len=40, d_model=16, n_heads=2, n_layers=1)
SMALL_TRAIN = TrainConfig(batch_size=16, epochs=2, learning_rate=1e-3, window_len=40, stride=200)


@pytest.fixture(scope="module")
def small_corpus():
    recs = generate(SynthConfig(subjects=3, channels=4, seed=1))
    return [preprocess(r, 3) for r in recs]


def small_split(recs):
    return [r for r in recs if r.subject_id != "s02"], [r for r in recs if r.subject_id == "s02"]


def test_split_by_subject_disjoint():
    recs = generate(SynthConfig(subjects=10, channels=2, seed=0))
    tr, va = split_by_subject(recs, 0.1, 42)
    assert len({r.subject_id for r in va}) == 1
    assert not {r.subject_id for r in tr} & {r.subject_id for r in va}
    assert split_by_subject(recs, 0.1, 42)[1][0].subject_id == va[0].subject_id
    with pytest.raises(TrainConfigError):
        split_by_subject(recs[:1], 0.1, 0)


def test_seeded_runs_identical(small_corpus, tmp_path):
    tr, va = small_split(small_corpus)
    a = train(tr, va, SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    b = train(tr, va, SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    assert a.log == b.log
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])
    save_checkpoint(tmp_path / "a.npz", a)
    save_checkpoint(tmp_path / "b.npz", b)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_log_fields(small_corpus):
    tr, va = small_split(small_corpus)
    res = train(tr, va, SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    assert [e["epoch"] for e in res.log] == [1, 2]
    assert set(res.log[0]) == {"epoch", "step", "train_loss", "val_loss", "lr"}
    best = min(res.log, key=lambda e: e["val_loss"])
    assert res.best_epoch == best["epoch"]
    assert res.class_names == ("relax", "open", "close")


def test_checkpoint_roundtrip(small_corpus, tmp_path):
    tr, va = small_split(small_corpus)
    res = train(tr, va, SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    save_checkpoint(tmp_path / "c.npz", res, 200)
    ck = load_checkpoint(tmp_path / "c.npz")
    assert ck.model.cfg == SMALL_MODEL
    assert ck.class_names == res.class_names
    assert ck.train_config == SMALL_TRAIN
    assert ck.mask_config.to_dict() == MaskConfig().to_dict()
    for k, v in res.model.params.items():
        assert np.array_equal(ck.model.params[k], v) and ck.model.params[k].dtype == v.dtype
    w = small_corpus[0].samples[:40]
    assert np.array_equal(ck.model.predict_window(w), res.model.predict_window(w))


def test_fine_tune_and_unlabeled(small_corpus):
    tr, va = small_split(small_corpus)
    base = train(tr, va, SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    tuned = train(tr[:1], va, SMALL_MODEL, MaskConfig(), SMALL_TRAIN, init=base.model, unlabeled=tr[1:])
    assert any(not np.array_equal(tuned.model.params[k], base.model.params[k]) for k in base.model.params)
    # init weights are copied, not mutated
    again = train(tr, va, SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    assert all(np.array_equal(again.model.params[k], base.model.params[k]) for k in base.model.params)


def test_rejects_overlap_and_empty_validation(small_corpus):
    tr, va = small_split(small_corpus)
    with pytest.raises(TrainConfigError):
        train(tr, tr[:1], SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    with pytest.raises(TrainConfigError):
        train(tr, [], SMALL_MODEL, MaskConfig(), SMALL_TRAIN)
    with pytest.raises(TrainConfigError):
        train(tr, va, SMALL_MODEL, MaskConfig(), TrainConfig(window_len=50))


def test_fit_preprocesses_and_splits():
    recs = generate(SynthConfig(subjects=3, channels=4, seed=2))
    res = fit(recs, SMALL_MODEL, MaskConfig(), TrainConfig(batch_size=16, epochs=1, learning_rate=1e-3,
                                                             window_len=40, stride=400))
    assert len(res.log) == 1


@pytest.mark.slow
def test_desk_model_validation_improves(desk_run):
    log = desk_run["result"].log
    assert log[-1]["val_loss"] < log[0]["val_loss"]


@pytest.mark.slow
def test_desk_model_open_segment(desk_run):
    model = desk_run["result"].model
    rec = desk_run["test"][0]
    T = model.cfg.window_len
    open_id = rec.class_names.index("open")
    # schedule ROCORORCR, 1000 samples per hold; second segment is "open"
    start = 1000 + 300
    assert (rec.labels[start : start + T] == open_id).all()
    pred = model.predict_window(rec.samples[start : start + T]).argmax(-1)
    assert np.mean(pred == open_id) >= 0.95
