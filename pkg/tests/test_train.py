import numpy as np
import pytest
import torch

import memseg.train as train_mod
from memseg.dataset import Corpus
from memseg.errors import ConfigError, DatasetError, DivergenceError
from memseg.model import ModelConfig
from memseg.model.gradcheck import SMALL
from memseg.train import TrainConfig, history_csv, train
from memseg.volume_io import LabelMask, Volume, VolumeBundle


def trivial_bundle():
    lab = np.zeros((8, 16, 16), np.uint8)
    rr, cc = np.mgrid[:16, :16]
    lab[:, (rr - 5) ** 2 + (cc - 5) ** 2 <= 9] = 1
    lab[:, 9:14, 8:14] = 2
    img = np.choose(lab, [0.1, 1.0, 0.6]).astype(float)
    return VolumeBundle(Volume(img), LabelMask(lab, class_names=("background", "a", "b")))


def trivial_corpus(n_train=6):
    b = trivial_bundle()
    ids = [f"t{i}" for i in range(n_train)]
    return Corpus.from_bundles({**{i: b for i in ids}, "v0": b}, ids, ["v0"])


@pytest.mark.slow
def test_trivial_volumes_reach_095():
    r = train(trivial_corpus(), ModelConfig(**SMALL), TrainConfig(lr0=1e-3, max_epochs=30, seed=0, max_clicks=3))
    assert r.best.best_dsc >= 0.95
    lrs = [h["lr"] for h in r.history]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_replay_and_resume():
    cfg = TrainConfig(lr0=1e-3, max_epochs=2, seed=3, max_clicks=2)
    a = train(trivial_corpus(2), ModelConfig(**SMALL), cfg)
    b = train(trivial_corpus(2), ModelConfig(**SMALL), cfg)
    assert a.last.to_bytes() == b.last.to_bytes()
    assert [h["epoch"] for h in a.history] == [0, 1]

    more = TrainConfig(lr0=1e-3, max_epochs=4, seed=3, max_clicks=2)
    resumed = train(trivial_corpus(2), None, more, init=a.last)
    assert [h["epoch"] for h in resumed.history] == [2, 3]
    straight = train(trivial_corpus(2), ModelConfig(**SMALL), more)
    assert resumed.last.to_bytes() == straight.last.to_bytes()


def test_resume_past_end():
    cfg = TrainConfig(lr0=1e-3, max_epochs=1, seed=0, max_clicks=1)
    r = train(trivial_corpus(1), ModelConfig(**SMALL), cfg)
    with pytest.raises(ConfigError):
        train(trivial_corpus(1), None, cfg, init=r.last)


def test_empty_split():
    b = trivial_bundle()
    with pytest.raises(DatasetError):
        train(Corpus.from_bundles({"a": b}, [], ["a"]), ModelConfig(**SMALL), TrainConfig(max_epochs=1))
    with pytest.raises(DatasetError):
        train(Corpus.from_bundles({"a": b}, ["a"], []), ModelConfig(**SMALL), TrainConfig(max_epochs=1))


def test_divergence_reports_context(monkeypatch):
    def nan_loss(*args, **kwargs):
        return torch.tensor(float("nan"), requires_grad=True)

    monkeypatch.setattr(train_mod, "seg_loss", nan_loss)
    with pytest.raises(DivergenceError, match="epoch 0, batch 0"):
        train(trivial_corpus(1), ModelConfig(**SMALL), TrainConfig(max_epochs=1, max_clicks=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(chunk_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr0=1e-6, lr_min=1e-4)
    with pytest.raises(ConfigError):
        TrainConfig(val_strategy="sometimes")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 1.0})
    cfg = TrainConfig(augment={"p_flip_z": 1.0})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_history_csv():
    text = history_csv([{"epoch": 0, "lr": 1e-4, "train_loss": 0.5, "val_dsc": 0.25}])
    assert text == "epoch,lr,train_loss,val_dsc\n0,0.0001,0.500000,0.250000\n"
