import numpy as np
import pytest
import torch

from memseg.errors import ConfigError, ConfigMismatch, EmptyStructure
from memseg.metrics import dsc
from memseg.model import MemSegModel, ModelConfig
from memseg.propagation import PropagationStrategy, fuse_logits, plan_prompt_slices, propagate, sweep_strategies
from memseg.volume_io import LabelMask, Volume, VolumeBundle

CFG = ModelConfig(slice_size=16, patch=4, embed_dim=16, heads=2, pixel_dim=4, max_offset=4, num_classes=5)


class OracleModel(MemSegModel):
    """Pixel features are the one-hot labels carried in the image; prompts name the class."""

    def __init__(self, config=CFG, mode="oracle"):
        super().__init__(config)
        self.mode = mode

    def encode_image(self, image):
        lab = image.round().long()
        pix = torch.nn.functional.one_hot(lab, self.config.num_classes).movedim(-1, -3).float()
        tokens = torch.zeros(*image.shape[:-2], self.config.tokens, self.config.embed_dim)
        return tokens, pix

    def encode_prompts(self, clicks, class_id):
        n = max(1, len(clicks))
        out = torch.zeros(n, self.config.embed_dim)
        out[:, class_id] = 1.0
        return out

    def memory_attend(self, tokens, bank, slice_index):
        return tokens

    def memory_tokens(self, tokens, logits):
        return tokens

    def decode_mask(self, tokens, prompts, pixel_features, prompt_mask=None):
        cls = prompts[..., 0, : self.config.num_classes].argmax(-1)
        if prompts.dim() == 2:
            chosen = pixel_features[cls]
        else:
            chosen = pixel_features[torch.arange(len(cls)), cls]
        if self.mode == "empty":
            return torch.full(chosen.shape, -20.0)
        return torch.where(chosen > 0, 20.0, -20.0)


def label_volume(rng, z=24):
    lab = np.zeros((z, 16, 16), dtype=np.uint8)
    lab[2:20, 2:7, 2:7] = 1
    lab[5:15, 9:14, 9:14] = 2
    lab[10:12, 10:12, 2:6] = 3
    return lab


def test_plan_examples():
    lab = np.zeros((30, 4, 4), dtype=np.uint8)
    lab[3:25, 1, 1] = 1
    lab[12, 1, 1] = 0  # hole
    assert plan_prompt_slices(lab, 1, PropagationStrategy.parse("all")) == [z for z in range(3, 25) if z != 12]
    assert plan_prompt_slices(lab, 1, PropagationStrategy.parse("every:10")) == [3, 13, 23]
    assert plan_prompt_slices(lab, 1, PropagationStrategy.parse("every:3")) == [3, 6, 9, 15, 18, 21, 24]
    assert plan_prompt_slices(lab, 1, PropagationStrategy.parse("every:50")) == [3]
    with pytest.raises(EmptyStructure):
        plan_prompt_slices(lab, 2, PropagationStrategy.parse("all"))


def test_strategy_parse():
    assert str(PropagationStrategy.parse("every:7")) == "every:7"
    for bad in ("every:0", "some", "every:x"):
        with pytest.raises(ConfigError):
            PropagationStrategy.parse(bad)


@pytest.mark.parametrize("strategy", ["all", "every:3", "every:10", "every:50"])
def test_oracle_model_perfect(rng, strategy):
    lab = label_volume(rng)
    res = propagate(OracleModel(), lab.astype(float), lab, PropagationStrategy.parse(strategy), normalize=False)
    assert np.array_equal(res.mask.labels, lab)
    for c in (1, 2, 3):
        assert dsc(res.mask.labels == c, lab == c) == 1.0
        assert res.clicks_used[c] == len(res.prompted_slices[c])
    assert res.clicks_used[4] == 0 and res.prompted_slices[4] == []


def test_click_budget_with_unhelpful_model(rng):
    lab = label_volume(rng)
    res = propagate(OracleModel(mode="empty"), lab.astype(float), lab, PropagationStrategy.parse("every:10"), 3, normalize=False)
    for c in (1, 2, 3):
        assert res.clicks_used[c] == 3 * len(res.prompted_slices[c])
    for ck in res.clicks:
        inside = lab[ck.slice, ck.row, ck.col] == ck.class_id
        assert ck.positive == inside
        assert ck.slice in res.prompted_slices[ck.class_id]
    assert not res.mask.labels.any()


def test_three_clicks_per_volume(rng):
    lab = label_volume(rng)
    res = propagate(OracleModel(), lab.astype(float), lab, PropagationStrategy.parse("every:1000"), normalize=False)
    assert res.total_clicks == 3
    assert all(len(v) == 1 for c, v in res.prompted_slices.items() if c in (1, 2, 3))


def test_seeded_clicks_replay(rng):
    lab = label_volume(rng)
    a = propagate(OracleModel(), lab.astype(float), lab, seed=4, normalize=False)
    b = propagate(OracleModel(), lab.astype(float), lab, seed=4, normalize=False)
    assert a.clicks == b.clicks


def test_reverse_pass_doubles_clicks(rng):
    lab = label_volume(rng)
    res = propagate(OracleModel(), lab.astype(float), lab, PropagationStrategy.parse("every:10"), reverse=True, normalize=False)
    assert np.array_equal(res.mask.labels, lab)
    assert res.clicks_used[1] == 2 * len(res.prompted_slices[1])


def test_fusion_highest_logit():
    a = np.array([[[1.0, -1.0, 3.0]]])
    b = np.array([[[2.0, -0.5, -4.0]]])
    assert fuse_logits({1: a, 2: b}, a.shape).tolist() == [[[2, 0, 1]]]


def test_mismatched_slice_size():
    lab = np.zeros((2, 8, 8), dtype=np.uint8)
    lab[0, 1, 1] = 1
    with pytest.raises(ConfigMismatch):
        propagate(OracleModel(), lab.astype(float), lab)


def test_real_model_runs_and_keeps_geometry():
    torch.manual_seed(0)
    lab = np.zeros((6, 16, 16), dtype=np.uint8)
    lab[1:5, 4:10, 4:10] = 1
    vol = Volume(np.random.default_rng(0).normal(size=lab.shape), (1.0, 0.5, 0.5), (1.0, 2.0, 3.0))
    res = propagate(MemSegModel(CFG), vol, LabelMask(lab, (1.0, 0.5, 0.5), (1.0, 2.0, 3.0)))
    assert res.mask.dims == lab.shape
    assert res.mask.spacing == (1.0, 0.5, 0.5) and res.mask.origin == (1.0, 2.0, 3.0)
    assert set(res.logits) == {1}


def test_sweep_rows(rng):
    lab = label_volume(rng)
    bundle = VolumeBundle(Volume(lab.astype(float)), LabelMask(lab))
    torch.manual_seed(0)
    rows = sweep_strategies(MemSegModel(CFG), [("v", bundle)], [PropagationStrategy.parse("all")], (1, 2))
    assert {(r["clicks"], r["class"]) for r in rows} == {(n, c) for n in (1, 2) for c in (1, 2, 3)}
    assert all(0.0 <= r["dsc"] <= 1.0 and r["iou"] <= r["dsc"] for r in rows)
