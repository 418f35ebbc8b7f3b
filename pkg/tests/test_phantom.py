import json

import numpy as np
import pytest

from memseg.errors import SpecError
from memseg.dataset import Corpus
from memseg.morphometry import extract_surfaces, measure
from memseg.phantom import Bone, PhantomSpec, Structure, generate, generate_corpus, knee_spec, shell_spec, slab_spec
from memseg.volume_io import read_nifti


def test_slab_layers_and_thickness():
    b = generate(slab_spec(2.0, 0.5))
    cart = b.mask.labels == 1
    layers = np.flatnonzero(cart.any(axis=(0, 2)))
    assert len(layers) == 5
    rep = measure(cart, b.bone.labels == 1, b.image.spacing)
    assert b.meta["expected_thickness"]["femoral"] == 2.0
    pts = rep.points / 0.5
    n = cart.shape[0]
    inner = (pts[:, 0] >= n // 4) & (pts[:, 0] < 3 * n // 4) & (pts[:, 2] >= n // 4) & (pts[:, 2] < 3 * n // 4)
    assert np.all(np.abs(rep.values[inner] - 2.0) <= 1e-9)


def test_shell_thickness_within_one_voxel():
    b = generate(shell_spec(20.0, 2.0, 1.0))
    rep = measure(b.mask.labels == 1, b.bone.labels == 1, b.image.spacing)
    assert abs(rep.mean - 2.0) <= 1.0


def test_shell_surfaces_are_shell_boundaries():
    spec = shell_spec(6.0, 2.0, 0.5)
    b = generate(spec)
    pair = extract_surfaces(b.mask.labels == 1, b.bone.labels == 1, b.image.spacing)
    c = np.asarray(spec.bones[0].center)
    r_in = np.linalg.norm(pair.bone_surface - c, axis=1)
    r_out = np.linalg.norm(pair.articular_surface - c, axis=1)
    # bone surface hugs the ball, articular surface sits a thickness further out
    assert r_in.max() < 6.0 + 1.0
    assert r_out.min() > 6.0 + 1.0
    assert np.all(np.abs(r_out - 8.0) <= 0.5 * np.sqrt(3))


def test_zero_noise_piecewise_constant():
    spec = knee_spec(noise_sigma=0.0)
    b = generate(spec)
    img, lab, bone = b.image.data, b.mask.labels, b.bone.labels == 1
    bg = (lab == 0) & ~bone
    assert np.all(img[bg] == np.float32(spec.background_mean))
    assert np.all(img[bone] == np.float32(spec.bone_mean))
    for k, mu in spec.structure_means.items():
        assert (lab == k).any()
        assert np.all(img[lab == k] == np.float32(mu))


def test_knee_has_all_structures():
    b = generate(knee_spec())
    assert set(np.unique(b.mask.labels)) == {0, 1, 2, 3, 4}
    assert not (b.mask.labels.astype(bool) & (b.bone.labels == 1)).any()


def test_overlap_is_spec_error():
    spec = PhantomSpec(
        dims=(16, 16, 16),
        bones=[Bone("ball", (4.0, 4.0, 4.0), 2.0)],
        structures=[Structure(1, "shell", 0, 1.0), Structure(2, "shell", 0, 1.0)],
        noise_sigma=0.0,
    )
    with pytest.raises(SpecError, match="overlaps"):
        generate(spec)


def test_unknown_field():
    with pytest.raises(SpecError, match="bogus"):
        PhantomSpec.from_dict({"bogus": 1})


def test_spec_dict_round_trip():
    spec = knee_spec(seed=3)
    again = PhantomSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert np.array_equal(generate(again).image.data, generate(spec).image.data)


def test_corpus_split_and_replay(tmp_path):
    m = generate_corpus(tmp_path / "a", n_volumes=10, seed=5)
    splits = [e["split"] for e in m["volumes"]]
    assert splits.count("train") == 8 and splits.count("val") == 2
    generate_corpus(tmp_path / "b", n_volumes=10, seed=5)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_corpus_reads_back(tmp_path):
    generate_corpus(tmp_path, n_volumes=3, seed=1)
    corpus = Corpus.from_dir(tmp_path)
    assert sorted(corpus.ids) == ["knee000", "knee001", "knee002"]
    for vid in corpus.ids:
        b = read_nifti(tmp_path / f"{vid}.nii")
        assert b.image.dims == (64, 64, 64)
        assert b.mask is not None and b.bone is not None
        assert b.mask.labels.max() <= 4
        assert np.isfinite(b.image.data).all()
