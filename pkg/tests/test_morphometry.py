import numpy as np
import pytest

from conftest import brute_nn
from memseg.errors import EmptyStructure, MeasurementUnavailable, NoBoneInterface
from memseg.morphometry import SurfacePair, extract_surfaces, measure, nearest_distances, thickness, thickness_error


def slab(layers, n=12, bone_layers=3):
    """Bone occupies y < bone_layers; cartilage the next ``layers`` planes in y."""
    cart = np.zeros((n, n, n), bool)
    bone = np.zeros((n, n, n), bool)
    bone[:, :bone_layers] = True
    cart[:, bone_layers : bone_layers + layers] = True
    return cart, bone


def test_slab_surfaces():
    cart, bone = slab(5)
    pair = extract_surfaces(cart, bone)
    assert set(pair.bone_surface[:, 1]) == {3.0}
    assert len(pair.bone_surface) == 12 * 12
    # articular side: top layer plus the exposed grid faces of the slab
    assert {(z, x) for z, y, x in pair.articular_surface if y == 7.0} == {(z, x) for z in range(12) for x in range(12)}


def test_not_touching_bone():
    cart, bone = slab(3)
    bone[:] = False
    bone[:, :1] = True
    with pytest.raises(NoBoneInterface):
        extract_surfaces(cart, bone)


def test_empty_cartilage():
    _, bone = slab(3)
    with pytest.raises(EmptyStructure):
        extract_surfaces(np.zeros_like(bone), bone)


def test_point_thickness():
    pair = SurfacePair(np.zeros((1, 3)), np.array([[1.0, 0, 0], [0, 2.0, 0]]))
    assert thickness(pair).mean == 1.0


def test_empty_surface():
    with pytest.raises(EmptyStructure):
        thickness(SurfacePair(np.zeros((0, 3)), np.ones((2, 3))))


def test_slab_interior_columns():
    cart, bone = slab(5, n=16)
    rep = measure(cart, bone, spacing=(0.5, 0.5, 0.5))
    pts = rep.points / 0.5
    inner = (pts[:, 0] >= 4) & (pts[:, 0] < 12) & (pts[:, 2] >= 4) & (pts[:, 2] < 12)
    assert np.all(rep.values[inner] == 2.0)


def test_nn_brute_force(rng):
    for _ in range(20):
        a = rng.normal(size=(int(rng.integers(1, 500)), 3)) * rng.uniform(0.1, 10)
        b = rng.normal(size=(int(rng.integers(1, 500)), 3)) * rng.uniform(0.1, 10)
        assert np.array_equal(nearest_distances(a, b), brute_nn(a, b))


def test_nn_grid_ties(rng):
    # many equidistant candidates on a lattice
    a = rng.integers(0, 6, size=(300, 3)) * 0.5
    b = rng.integers(0, 6, size=(300, 3)) * 0.5 + 0.25
    assert np.array_equal(nearest_distances(a, b), brute_nn(a, b))


def test_thickness_error():
    ref, bone = slab(5)
    assert thickness_error(ref, ref, bone, (0.5, 0.5, 0.5)) == 0.0
    pred, _ = slab(6)
    # interior columns: 2.0 vs 2.5 mm; compare on the whole-face mean too
    t5 = measure(ref, bone, (0.5, 0.5, 0.5)).mean
    t6 = measure(pred, bone, (0.5, 0.5, 0.5)).mean
    assert thickness_error(pred, ref, bone, (0.5, 0.5, 0.5)) == pytest.approx(abs(t6 - t5), abs=1e-12)


def test_thickness_error_infinite_slab():
    # slab spans the grid; the central 50% of columns is far from the exposed side faces
    n = 20
    bone = np.zeros((n, n, n), bool)
    bone[:, :2] = True

    def cart(layers):
        m = np.zeros_like(bone)
        m[:, 2 : 2 + layers] = True
        return m

    def interior_mean(m):
        rep = measure(m, bone, (0.5, 0.5, 0.5))
        pts = rep.points / 0.5
        inner = (pts[:, 0] >= 5) & (pts[:, 0] < 15) & (pts[:, 2] >= 5) & (pts[:, 2] < 15)
        return rep.values[inner].mean()

    assert interior_mean(cart(5)) == 2.0
    assert interior_mean(cart(6)) == 2.5
    assert abs(interior_mean(cart(5)) - interior_mean(cart(6))) == 0.5


def test_measurement_unavailable():
    ref, bone = slab(4)
    with pytest.raises(MeasurementUnavailable):
        thickness_error(np.zeros_like(ref), ref, bone)
