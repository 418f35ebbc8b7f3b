"""Training-time augmentation: z-flip, 3-plane rotation, elastic warp,
Gaussian noise and a multiplicative polynomial bias field.

Every random decision comes from a generator seeded by
``(config.seed, sample_index)`` and is drawn in a fixed order, so a sample is
reproducible regardless of which transforms end up enabled. Spatial
transforms are composed into one coordinate map and applied once: trilinear
for the image, nearest neighbour for label grids, zero fill outside.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .volume_io import LabelMask, Volume, VolumeBundle


@dataclass
class AugmentConfig:
    p_flip_z: float = 0.5
    p_rotate: float = 0.7
    max_deg_xy: float = 15.0
    max_deg_xz_yz: float = 9.0
    p_noise: float = 0.5
    noise_sigma_rel: float = 0.05
    p_bias: float = 0.2
    bias_order: int = 3
    bias_amp: float = 0.3
    p_elastic: float = 0.5
    elastic_grid: int = 4
    elastic_sigma_mm: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("p_") and not 0.0 <= v <= 1.0:
                raise ConfigError(f"augment.{f.name}: probability must lie in [0, 1], got {v}")
        for name in ("max_deg_xy", "max_deg_xz_yz", "noise_sigma_rel", "bias_amp", "elastic_sigma_mm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"augment.{name}: must be non-negative")
        if self.elastic_grid < 2:
            raise ConfigError("augment.elastic_grid: need at least 2 control points per axis")

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentConfig":
        return cls(p_flip_z=0.0, p_rotate=0.0, p_noise=0.0, p_bias=0.0, p_elastic=0.0, seed=seed)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"augment.{sorted(bad)[0]}: unknown option")
        return cls(**d)


def rotation_matrix(deg_xy: float, deg_xz: float, deg_yz: float) -> np.ndarray:
    """Rotation acting on ``(z, y, x)`` vectors: in-plane (xy) then xz then yz."""
    a, b, c = (math.radians(v) for v in (deg_xy, deg_xz, deg_yz))
    r_xy = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    r_xz = np.array([[math.cos(b), 0, -math.sin(b)], [0, 1, 0], [math.sin(b), 0, math.cos(b)]])
    r_yz = np.array([[math.cos(c), -math.sin(c), 0], [math.sin(c), math.cos(c), 0], [0, 0, 1]])
    return r_yz @ r_xz @ r_xy


def _sample_coords(dims, spacing, rot: np.ndarray | None, disp_mm: np.ndarray | None) -> np.ndarray:
    """Input voxel coordinates for each output voxel (shape ``(3, *dims)``)."""
    sp = np.asarray(spacing, dtype=np.float64)
    grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"))
    center = (np.asarray(dims, dtype=np.float64) - 1) / 2.0
    pos = (grid - center[:, None, None, None]) * sp[:, None, None, None]  # mm, centred
    if disp_mm is not None:
        pos = pos + disp_mm
    if rot is not None:
        pos = np.einsum("ji,j...->i...", rot, pos)  # inverse rotation = transpose
    return pos / sp[:, None, None, None] + center[:, None, None, None]


def _warp_image(data: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(data, coords, order=1, mode="constant", cval=0.0)


def _warp_labels(labels: np.ndarray, coords: np.ndarray) -> np.ndarray:
    idx = np.floor(coords + 0.5).astype(np.int64)
    inside = np.ones(labels.shape, dtype=bool)
    for ax, n in enumerate(labels.shape):
        inside &= (idx[ax] >= 0) & (idx[ax] < n)
        idx[ax] = np.clip(idx[ax], 0, n - 1)
    out = labels[idx[0], idx[1], idx[2]]
    return np.where(inside, out, 0).astype(labels.dtype)


def _bias_field(dims, order: int, amp: float, coeffs: np.ndarray) -> np.ndarray:
    axes = [np.linspace(-1.0, 1.0, n) for n in dims]
    z, y, x = np.meshgrid(*axes, indexing="ij")
    poly = np.zeros(dims)
    k = 0
    for i in range(order + 1):
        for j in range(order + 1 - i):
            for m in range(order + 1 - i - j):
                if i + j + m == 0:
                    continue
                poly += coeffs[k] * z**i * y**j * x**m
                k += 1
    peak = np.abs(poly).max()
    if peak > 0:
        poly /= peak
    return 1.0 + amp * poly


def _n_bias_terms(order: int) -> int:
    return (order + 1) * (order + 2) * (order + 3) // 6 - 1


def augment(bundle: VolumeBundle, config: AugmentConfig, sample_index: int) -> VolumeBundle:
    rng = np.random.default_rng([int(config.seed) & 0xFFFFFFFFFFFFFFFF, int(sample_index)])
    img = bundle.image
    dims = img.dims

    # fixed draw order: decisions first, then parameters
    do_flip, do_rot, do_elastic, do_noise, do_bias = rng.random(5) < [
        config.p_flip_z,
        config.p_rotate,
        config.p_elastic,
        config.p_noise,
        config.p_bias,
    ]
    angles = rng.uniform(-1.0, 1.0, 3) * [config.max_deg_xy, config.max_deg_xz_yz, config.max_deg_xz_yz]
    ctrl = rng.normal(0.0, 1.0, (3, config.elastic_grid, config.elastic_grid, config.elastic_grid))
    noise_seed = int(rng.integers(0, 2**63 - 1))
    bias_coeffs = rng.uniform(-1.0, 1.0, _n_bias_terms(config.bias_order))

    data = img.data.copy()
    labels = None if bundle.mask is None else bundle.mask.labels.copy()
    bone = None if bundle.bone is None else bundle.bone.labels.copy()

    if do_flip:
        data = data[::-1].copy()
        labels = None if labels is None else labels[::-1].copy()
        bone = None if bone is None else bone[::-1].copy()

    rot = rotation_matrix(*angles) if do_rot else None
    disp = None
    if do_elastic and config.elastic_sigma_mm > 0:
        zoom = [n / config.elastic_grid for n in dims]
        disp = np.stack([ndimage.zoom(c, zoom, order=3, mode="nearest") for c in ctrl]) * config.elastic_sigma_mm
        disp = disp[:, : dims[0], : dims[1], : dims[2]]
    if rot is not None or disp is not None:
        coords = _sample_coords(dims, img.spacing, rot, disp)
        data = _warp_image(data, coords)
        labels = None if labels is None else _warp_labels(labels, coords)
        bone = None if bone is None else _warp_labels(bone, coords)

    if do_noise and config.noise_sigma_rel > 0:
        scale = float(img.data.std()) or abs(float(img.data.mean())) or 1.0
        data = data + np.random.default_rng(noise_seed).normal(0.0, config.noise_sigma_rel * scale, dims)
    if do_bias and config.bias_amp > 0:
        data = data * _bias_field(dims, config.bias_order, config.bias_amp, bias_coeffs)

    out = VolumeBundle(Volume(data, img.spacing, img.origin, img.dtype), meta=dict(bundle.meta))
    if labels is not None:
        m = bundle.mask
        out.mask = LabelMask(labels, m.spacing, m.origin, m.class_names)
    if bone is not None:
        b = bundle.bone
        out.bone = LabelMask(bone, b.spacing, b.origin, b.class_names)
    return out
