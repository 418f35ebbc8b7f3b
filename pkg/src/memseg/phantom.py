"""Synthetic knee-like phantoms with analytic geometry.

A phantom is a set of bones (balls or half-spaces, optionally clipped to a
box) plus cartilage-like structures attached to them:

* ``shell``  - spherical shell cap of constant thickness on a ball bone
* ``slab``   - flat layer of constant thickness on a half-space bone
* ``wedge``  - annular wedge on a ball bone whose height grows linearly
  from 0 at ``r_in`` to ``thickness`` at ``r_out`` (meniscus stand-in)

Voxel centres sit at ``index * spacing`` mm. A structure of thickness ``t``
includes centres with surface distance in ``[0, t]``, so a slab on a
grid-aligned plane has ``t / h + 1`` layers and its centre-to-centre
thickness is exactly ``t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .errors import IoError, SpecError
from .volume_io import LabelMask, Volume, VolumeBundle, write_nifti

_EPS = 1e-9


@dataclass
class Bone:
    kind: str  # "ball" | "halfspace"
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)  # ball centre or a point on the plane
    radius: float = 0.0
    normal: tuple[float, float, float] = (0.0, 1.0, 0.0)  # half-space: bone lies on the -normal side
    box_lo: tuple[float, float, float] | None = None
    box_hi: tuple[float, float, float] | None = None


@dataclass
class Structure:
    label: int
    kind: str  # "shell" | "slab" | "wedge"
    bone: int
    thickness: float
    axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    half_angle_deg: float = 180.0
    box_lo: tuple[float, float, float] | None = None
    box_hi: tuple[float, float, float] | None = None
    r_in: float = 0.0
    r_out: float = 0.0


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (0.5, 0.5, 0.5)
    bones: list[Bone] = field(default_factory=list)
    structures: list[Structure] = field(default_factory=list)
    # tissue means: background, bone, then one per label 1..4
    background_mean: float = 0.05
    bone_mean: float = 0.25
    structure_means: dict[int, float] = field(default_factory=lambda: {1: 1.0, 2: 0.8, 3: 0.65, 4: 0.45})
    noise_sigma: float = 0.04
    seed: int = 0

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise SpecError(f"dims: must be three positive integers, got {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise SpecError(f"spacing: must be positive, got {self.spacing}")
        if self.noise_sigma < 0:
            raise SpecError(f"noise_sigma: must be >= 0, got {self.noise_sigma}")
        for i, s in enumerate(self.structures):
            if s.kind not in ("shell", "slab", "wedge"):
                raise SpecError(f"structures[{i}].kind: unknown kind {s.kind!r}")
            if not 0 <= s.bone < len(self.bones):
                raise SpecError(f"structures[{i}].bone: no bone with index {s.bone}")
            bone = self.bones[s.bone]
            if s.kind == "slab" and bone.kind != "halfspace":
                raise SpecError(f"structures[{i}].kind: slab needs a halfspace bone")
            if s.kind in ("shell", "wedge") and bone.kind != "ball":
                raise SpecError(f"structures[{i}].kind: {s.kind} needs a ball bone")
            if s.thickness < min(self.spacing) - _EPS:
                raise SpecError(f"structures[{i}].thickness: {s.thickness} mm is thinner than one voxel")
            if not 1 <= s.label < len(CLASS_NAMES):
                raise SpecError(f"structures[{i}].label: must be in 1..{len(CLASS_NAMES) - 1}")
            if s.kind == "wedge" and not 0 <= s.r_in < s.r_out:
                raise SpecError(f"structures[{i}].r_in/r_out: need 0 <= r_in < r_out")
        for i, b in enumerate(self.bones):
            if b.kind not in ("ball", "halfspace"):
                raise SpecError(f"bones[{i}].kind: unknown kind {b.kind!r}")
            if b.kind == "ball" and b.radius <= 0:
                raise SpecError(f"bones[{i}].radius: must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["structure_means"] = {str(k): v for k, v in self.structure_means.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise SpecError(f"{sorted(extra)[0]}: unknown phantom spec field")
        try:
            d["bones"] = [Bone(**b) for b in d.get("bones", [])]
            d["structures"] = [Structure(**s) for s in d.get("structures", [])]
        except TypeError as exc:
            raise SpecError(f"bones/structures: {exc}") from exc
        if "structure_means" in d:
            d["structure_means"] = {int(k): float(v) for k, v in d["structure_means"].items()}
        for key in ("dims", "spacing"):
            if key in d:
                d[key] = tuple(d[key])
        spec = cls(**d)
        spec.validate()
        return spec


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise SpecError("axis/normal vectors must be non-zero")
    return v / n


def _grid(spec: PhantomSpec) -> np.ndarray:
    axes = [np.arange(n) * s for n, s in zip(spec.dims, spec.spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _in_box(p: np.ndarray, lo, hi) -> np.ndarray:
    if lo is None or hi is None:
        return np.ones(p.shape[:-1], dtype=bool)
    lo = np.asarray(lo) - _EPS
    hi = np.asarray(hi) + _EPS
    return np.all((p >= lo) & (p <= hi), axis=-1)


def _bone_mask(p: np.ndarray, bone: Bone) -> np.ndarray:
    if bone.kind == "ball":
        r = np.linalg.norm(p - np.asarray(bone.center), axis=-1)
        inside = r < bone.radius - _EPS
    else:
        s = (p - np.asarray(bone.center)) @ _unit(bone.normal)
        inside = s < -_EPS
    return inside & _in_box(p, bone.box_lo, bone.box_hi)


def _structure_mask(p: np.ndarray, st: Structure, bone: Bone) -> np.ndarray:
    t = st.thickness
    if st.kind == "slab":
        s = (p - np.asarray(bone.center)) @ _unit(bone.normal)
        return (s >= -_EPS) & (s <= t + _EPS) & _in_box(p, st.box_lo, st.box_hi)
    rel = p - np.asarray(bone.center)
    r = np.linalg.norm(rel, axis=-1)
    height = r - bone.radius
    u = _unit(st.axis)
    along = rel @ u
    if st.kind == "shell":
        cos_lim = math.cos(math.radians(st.half_angle_deg))
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = np.where(r > 0, along / np.where(r > 0, r, 1.0), 1.0)
        return (height >= -_EPS) & (height <= t + _EPS) & (cosang >= cos_lim - _EPS)
    # wedge: lateral distance from the axis through the bone centre
    lateral = np.linalg.norm(rel - along[..., None] * u, axis=-1)
    frac = (lateral - st.r_in) / (st.r_out - st.r_in)
    cap = (frac >= 0) & (frac <= 1) & (along > 0)
    return cap & (height >= -_EPS) & (height <= frac * t + _EPS)


def expected_thickness(st: Structure) -> float:
    """Analytic thickness: ``t`` for shells/slabs, area-weighted mean height for wedges."""
    if st.kind != "wedge":
        return float(st.thickness)
    a, b = st.r_in, st.r_out
    num = (b**3 - a**3) / 3.0 - a * (b**2 - a**2) / 2.0
    den = (b**2 - a**2) / 2.0
    return float(st.thickness * num / den / (b - a))


def generate(spec: PhantomSpec) -> VolumeBundle:
    spec.validate()
    p = _grid(spec)
    bone = np.zeros(spec.dims, dtype=bool)
    for b in spec.bones:
        bone |= _bone_mask(p, b)
    labels = np.zeros(spec.dims, dtype=np.uint8)
    for i, st in enumerate(spec.structures):
        m = _structure_mask(p, st, spec.bones[st.bone]) & ~bone
        clash = m & (labels != 0)
        if clash.any():
            other = int(labels[clash][0])
            raise SpecError(f"structures[{i}]: overlaps label {other} in {int(clash.sum())} voxels")
        labels[m] = st.label

    means = np.full(spec.dims, spec.background_mean)
    means[bone] = spec.bone_mean
    for lab, mu in spec.structure_means.items():
        means[labels == lab] = mu
    rng = np.random.default_rng(spec.seed)
    image = means + (rng.normal(0.0, spec.noise_sigma, size=spec.dims) if spec.noise_sigma > 0 else 0.0)
    image = image.astype(np.float32).astype(np.float64)

    spacing = tuple(float(s) for s in spec.spacing)
    meta = {
        "expected_thickness": {CLASS_NAMES[st.label]: expected_thickness(st) for st in spec.structures},
        "seed": spec.seed,
    }
    return VolumeBundle(
        Volume(image, spacing),
        LabelMask(labels, spacing),
        LabelMask(bone.astype(np.uint8), spacing, class_names=("background", "bone")),
        meta,
    )


def knee_spec(
    femoral_t: float = 2.0,
    tibial_t: float = 2.0,
    patellar_t: float = 2.0,
    meniscus_h: float = 3.0,
    shift=(0.0, 0.0, 0.0),
    femur_radius: float = 7.0,
    tibia_radius: float = 25.0,
    seed: int = 0,
    noise_sigma: float = 0.04,
) -> PhantomSpec:
    """Default four-structure knee layout in a 32 mm cube (64^3 at 0.5 mm).

    Axes are ``(z, y, x)``; slices run along ``z``, ``y`` points inferior and
    ``x`` anterior.
    """
    sz, sy, sx = shift
    femur_c = (16.0 + sz, 10.0 + sy, 15.0 + sx)
    tibia_top = femur_c[1] + femur_radius + femoral_t + 1.0 + tibial_t + 0.5
    tibia_c = (16.0 + sz, tibia_top + tibia_radius, 15.0 + sx)
    pat_x = 28.0 + sx
    bones = [
        Bone("ball", femur_c, femur_radius),
        Bone("ball", tibia_c, tibia_radius),
        Bone(
            "halfspace",
            (16.0 + sz, 8.0 + sy, pat_x),
            normal=(0.0, 0.0, -1.0),
            box_lo=(10.0 + sz, 3.0 + sy, pat_x),
            box_hi=(22.0 + sz, 13.0 + sy, 32.0),
        ),
    ]
    cap_half = math.degrees(math.asin(min(1.0, 6.5 / tibia_radius)))
    structures = [
        Structure(1, "shell", 0, femoral_t, axis=(0.0, 1.0, 0.3), half_angle_deg=75.0),
        Structure(2, "shell", 1, tibial_t, axis=(0.0, -1.0, 0.0), half_angle_deg=cap_half),
        Structure(3, "slab", 2, patellar_t, box_lo=(11.0 + sz, 4.0 + sy, 0.0), box_hi=(21.0 + sz, 12.0 + sy, 32.0)),
        Structure(4, "wedge", 1, meniscus_h, axis=(0.0, -1.0, 0.0), r_in=7.5, r_out=11.0),
    ]
    return PhantomSpec(
        dims=(64, 64, 64),
        spacing=(0.5, 0.5, 0.5),
        bones=bones,
        structures=structures,
        noise_sigma=noise_sigma,
        seed=seed,
    )


def slab_spec(thickness: float = 2.0, spacing: float = 0.5, dims=(24, 24, 24), bone_top: float = 3.0) -> PhantomSpec:
    """Infinite-extent slab on a bone half-space (bone below ``y = bone_top``)."""
    return PhantomSpec(
        dims=tuple(dims),
        spacing=(spacing, spacing, spacing),
        bones=[Bone("halfspace", (0.0, bone_top, 0.0), normal=(0.0, -1.0, 0.0))],
        structures=[Structure(1, "slab", 0, thickness)],
        noise_sigma=0.0,
    )


def shell_spec(radius: float = 20.0, thickness: float = 2.0, spacing: float = 0.5) -> PhantomSpec:
    """Full spherical shell around a bone ball centred in the grid."""
    half = radius + thickness + 2.0
    n = int(math.ceil(2 * half / spacing)) + 1
    c = (n - 1) * spacing / 2.0
    return PhantomSpec(
        dims=(n, n, n),
        spacing=(spacing, spacing, spacing),
        bones=[Bone("ball", (c, c, c), radius)],
        structures=[Structure(1, "shell", 0, thickness, half_angle_deg=180.0)],
        noise_sigma=0.0,
    )


# --------------------------------------------------------------------------
# Corpus
# --------------------------------------------------------------------------

DEFAULT_RANGES = {
    "femoral_t": (1.5, 2.5),
    "tibial_t": (1.5, 2.5),
    "patellar_t": (1.5, 2.5),
    "meniscus_h": (2.5, 3.5),
    "shift": (-1.5, 1.5),
    "femur_radius": (6.0, 7.5),
    "tibia_radius": (20.0, 30.0),
}


def random_knee_spec(rng: np.random.Generator, ranges: dict | None = None, noise_sigma: float = 0.04) -> PhantomSpec:
    r = dict(DEFAULT_RANGES)
    r.update(ranges or {})

    def draw(key):
        lo, hi = r[key]
        return float(rng.uniform(lo, hi))

    # snap thicknesses to the voxel grid so layer counts are unambiguous
    def snap(x):
        return round(x / 0.5) * 0.5

    shift = tuple(draw("shift") for _ in range(3))
    return knee_spec(
        femoral_t=snap(draw("femoral_t")),
        tibial_t=snap(draw("tibial_t")),
        patellar_t=snap(draw("patellar_t")),
        meniscus_h=draw("meniscus_h"),
        shift=shift,
        femur_radius=draw("femur_radius"),
        tibia_radius=draw("tibia_radius"),
        seed=int(rng.integers(0, 2**31 - 1)),
        noise_sigma=noise_sigma,
    )


def split_ids(ids: list[str], seed: int, train_fraction: float = 0.8) -> dict[str, str]:
    """Random per-patient split; ``round(0.8 n)`` ids go to training."""
    order = list(ids)
    np.random.default_rng([seed, 8020]).shuffle(order)
    n_train = int(round(train_fraction * len(order)))
    return {vid: ("train" if i < n_train else "val") for i, vid in enumerate(order)}


def generate_corpus(out_dir, n_volumes: int = 20, seed: int = 0, ranges: dict | None = None, noise_sigma: float = 0.04) -> dict:
    """Write ``n_volumes`` phantoms as NIfTI files plus ``manifest.json``."""
    if n_volumes < 1:
        raise SpecError(f"n_volumes: must be >= 1, got {n_volumes}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    rng = np.random.default_rng(seed)
    ids = [f"knee{i:03d}" for i in range(n_volumes)]
    split = split_ids(ids, seed)
    entries = []
    for vid in ids:
        spec = random_knee_spec(rng, ranges, noise_sigma)
        bundle = generate(spec)
        image_path = out / f"{vid}.nii"
        write_nifti(bundle, image_path)
        entries.append(
            {
                "id": vid,
                "paths": {"image": image_path.name, "mask": f"{vid}_mask.nii", "bone": f"{vid}_bone.nii"},
                "split": split[vid],
                "expected_thickness": bundle.meta["expected_thickness"],
            }
        )
    manifest = {"volumes": entries, "seed": int(seed)}
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise IoError(f"cannot write manifest: {exc}") from exc
    return manifest

