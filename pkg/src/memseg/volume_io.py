"""Volume containers, NIfTI-1 / raw+JSON file formats and FoV standardization.

Arrays are indexed ``(z, y, x)``. NIfTI files store ``x`` fastest, so the
header's ``dim[1..3]`` maps to ``(nx, ny, nz)`` and the C-ordered numpy array
read from the payload is already ``(z, y, x)``. Orientation matrices are not
interpreted; ``origin`` is carried through ``qoffset`` untouched.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import CLASS_NAMES
from .errors import (
    CorruptData,
    DimensionError,
    IoError,
    LabelError,
    SizeMismatch,
    UnsupportedDatatype,
    UnsupportedFormat,
)

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
NIFTI_MAGIC = b"n+1\x00"

# NIfTI datatype code <-> short name <-> numpy dtype
_NIFTI_CODES = {2: "u8", 4: "i16", 16: "f32"}
_CODE_FOR = {v: k for k, v in _NIFTI_CODES.items()}
_NP_DTYPES = {"u8": np.dtype("<u1"), "i16": np.dtype("<i2"), "f32": np.dtype("<f4")}
_BITPIX = {"u8": 8, "i16": 16, "f32": 32}


def _as_triple(values, name) -> tuple[float, float, float]:
    vals = tuple(float(v) for v in values)
    if len(vals) != 3:
        raise DimensionError(f"{name} must have 3 components, got {len(vals)}")
    return vals  # type: ignore[return-value]


@dataclass
class Volume:
    """A 3D scalar image with physical geometry (mm)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dtype: str = "f32"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DimensionError(f"volume must be 3D, got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise DimensionError(f"volume dims must be positive, got {self.data.shape}")
        self.spacing = _as_triple(self.spacing, "spacing")
        self.origin = _as_triple(self.origin, "origin")
        if not all(np.isfinite(s) and s > 0 for s in self.spacing):
            raise DimensionError(f"spacing must be positive and finite, got {self.spacing}")
        if not np.isfinite(self.data).all():
            raise CorruptData("volume contains non-finite values")
        if self.dtype not in _NP_DTYPES:
            raise UnsupportedDatatype(self.dtype)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(n * s for n, s in zip(self.dims, self.spacing))  # type: ignore[return-value]

    def same_geometry(self, other: "Volume | LabelMask") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=1e-9)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-9)
        )


@dataclass
class LabelMask:
    """Integer label grid. ``class_names[0]`` is always background."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    class_names: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise DimensionError(f"mask must be 3D, got shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.array_equal(labels, np.round(labels)):
                raise LabelError("mask contains non-integer labels")
        self.labels = labels.astype(np.uint8) if labels.size else labels
        self.spacing = _as_triple(self.spacing, "spacing")
        self.origin = _as_triple(self.origin, "origin")
        self.class_names = tuple(self.class_names)
        if len(self.class_names) < 1 or self.class_names[0] != "background":
            self.class_names = ("background",) + self.class_names
        if labels.size:
            lo, hi = int(labels.min()), int(labels.max())
            if lo < 0 or hi >= len(self.class_names):
                raise LabelError(
                    f"label values must lie in [0, {len(self.class_names) - 1}], got [{lo}, {hi}]"
                )

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.labels.shape)  # type: ignore[return-value]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def binary(self, class_id: int) -> np.ndarray:
        return self.labels == class_id


@dataclass
class VolumeBundle:
    image: Volume
    mask: LabelMask | None = None
    bone: LabelMask | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mask", "bone"):
            m = getattr(self, name)
            if m is not None and not self.image.same_geometry(m):
                raise DimensionError(f"{name} geometry does not match image")


# --------------------------------------------------------------------------
# NIfTI-1 subset
# --------------------------------------------------------------------------


def _pack_nifti_header(shape_zyx, spacing_zyx, origin_zyx, dtype: str, descrip: str = "") -> bytes:
    hdr = bytearray(NIFTI_HEADER_SIZE)
    nz, ny, nx = shape_zyx
    sz, sy, sx = spacing_zyx
    oz, oy, ox = origin_zyx
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, _CODE_FOR[dtype])
    struct.pack_into("<h", hdr, 72, _BITPIX[dtype])
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(NIFTI_VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 0.0)  # scl_slope: 0 means "not scaled"
    struct.pack_into("<f", hdr, 116, 0.0)
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    raw = descrip.encode("ascii", "replace")[:79]
    hdr[148 : 148 + len(raw)] = raw
    struct.pack_into("<3f", hdr, 268, ox, oy, oz)
    hdr[344:348] = NIFTI_MAGIC
    return bytes(hdr)


def read_nifti_array(path) -> tuple[np.ndarray, tuple, tuple, str, str]:
    """Read one NIfTI-1 file. Returns ``(data_zyx, spacing, origin, dtype, descrip)``.

    ``data`` is float64 with ``scl_slope``/``scl_inter`` applied when the slope
    is nonzero.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(blob) < NIFTI_HEADER_SIZE or blob[344:348] != NIFTI_MAGIC:
        raise UnsupportedFormat(f"{path}: not a single-file NIfTI-1 (magic 'n+1')")
    if struct.unpack_from("<i", blob, 0)[0] != NIFTI_HEADER_SIZE:
        raise UnsupportedFormat(f"{path}: sizeof_hdr != 348 (big-endian files are not supported)")
    dim = struct.unpack_from("<8h", blob, 40)
    code = struct.unpack_from("<h", blob, 70)[0]
    pixdim = struct.unpack_from("<8f", blob, 76)
    vox_offset = int(struct.unpack_from("<f", blob, 108)[0])
    slope, inter = struct.unpack_from("<2f", blob, 112)
    descrip = blob[148:228].split(b"\x00", 1)[0].decode("ascii", "replace")
    qoffset = struct.unpack_from("<3f", blob, 268)

    if dim[0] != 3 and not (dim[0] > 3 and all(d == 1 for d in dim[4 : dim[0] + 1])):
        raise DimensionError(f"{path}: expected a 3D volume, header has {dim[0]} dims")
    if code not in _NIFTI_CODES:
        raise UnsupportedDatatype(f"{path}: NIfTI datatype code {code}")
    dtype = _NIFTI_CODES[code]
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise DimensionError(f"{path}: non-positive dims {dim[1:4]}")
    count = nx * ny * nz
    npdt = _NP_DTYPES[dtype]
    payload = blob[vox_offset : vox_offset + count * npdt.itemsize]
    if len(payload) != count * npdt.itemsize:
        raise SizeMismatch(f"{path}: payload holds {len(payload)} bytes, header needs {count * npdt.itemsize}")
    data = np.frombuffer(payload, dtype=npdt).reshape(nz, ny, nx).astype(np.float64)
    if slope != 0.0 and np.isfinite(slope):
        data = data * float(slope) + float(inter)
    if not np.isfinite(data).all():
        raise CorruptData(f"{path}: non-finite voxel values")
    spacing = (float(pixdim[3]), float(pixdim[2]), float(pixdim[1]))
    origin = (float(qoffset[2]), float(qoffset[1]), float(qoffset[0]))
    return data, spacing, origin, dtype, descrip


def write_nifti_array(path, data: np.ndarray, spacing, origin, dtype: str, descrip: str = "") -> None:
    if dtype not in _NP_DTYPES:
        raise UnsupportedDatatype(dtype)
    arr = np.asarray(data)
    cast = arr.astype(_NP_DTYPES[dtype])
    if dtype != "f32" and not np.array_equal(cast.astype(np.float64), arr.astype(np.float64)):
        raise UnsupportedDatatype(f"values are not representable as {dtype}")
    header = _pack_nifti_header(arr.shape, spacing, origin, dtype, descrip)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(b"\x00" * (NIFTI_VOX_OFFSET - NIFTI_HEADER_SIZE))
            fh.write(np.ascontiguousarray(cast).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _sibling(path: Path, tag: str) -> Path:
    name = path.name
    for ext in (".nii", ".raw", ".bin"):
        if name.endswith(ext):
            return path.with_name(name[: -len(ext)] + f"_{tag}" + ext)
    return path.with_name(name + f"_{tag}")


def _classes_from_descrip(descrip: str) -> tuple[str, ...] | None:
    if descrip.startswith("classes="):
        names = [n for n in descrip[len("classes=") :].split(",") if n]
        return tuple(names)
    return None


def read_nifti(path, mask_path=None, bone_path=None) -> VolumeBundle:
    """Read an image plus optional label files into a bundle.

    When ``mask_path``/``bone_path`` are not given, ``<stem>_mask.nii`` and
    ``<stem>_bone.nii`` next to ``path`` are picked up if they exist.
    """
    path = Path(path)
    data, spacing, origin, dtype, descrip = read_nifti_array(path)
    bundle = VolumeBundle(Volume(data, spacing, origin, dtype))
    mask_path = Path(mask_path) if mask_path else _sibling(path, "mask")
    bone_path = Path(bone_path) if bone_path else _sibling(path, "bone")
    if mask_path.exists():
        bundle.mask = read_nifti_mask(mask_path)
    if bone_path.exists():
        bundle.bone = read_nifti_mask(bone_path, class_names=("background", "bone"))
    bundle.__post_init__()
    return bundle


def read_nifti_mask(path, class_names: Sequence[str] | None = None) -> LabelMask:
    data, spacing, origin, _, descrip = read_nifti_array(path)
    names = class_names or _classes_from_descrip(descrip) or CLASS_NAMES
    return LabelMask(data.astype(np.int64), spacing, origin, names)


def write_nifti(bundle: VolumeBundle, path) -> None:
    """Write the image to ``path`` and labels to ``_mask`` / ``_bone`` siblings."""
    path = Path(path)
    img = bundle.image
    write_nifti_array(path, img.data, img.spacing, img.origin, img.dtype)
    if bundle.mask is not None:
        write_nifti_mask(bundle.mask, _sibling(path, "mask"))
    if bundle.bone is not None:
        write_nifti_mask(bundle.bone, _sibling(path, "bone"))


def write_nifti_mask(mask: LabelMask, path) -> None:
    descrip = "classes=" + ",".join(mask.class_names[1:])
    write_nifti_array(path, mask.labels, mask.spacing, mask.origin, "u8", descrip)


# --------------------------------------------------------------------------
# Raw payload + JSON sidecar
# --------------------------------------------------------------------------


def read_raw_array(data_path, sidecar_path):
    try:
        side = json.loads(Path(sidecar_path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read sidecar {sidecar_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UnsupportedFormat(f"sidecar {sidecar_path} is not JSON: {exc}") from exc
    for key in ("dims", "spacing", "dtype"):
        if key not in side:
            raise UnsupportedFormat(f"sidecar missing key {key!r}")
    dtype = side["dtype"]
    if dtype not in _NP_DTYPES:
        raise UnsupportedDatatype(f"raw dtype {dtype!r}")
    if side.get("byte_order", "le") != "le":
        raise UnsupportedFormat("only little-endian raw payloads are supported")
    dims = [int(d) for d in side["dims"]]
    if len(dims) != 3:
        raise DimensionError(f"raw dims must have 3 entries, got {dims}")
    try:
        blob = Path(data_path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {data_path}: {exc}") from exc
    need = int(np.prod(dims)) * _NP_DTYPES[dtype].itemsize
    if len(blob) != need:
        raise SizeMismatch(f"{data_path}: {len(blob)} bytes, sidecar implies {need}")
    data = np.frombuffer(blob, dtype=_NP_DTYPES[dtype]).reshape(dims).astype(np.float64)
    if not np.isfinite(data).all():
        raise CorruptData(f"{data_path}: non-finite voxel values")
    return data, side


def read_raw(data_path, sidecar_path) -> VolumeBundle:
    """Read a raw payload described by a JSON sidecar.

    With ``"label": true`` the payload is a label grid; ``class_names`` in the
    sidecar lists the foreground structures (background is implicit), so a
    value equal to the number of listed structures is still valid.
    """
    data, side = read_raw_array(data_path, sidecar_path)
    spacing = side["spacing"]
    origin = side.get("origin", (0.0, 0.0, 0.0))
    if side.get("label", False):
        names = side.get("class_names") or list(CLASS_NAMES[1:])
        mask = LabelMask(data.astype(np.int64), spacing, origin, ("background", *names))
        image = Volume(data, spacing, origin, side["dtype"])
        return VolumeBundle(image, mask=mask, meta={"label_file": True})
    return VolumeBundle(Volume(data, spacing, origin, side["dtype"]))


def _sidecar(dims, spacing, origin, dtype, label, class_names=None) -> dict:
    out = {
        "dims": list(dims),
        "spacing": list(spacing),
        "origin": list(origin),
        "dtype": dtype,
        "byte_order": "le",
        "label": bool(label),
    }
    if class_names is not None:
        out["class_names"] = list(class_names)
    return out


def _write_raw_pair(data_path, sidecar_path, arr, side) -> None:
    dtype = side["dtype"]
    cast = np.asarray(arr).astype(_NP_DTYPES[dtype])
    try:
        Path(data_path).write_bytes(np.ascontiguousarray(cast).tobytes())
        Path(sidecar_path).write_text(json.dumps(side, indent=2))
    except OSError as exc:
        raise IoError(f"cannot write {data_path}: {exc}") from exc


def write_raw(bundle: VolumeBundle, data_path, sidecar_path) -> None:
    img = bundle.image
    if bundle.meta.get("label_file") and bundle.mask is not None:
        m = bundle.mask
        side = _sidecar(m.dims, m.spacing, m.origin, "u8", True, m.class_names[1:])
        _write_raw_pair(data_path, sidecar_path, m.labels, side)
        return
    side = _sidecar(img.dims, img.spacing, img.origin, img.dtype, False)
    _write_raw_pair(data_path, sidecar_path, img.data, side)
    data_path, sidecar_path = Path(data_path), Path(sidecar_path)
    for tag, m in (("mask", bundle.mask), ("bone", bundle.bone)):
        if m is None:
            continue
        side = _sidecar(m.dims, m.spacing, m.origin, "u8", True, m.class_names[1:])
        _write_raw_pair(_sibling(data_path, tag), _sibling(sidecar_path.with_suffix(""), tag).with_suffix(".json"), m.labels, side)


# --------------------------------------------------------------------------
# Field-of-view standardization
# --------------------------------------------------------------------------


def _axis_coords(n_in: int, s_in: float, fov: float, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous input indices of the output voxel centers along one axis.

    The output grid spans ``fov`` mm centered on the input extent. Returns the
    indices and a validity flag (inside the input's physical extent).
    """
    extent = n_in * s_in
    step = fov / n_out
    centers = extent / 2.0 - fov / 2.0 + (np.arange(n_out) + 0.5) * step
    idx = centers / s_in - 0.5
    snapped = np.round(idx)
    idx = np.where(np.abs(idx - snapped) < 1e-9, snapped, idx)
    valid = (idx >= -0.5 - 1e-9) & (idx <= n_in - 0.5 + 1e-9)
    return idx, valid


def _lerp_axis(data: np.ndarray, idx: np.ndarray, axis: int) -> np.ndarray:
    """Linear resampling along one axis at fractional indices (edge-clamped).

    Written as ``a + f * (b - a)`` so constant regions stay bit-exact.
    """
    n = data.shape[axis]
    x = np.clip(idx, 0.0, n - 1.0)
    i0 = np.floor(x).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    f = x - i0
    shape = [1] * data.ndim
    shape[axis] = len(idx)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    return a + f.reshape(shape) * (b - a)


def standardize_fov(bundle: VolumeBundle, target_fov_mm, target_dims) -> VolumeBundle:
    """Center-crop / zero-pad to a physical FoV, then resample onto ``target_dims``.

    Images are interpolated trilinearly, label grids by nearest neighbour.
    Output spacing is ``fov / dims`` per axis.
    """
    fov = _as_triple(target_fov_mm, "target_fov_mm")
    dims = tuple(int(d) for d in target_dims)
    if len(dims) != 3 or min(dims) < 1 or min(fov) <= 0:
        raise DimensionError(f"invalid FoV target {fov} / {dims}")
    img = bundle.image
    axes = [_axis_coords(n, s, f, m) for n, s, f, m in zip(img.dims, img.spacing, fov, dims)]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    valid = np.ones(dims, dtype=bool)
    for ax, (_, v) in enumerate(axes):
        shape = [1, 1, 1]
        shape[ax] = dims[ax]
        valid &= v.reshape(shape)

    data = img.data
    for ax, (idx, _) in enumerate(axes):
        data = _lerp_axis(data, idx, ax)
    data = np.where(valid, data, 0.0)

    spacing = tuple(f / m for f, m in zip(fov, dims))
    origin = tuple(o + a[0][0] * s for o, a, s in zip(img.origin, axes, img.spacing))
    out = VolumeBundle(Volume(data, spacing, origin, img.dtype), meta=dict(bundle.meta))

    def _nearest(m: LabelMask) -> LabelMask:
        idx = [np.clip(np.floor(g + 0.5).astype(np.int64), 0, n - 1) for g, n in zip(grids, m.dims)]
        lab = m.labels[idx[0], idx[1], idx[2]]
        lab = np.where(valid, lab, 0)
        return LabelMask(lab, spacing, origin, m.class_names)

    if bundle.mask is not None:
        out.mask = _nearest(bundle.mask)
    if bundle.bone is not None:
        out.bone = _nearest(bundle.bone)
    return out
