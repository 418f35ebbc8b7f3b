import struct

import numpy as np
import pytest


def nifti_bytes(data_xyz_order: bytes, dims_xyz, code: int, bitpix: int, pixdim=(1.0, 1.0, 1.0),
                slope: float = 0.0, inter: float = 0.0, magic: bytes = b"n+1\x00", ndim: int = 3) -> bytes:
    """Hand-packed single-file NIfTI-1, independent of the package writer."""
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, ndim, *dims_xyz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *pixdim, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, slope, inter)
    hdr[344:348] = magic
    return bytes(hdr) + b"\x00" * 4 + data_xyz_order


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def disk(shape, center, radius):
    rr, cc = np.mgrid[: shape[0], : shape[1]]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2


def brute_edt(mask: np.ndarray) -> np.ndarray:
    fg = np.asarray(mask, dtype=bool)
    bg = np.argwhere(~fg)
    out = np.zeros(fg.shape)
    if len(bg) == 0:
        out[:] = np.inf
        return out
    for r, c in np.argwhere(fg):
        out[r, c] = np.sqrt(((bg - (r, c)) ** 2).sum(axis=1).min())
    return out


def brute_nn(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    out = np.empty(len(src))
    for i, p in enumerate(src):
        d = p - dst
        out[i] = np.sqrt((d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]).min())
    return out
