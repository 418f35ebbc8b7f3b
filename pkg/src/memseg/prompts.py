"""Simulated click prompts: first click, error-map corrections, sessions.

Distances used for click placement treat the region outside the slice as
background, so a structure touching the image border still has a finite
distance to its boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import Converged, DimensionError, EmptyStructure

POSITIVE = "pos"
NEGATIVE = "neg"

FIRST_CLICK_PERCENTILE = 70.0


@dataclass(frozen=True)
class ClickPrompt:
    slice: int
    row: int
    col: int
    polarity: str
    class_id: int
    iteration: int = 0

    @property
    def positive(self) -> bool:
        return self.polarity == POSITIVE

    def to_json(self) -> str:
        return json.dumps(
            {
                "slice": self.slice,
                "row": self.row,
                "col": self.col,
                "polarity": self.polarity,
                "class": self.class_id,
                "iter": self.iteration,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "ClickPrompt":
        d = json.loads(line)
        if d["polarity"] not in (POSITIVE, NEGATIVE):
            raise ValueError(f"bad polarity {d['polarity']!r}")
        return cls(int(d["slice"]), int(d["row"]), int(d["col"]), d["polarity"], int(d["class"]), int(d["iter"]))


def write_clicks(clicks: Iterable[ClickPrompt], path) -> None:
    with open(path, "w") as fh:
        for c in clicks:
            fh.write(c.to_json() + "\n")


def read_clicks(path) -> list[ClickPrompt]:
    with open(path) as fh:
        return [ClickPrompt.from_json(line) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# Euclidean distance transform
# --------------------------------------------------------------------------


def edt2d(mask) -> np.ndarray:
    """Exact Euclidean distance (pixels) from each foreground pixel to the
    nearest background pixel; 0 on background, ``inf`` if there is no
    background at all."""
    fg = np.asarray(mask, dtype=bool)
    if fg.ndim != 2:
        raise DimensionError(f"edt2d expects a 2D mask, got shape {fg.shape}")
    if fg.size == 0:
        return np.zeros(fg.shape)
    if fg.all():
        return np.full(fg.shape, np.inf)
    return ndimage.distance_transform_edt(fg)


def boundary_distance(mask) -> np.ndarray:
    """EDT with everything outside the slice counted as background."""
    fg = np.asarray(mask, dtype=bool)
    padded = np.pad(fg, 1, constant_values=False)
    return edt2d(padded)[1:-1, 1:-1]


# --------------------------------------------------------------------------
# Clicks
# --------------------------------------------------------------------------


def first_click_candidates(rs_slice_mask) -> tuple[np.ndarray, np.ndarray]:
    """Eligible first-click pixels (top 30% of boundary distances) and the distances."""
    fg = np.asarray(rs_slice_mask, dtype=bool)
    if not fg.any():
        raise EmptyStructure("reference mask is empty on this slice")
    d = boundary_distance(fg)
    q = np.percentile(d[fg], FIRST_CLICK_PERCENTILE)
    return fg & (d >= q), d


def first_click(
    rs_slice_mask,
    class_id: int,
    rng_seed: int = 0,
    slice_index: int = 0,
    deterministic: bool = False,
) -> ClickPrompt:
    """Positive click near the structure's interior.

    Drawn uniformly from pixels whose boundary distance is at or above the
    70th percentile of in-mask distances. ``deterministic=True`` returns the
    deepest pixel instead (smallest ``(row, col)`` on ties), which always
    belongs to the same eligible set.
    """
    eligible, d = first_click_candidates(rs_slice_mask)
    if deterministic:
        flat = int(np.argmax(np.where(eligible, d, -1.0)))
        r, c = divmod(flat, d.shape[1])
    else:
        rows, cols = np.nonzero(eligible)
        k = int(np.random.default_rng(rng_seed).integers(len(rows)))
        r, c = int(rows[k]), int(cols[k])
    return ClickPrompt(int(slice_index), int(r), int(c), POSITIVE, int(class_id), 0)


def error_map(pred_slice_mask, rs_slice_mask) -> np.ndarray:
    p = np.asarray(pred_slice_mask, dtype=bool)
    r = np.asarray(rs_slice_mask, dtype=bool)
    if p.shape != r.shape:
        raise DimensionError(f"prediction {p.shape} and reference {r.shape} differ")
    return p ^ r


def next_click(pred_slice_mask, rs_slice_mask, class_id: int, iteration: int, slice_index: int = 0) -> ClickPrompt:
    """Corrective click at the interior-most pixel of the error region.

    Positive if the pixel is a false negative (inside the reference), negative
    if it is a false positive. Raises :class:`Converged` when there is no error.
    """
    err = error_map(pred_slice_mask, rs_slice_mask)
    if not err.any():
        raise Converged()
    d = boundary_distance(err)
    flat = int(np.argmax(d))  # first maximum in row-major order
    r, c = divmod(flat, err.shape[1])
    inside = bool(np.asarray(rs_slice_mask, dtype=bool)[r, c])
    return ClickPrompt(int(slice_index), int(r), int(c), POSITIVE if inside else NEGATIVE, int(class_id), int(iteration))


Segmenter = Callable[[np.ndarray, Sequence[ClickPrompt]], np.ndarray]


def simulate_session(
    segmenter: Segmenter,
    image_slice,
    rs_slice_mask,
    class_id: int,
    max_iters: int = 8,
    rng_seed: int = 0,
    slice_index: int = 0,
    deterministic: bool = False,
) -> tuple[list[ClickPrompt], np.ndarray]:
    """Run the click/predict loop on one slice for one structure.

    ``segmenter(image_slice, clicks)`` returns a binary prediction; it always
    receives every click issued so far.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rs = np.asarray(rs_slice_mask, dtype=bool)
    clicks = [first_click(rs, class_id, rng_seed, slice_index, deterministic)]
    pred = np.asarray(segmenter(image_slice, list(clicks)), dtype=bool)
    while len(clicks) < max_iters:
        try:
            click = next_click(pred, rs, class_id, len(clicks), slice_index)
        except Converged:
            break
        clicks.append(click)
        pred = np.asarray(segmenter(image_slice, list(clicks)), dtype=bool)
    return clicks, pred

