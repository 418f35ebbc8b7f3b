"""Corpus of volumes on disk (or in memory) with a per-patient split."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DatasetError
from .phantom import split_ids
from .volume_io import VolumeBundle, read_nifti


class Corpus:
    def __init__(self, loaders: dict, train_ids, val_ids, root: Path | None = None):
        self._loaders = dict(loaders)
        self.train_ids = list(train_ids)
        self.val_ids = list(val_ids)
        self.root = root
        self._cache: dict[str, VolumeBundle] = {}
        unknown = set(self.train_ids + self.val_ids) - set(self._loaders)
        if unknown:
            raise DatasetError(f"split names unknown volume {sorted(unknown)[0]!r}")

    @property
    def ids(self) -> list[str]:
        return list(self._loaders)

    @classmethod
    def from_bundles(cls, bundles: dict[str, VolumeBundle], train_ids, val_ids) -> "Corpus":
        return cls({k: (lambda b=b: b) for k, b in bundles.items()}, train_ids, val_ids)

    @classmethod
    def from_dir(cls, path, split_seed: int = 0) -> "Corpus":
        """Read ``manifest.json`` if present, else pair every ``X.nii`` with ``X_mask.nii``."""
        root = Path(path)
        if not root.is_dir():
            raise DatasetError(f"corpus directory {root} does not exist")
        man = root / "manifest.json"
        if man.exists():
            try:
                entries = json.loads(man.read_text())["volumes"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetError(f"bad manifest {man}: {exc}") from exc
            loaders, split = {}, {}
            for e in entries:
                p = e["paths"]
                loaders[e["id"]] = lambda p=p: read_nifti(
                    root / p["image"], root / p["mask"], (root / p["bone"]) if p.get("bone") else None
                )
                split[e["id"]] = e.get("split", "train")
        else:
            stems = sorted(
                f.stem for f in root.glob("*.nii") if not f.stem.endswith(("_mask", "_bone")) and (root / f"{f.stem}_mask.nii").exists()
            )
            loaders = {s: (lambda s=s: read_nifti(root / f"{s}.nii")) for s in stems}
            split = split_ids(stems, split_seed)
        train = [k for k in loaders if split[k] == "train"]
        val = [k for k in loaders if split[k] == "val"]
        return cls(loaders, train, val, root)

    def load(self, vid: str) -> VolumeBundle:
        if vid not in self._cache:
            try:
                self._cache[vid] = self._loaders[vid]()
            except KeyError:
                raise DatasetError(f"unknown volume {vid!r}") from None
            except DatasetError:
                raise
            except Exception as exc:
                raise DatasetError(f"loading volume {vid!r} failed: {exc}") from exc
        return self._cache[vid]
