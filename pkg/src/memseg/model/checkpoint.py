"""Binary checkpoint container.

Layout: ``b"MSEGCKPT"``, ``u32`` version, ``u64`` header length, UTF-8 JSON
header, then little-endian float32 tensors back to back. The header holds the
model config, scalar training state and a table of
``name -> {shape, offset}`` (offsets relative to the payload start).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigMismatch, CorruptData, IoError
from .network import MemSegModel, ModelConfig
from .optim import AdamState

MAGIC = b"MSEGCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    moments_m: dict[str, np.ndarray] = field(default_factory=dict)
    moments_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0
    epoch: int = 0
    best_dsc: float = float("nan")
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: MemSegModel, state: AdamState | None = None, **kw) -> "Checkpoint":
        names = [n for n, _ in model.named_parameters()]
        params = {n: p.detach().cpu().numpy().astype(np.float32) for n, p in model.named_parameters()}
        m, v, step = {}, {}, 0
        if state is not None and state.m:
            m = {n: t.detach().cpu().numpy().astype(np.float32) for n, t in zip(names, state.m)}
            v = {n: t.detach().cpu().numpy().astype(np.float32) for n, t in zip(names, state.v)}
            step = state.step
        return cls(model.config, params, m, v, step, **kw)

    def build_model(self) -> MemSegModel:
        model = MemSegModel(self.config)
        expected = {n: tuple(p.shape) for n, p in model.named_parameters()}
        got = {n: tuple(a.shape) for n, a in self.params.items()}
        if expected != got:
            missing = sorted(set(expected) ^ set(got)) or sorted(n for n in expected if expected[n] != got[n])
            raise ConfigMismatch(f"checkpoint parameters do not match architecture (first difference: {missing[0]})")
        with torch.no_grad():
            for n, p in model.named_parameters():
                p.copy_(torch.from_numpy(self.params[n].astype(np.float32)))
        return model

    def adam_state(self, model: MemSegModel) -> AdamState:
        if not self.moments_m:
            return AdamState()
        names = [n for n, _ in model.named_parameters()]
        return AdamState(
            self.adam_step,
            [torch.from_numpy(self.moments_m[n].copy()) for n in names],
            [torch.from_numpy(self.moments_v[n].copy()) for n in names],
        )

    # -------------------------------------------------------------- file I/O
    def to_bytes(self) -> bytes:
        table, blobs, offset = [], [], 0
        for group, tensors in (("param", self.params), ("adam_m", self.moments_m), ("adam_v", self.moments_v)):
            for name, arr in tensors.items():
                raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
                table.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
                blobs.append(raw)
                offset += len(raw)
        header = {
            "config": self.config.to_dict(),
            "adam_step": self.adam_step,
            "epoch": self.epoch,
            "best_dsc": None if np.isnan(self.best_dsc) else self.best_dsc,
            "meta": self.meta,
            "tensors": table,
        }
        hb = json.dumps(header, sort_keys=True).encode()
        return MAGIC + struct.pack("<IQ", VERSION, len(hb)) + hb + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < 20 or data[:8] != MAGIC:
            raise CorruptData("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack("<IQ", data[8:20])
        if version != VERSION:
            raise CorruptData(f"unsupported checkpoint version {version}")
        try:
            header = json.loads(data[20 : 20 + hlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptData(f"checkpoint header unreadable: {exc}") from exc
        payload = memoryview(data)[20 + hlen :]
        groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for t in header["tensors"]:
            n = int(np.prod(t["shape"], dtype=np.int64))
            start, stop = t["offset"], t["offset"] + 4 * n
            if stop > len(payload):
                raise CorruptData(f"checkpoint truncated inside tensor {t['name']}")
            arr = np.frombuffer(payload[start:stop], dtype="<f4").reshape(t["shape"]).astype(np.float32)
            groups[t["group"]][t["name"]] = arr
        best = header.get("best_dsc")
        return cls(
            ModelConfig.from_dict(header["config"]),
            groups["param"],
            groups["adam_m"],
            groups["adam_v"],
            int(header["adam_step"]),
            int(header["epoch"]),
            float("nan") if best is None else float(best),
            header.get("meta", {}),
        )

    def save(self, path) -> None:
        try:
            Path(path).write_bytes(self.to_bytes())
        except OSError as exc:
            raise IoError(f"cannot write checkpoint {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_bytes(data)
