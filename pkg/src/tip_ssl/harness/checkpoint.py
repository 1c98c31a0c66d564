"""Versioned binary container for named float32 tensors.

Layout (all integers little-endian)::

    b"TIPCKPT1"            magic
    u32                    format version
    32 bytes               sha256 digest of the config text
    u32 + bytes            UTF-8 JSON metadata (config text, schema, optimizer scalars)
    u32                    entry count
    per entry:  u16 name length, name, u8 dtype code (1 = f32), u8 ndim,
                ndim x u32 shape, u64 byte offset into the payload
    payload                concatenated little-endian float32 data

Parameters are stored under their slot names (``tab.embed.A``,
``interact.0.cross.Wq``, ...); Adam moments under ``opt.m.<slot>`` and
``opt.v.<slot>``.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TIPCKPT1"
VERSION = 1
_F32 = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config_text: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.config_text.encode("utf-8")).hexdigest()

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", VERSION))
        buf.write(bytes.fromhex(self.digest))
        meta = json.dumps({"config": self.config_text, **self.meta}, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(meta)))
        buf.write(meta)
        buf.write(struct.pack("<I", len(self.tensors)))
        offset = 0
        blobs = []
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<BB", _F32, arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(struct.pack("<Q", offset))
            blob = arr.tobytes()
            blobs.append(blob)
            offset += len(blob)
        for blob in blobs:
            buf.write(blob)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError("truncated checkpoint")
            out = view[pos : pos + n]
            pos += n
            return out

        if bytes(take(8)) != MAGIC:
            raise CheckpointError("not a TIP checkpoint (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = bytes(take(32)).hex()
        (mlen,) = struct.unpack("<I", take(4))
        meta = json.loads(bytes(take(mlen)).decode("utf-8"))
        config_text = meta.pop("config", "")
        if hashlib.sha256(config_text.encode("utf-8")).hexdigest() != digest:
            raise CheckpointError("config digest mismatch")
        (count,) = struct.unpack("<I", take(4))
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2))
            name = bytes(take(nlen)).decode("utf-8")
            dtype, ndim = struct.unpack("<BB", take(2))
            if dtype != _F32:
                raise CheckpointError(f"entry {name!r}: unsupported dtype code {dtype}")
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            (offset,) = struct.unpack("<Q", take(8))
            entries.append((name, shape, offset))
        payload = view[pos:]
        tensors = {}
        for name, shape, offset in entries:
            if name in tensors:
                raise CheckpointError(f"duplicate slot {name!r}")
            n = int(np.prod(shape)) * 4
            if offset + n > len(payload):
                raise CheckpointError(f"entry {name!r} runs past the payload")
            tensors[name] = np.frombuffer(payload[offset : offset + n], dtype="<f4").reshape(shape).astype(np.float32)
        return cls(tensors, config_text, meta)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


# -- model <-> checkpoint ---------------------------------------------------------


def checkpoint_from_model(model, run_cfg, optimizer=None, meta: dict | None = None) -> Checkpoint:
    """Parameters (and optionally Adam moments) of ``model`` under ``run_cfg``."""
    tensors = {name: p.data for name, p in model.params.items()}
    info = {"schema": json.loads(model.schema.to_json())}
    if optimizer is not None:
        for name, arr in optimizer.m.items():
            tensors[f"opt.m.{name}"] = arr
        for name, arr in optimizer.v.items():
            tensors[f"opt.v.{name}"] = arr
        info["optimizer"] = {"step": optimizer.step, "lr": optimizer.lr, "betas": list(optimizer.betas),
                             "eps": optimizer.eps, "weight_decay": optimizer.weight_decay}
    info.update(meta or {})
    return Checkpoint(tensors, run_cfg.to_text(), info)


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild ``(model, run_cfg, optimizer or None)``; every model slot must be present."""
    from ..data import TabularSchema
    from ..model import TIPModel, init_params
    from ..numeric import OptimizerState, Tensor
    from ..params import ParamStore
    from .config import parse_config

    run_cfg = parse_config(ckpt.config_text)
    if "schema" not in ckpt.meta:
        raise CheckpointError("checkpoint carries no tabular schema")
    schema = TabularSchema.from_json(json.dumps(ckpt.meta["schema"]))
    expected = init_params(run_cfg.model, schema, seed=0)
    missing = [k for k in expected if k not in ckpt.tensors]
    if missing:
        raise CheckpointError(f"checkpoint lacks slots {missing[:5]}")
    store = ParamStore(seed=run_cfg.pretrain.seed)
    for name, arr in ckpt.tensors.items():
        if name.startswith("opt."):
            continue
        if name in expected and expected[name].shape != arr.shape:
            raise CheckpointError(f"slot {name!r} has shape {arr.shape}, expected {expected[name].shape}")
        store[name] = Tensor(arr.copy(), requires_grad=True, name=name)
    model = TIPModel(run_cfg.model, schema, params=store)
    opt = None
    if "optimizer" in ckpt.meta:
        o = ckpt.meta["optimizer"]
        opt = OptimizerState(lr=o["lr"], betas=tuple(o["betas"]), eps=o["eps"],
                             weight_decay=o["weight_decay"], step=o["step"])
        for name, arr in ckpt.tensors.items():
            if name.startswith("opt.m."):
                opt.m[name[6:]] = arr.copy()
            elif name.startswith("opt.v."):
                opt.v[name[6:]] = arr.copy()
    return model, run_cfg, opt
