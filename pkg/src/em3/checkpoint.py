"""Versioned binary checkpoints for ``EM3Model`` plus its Adam state.

Layout (little-endian)::

    magic    b"EM3CKPT\\0"
    u32      format version
    u64      header length, then that many bytes of UTF-8 JSON
    f8[...]  tensor payloads, back to back, in header order
    u32      crc32 of everything above

The JSON header carries the model config, the constructor arguments, the
adapter / frozen-content state, one record per tensor (name, role, shape,
frozen flag) and free-form metadata.  Adam step counts live in the header,
the first and second moments are stored as tensors.  Keys are written
sorted, so saving a loaded checkpoint reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cache import _atomic_write, _seal, _unseal
from .encoders import EncoderDims
from .exceptions import CorruptFileError
from .model import EM3Model, ModelConfig
from .nn import Adam

CHECKPOINT_MAGIC = b"EM3CKPT\0"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    model: EM3Model
    optimizer: Adam | None = None
    meta: dict = field(default_factory=dict)


def _tensors(model: EM3Model, optimizer: Adam | None):
    for name, p in model.named_parameters():
        yield {"name": name, "role": "param", "shape": list(p.shape), "frozen": bool(p.frozen)}, p.data
    if model.frozen_content is not None:
        t = model.frozen_content
        yield {"name": "frozen_content", "role": "table", "shape": list(t.shape), "frozen": True}, t
    if optimizer is not None:
        for name, _ in optimizer.params:
            for role, store in (("adam_m", optimizer.m), ("adam_v", optimizer.v)):
                arr = store[name]
                yield {"name": name, "role": role, "shape": list(arr.shape), "frozen": False}, arr


def save_checkpoint(path, model: EM3Model, optimizer: Adam | None = None, meta: dict | None = None) -> None:
    records, payload = [], bytearray()
    for rec, arr in _tensors(model, optimizer):
        records.append(rec)
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    header = {
        "config": model.config.to_dict(),
        "init_args": model.init_args,
        "lora_attached": bool(model.lora_attached),
        "tensors": records,
        "optimizer": None if optimizer is None else {
            "lr": optimizer.lr, "betas": [optimizer.beta1, optimizer.beta2], "eps": optimizer.eps,
            "params": [n for n, _ in optimizer.params], "t": optimizer.t},
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head)) + head + bytes(payload)
    _atomic_write(path, _seal(body))


def read_header(path) -> dict:
    buf = _unseal(Path(path).read_bytes(), CHECKPOINT_MAGIC)
    (n,) = struct.unpack("<Q", buf.read(8))
    return json.loads(buf.read(n).decode("utf-8"))


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    buf = _unseal(blob, CHECKPOINT_MAGIC)
    (n,) = struct.unpack("<Q", buf.read(8))
    header = json.loads(buf.read(n).decode("utf-8"))
    args = dict(header["init_args"])
    raw = EncoderDims(raw_visual=args.pop("raw_visual"), raw_text=args.pop("raw_text"))
    model = EM3Model(ModelConfig.from_dict(header["config"]), raw_dims=raw, **args)
    if header["lora_attached"]:
        model.attach_lora()
    params = dict(model.named_parameters())

    arrays = {}
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        chunk = buf.read(nbytes)
        if len(chunk) != nbytes:
            raise CorruptFileError(f"truncated tensor {rec['name']!r}")
        arrays[(rec["role"], rec["name"])] = (rec, np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape))
    if buf.read(1):
        raise CorruptFileError("trailing bytes after the last tensor")

    for name, p in params.items():
        if ("param", name) not in arrays:
            raise CorruptFileError(f"checkpoint lacks parameter {name!r}")
        rec, arr = arrays[("param", name)]
        if arr.shape != p.shape:
            raise CorruptFileError(f"{name}: stored shape {arr.shape} != model shape {p.shape}")
        p.data = arr
        p.frozen = rec["frozen"]
    if ("table", "frozen_content") in arrays:
        object.__setattr__(model, "frozen_content", arrays[("table", "frozen_content")][1])

    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = Adam([(n, params[n]) for n in o["params"]], lr=o["lr"], betas=tuple(o["betas"]), eps=o["eps"])
        for name in o["params"]:
            opt.t[name] = int(o["t"][name])
            opt.m[name] = arrays[("adam_m", name)][1]
            opt.v[name] = arrays[("adam_v", name)][1]
    return Checkpoint(model, opt, header["meta"])
