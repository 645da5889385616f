"""Binary checkpoint container.

Layout (all little-endian)::

    b"WMLM" | u32 version | u64 metadata length | UTF-8 JSON metadata | tensor data

The metadata holds the model and training configs, the constraint in its text
form, the tokenizer hash, the step count and a tensor directory
(name, shape, byte offset into the data block). Tensors are stored as raw
float32.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .model import ModelConfig, TransformerLM

MAGIC = b"WMLM"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    tensors: dict[str, np.ndarray]
    train_config: dict = field(default_factory=dict)
    tokenizer_sha256: str = ""
    tokenizer_path: str = ""
    step: int = 0
    moments: dict[str, np.ndarray] = field(default_factory=dict)

    def build_model(self, dtype=torch.float32) -> TransformerLM:
        model = TransformerLM(self.model_config, seed=None)
        state = model.state_dict()
        missing = sorted(set(state) - set(self.tensors))
        extra = sorted(set(self.tensors) - set(state))
        if missing or extra:
            raise FormatError(f"checkpoint tensors do not match the model: missing {missing}, unexpected {extra}")
        with torch.no_grad():
            for name, p in model.named_parameters():
                p.copy_(torch.from_numpy(self.tensors[name].copy()))
        return model.to(dtype).eval()


def model_tensors(model: TransformerLM) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().to(torch.float32).numpy().copy() for name, p in model.named_parameters()}


def save_checkpoint(path, model: TransformerLM, *, train_config: dict | None = None, step: int = 0,
                    tokenizer_sha256: str = "", tokenizer_path: str = "",
                    moments: dict[str, np.ndarray] | None = None) -> None:
    """Write atomically: the previous file at ``path`` survives a failed write."""
    tensors = model_tensors(model)
    for name, arr in (moments or {}).items():
        tensors["optim." + name] = np.asarray(arr, dtype=np.float32)

    directory, offset, blobs = [], 0, []
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    meta = {
        "model_config": model.config.to_dict(),
        "constraint": str(model.config.constraint),
        "train_config": train_config or {},
        "tokenizer_sha256": tokenizer_sha256,
        "tokenizer_path": tokenizer_path,
        "step": int(step),
        "dtype": "float32-le",
        "tensors": directory,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _HEADER.size
    try:
        meta = json.loads(raw[start:start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata ({exc})") from None
    data = memoryview(raw)[start + meta_len:]

    tensors, moments = {}, {}
    for entry in meta["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if entry["nbytes"] != 4 * n or entry["offset"] + entry["nbytes"] > len(data):
            raise FormatError(f"{path}: tensor {entry['name']} is truncated or inconsistent")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=entry["offset"]).reshape(entry["shape"])
        arr = arr.astype(np.float32)
        if entry["name"].startswith("optim."):
            moments[entry["name"][len("optim."):]] = arr
        else:
            tensors[entry["name"]] = arr
    return Checkpoint(
        model_config=ModelConfig.from_dict(meta["model_config"]),
        tensors=tensors,
        train_config=meta.get("train_config", {}),
        tokenizer_sha256=meta.get("tokenizer_sha256", ""),
        tokenizer_path=meta.get("tokenizer_path", ""),
        step=meta.get("step", 0),
        moments=moments,
    )
