"""Byte-deterministic tensor container and the model bundle built on it.

Layout: ``b"SATC"``, a uint32 format version, a uint64 header length, a
UTF-8 JSON header (sorted keys) and then the raw little-endian arrays back
to back. The same arrays and metadata always produce the same bytes, which
makes file hashes usable as provenance.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .acoustic_codec import AcousticCodec
from .arvc import ARVC
from .config import ModelConfig
from .content_encoder import ContentEncoder
from .speaker import SpeakerEmbedder

_MAGIC = b"SATC"
_VERSION = 1
SECTIONS = ("content_encoder", "acoustic_codec", "arvc", "speaker")


class CheckpointError(ValueError):
    pass


def write_tensors(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False) if a.dtype.byteorder == ">" else a
        raw = np.ascontiguousarray(a).tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<IQ", _VERSION, len(header)) + header)
        for b in blobs:
            f.write(b)


def read_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a tensor container")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[16:16 + hlen])
    base = 16 + hlen
    arrays = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def file_hash(path: str | Path) -> str:
    return hashlib.blake2b(Path(path).read_bytes(), digest_size=16).hexdigest()


@dataclass
class Models:
    config: ModelConfig
    content_encoder: ContentEncoder
    codec: AcousticCodec
    arvc: ARVC
    embedder: SpeakerEmbedder

    @classmethod
    def build(cls, config: ModelConfig | None = None, seed: int = 0) -> "Models":
        """Freshly initialized models (deterministic in ``seed``)."""
        config = config or ModelConfig()
        config.validate()
        torch.manual_seed(seed)
        m = cls(config,
                ContentEncoder(config.content_encoder, config.frontend),
                AcousticCodec(config.acoustic_codec),
                ARVC(config.arvc),
                SpeakerEmbedder(config.speaker, config.frontend))
        m.eval()
        return m

    def eval(self) -> None:
        for mod in (self.content_encoder, self.codec, self.arvc):
            mod.eval()

    def modules(self) -> dict:
        return {"content_encoder": self.content_encoder, "acoustic_codec": self.codec, "arvc": self.arvc}


def save_models(path: str | Path, models: Models, meta: dict | None = None) -> str:
    """Write all sections to one container; returns the file hash."""
    arrays = {}
    for section, mod in models.modules().items():
        for k, v in mod.state_dict().items():
            arrays[f"{section}/{k}"] = v.detach().cpu().numpy()
    arrays["speaker/projection"] = models.embedder.projection
    write_tensors(path, arrays, {"config": models.config.to_dict(), "sections": list(SECTIONS), **(meta or {})})
    return file_hash(path)


def load_models(path: str | Path) -> Models:
    arrays, meta = read_tensors(path)
    if "config" not in meta:
        raise CheckpointError(f"{path}: checkpoint has no config")
    missing = [s for s in SECTIONS if not any(k.startswith(s + "/") for k in arrays)]
    if missing:
        raise CheckpointError(f"{path}: missing sections {missing}")
    models = Models.build(ModelConfig.from_dict(meta["config"]))
    for section, mod in models.modules().items():
        prefix = section + "/"
        state = {k[len(prefix):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}
        mod.load_state_dict(state, strict=True)
    models.embedder = SpeakerEmbedder(models.config.speaker, models.config.frontend, arrays["speaker/projection"])
    models.eval()
    return models
