"""DCM1 model files.

Layout (all integers little-endian)::

    bytes 0-3    magic b"DCM1"
    bytes 4-7    uint32 format version
    bytes 8-11   uint32 header length H
    12 .. 12+H   UTF-8 JSON header: manifest, model structure, config snapshot
    rest         payload of little-endian float32 values

Manifest entries give ``name``, ``shape`` and the byte ``offset`` of each
parameter inside the payload.  Training runs in float64; the payload is
float32, so a load reproduces parameters to float32 precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write
from .errors import FormatError
from .featurenet import FeatureNet, LayerSpec, build
from .heads import CategorizationHead

MAGIC = b"DCM1"
VERSION = 1
SUPPORTED_VERSIONS = (1,)
_PREFIX = struct.Struct("<4sII")


@dataclass
class ModelContainer:
    arrays: dict
    model: dict
    config: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, net: FeatureNet, head: CategorizationHead, config: dict | None = None):
        arrays = {p.name: p.data.astype("<f4") for p in net.parameters() + head.parameters()}
        model = {
            "input_shape": list(net.input_shape) if net.input_shape is not None else None,
            "layers": net.layer_dicts(),
            "head": head.config(),
        }
        return cls(arrays, model, dict(config or {}))

    def build(self):
        """Reconstruct ``(net, head)`` with float64 parameters."""
        layers = [LayerSpec.from_dict(d) for d in self.model["layers"]]
        input_shape = self.model["input_shape"]
        net = build(layers, 0, input_shape=input_shape) if layers else FeatureNet.identity(input_shape)
        head = CategorizationHead.from_config(self.model["head"])
        targets = {**net.params, **head.params}
        if set(targets) != set(self.arrays):
            raise FormatError(f"manifest names {sorted(self.arrays)} do not match model parameters {sorted(targets)}")
        for name, param in targets.items():
            value = self.arrays[name].astype(np.float64)
            if value.shape != param.shape:
                raise FormatError(f"parameter {name} has shape {value.shape}, model expects {param.shape}")
            param.data = value
        return net, head

    def to_bytes(self) -> bytes:
        manifest, chunks, offset = [], [], 0
        for name, arr in self.arrays.items():
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        header = {"manifest": manifest, "model": self.model, "config": self.config}
        return encode(header, b"".join(chunks), self.version)


def encode(header: dict, payload: bytes, version: int = VERSION) -> bytes:
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, version, len(text)) + text + payload


def decode(raw: bytes) -> ModelContainer:
    if len(raw) < _PREFIX.size:
        raise FormatError("file shorter than the fixed prefix", offset=len(raw))
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version not in SUPPORTED_VERSIONS:
        raise FormatError(f"unsupported format version {version}; supported versions: {list(SUPPORTED_VERSIONS)}", offset=4)
    start = _PREFIX.size
    if start + header_len > len(raw):
        raise FormatError(f"header length {header_len} runs past end of file", offset=8)
    try:
        header = json.loads(raw[start : start + header_len].decode("utf-8"))
        manifest = header["manifest"]
        model = header["model"]
        config = header.get("config", {})
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=start) from None

    payload = raw[start + header_len :]
    names = [entry.get("name") for entry in manifest]
    if len(set(names)) != len(names):
        raise FormatError("parameter names in manifest are not unique")
    spans = []
    arrays = {}
    for entry in manifest:
        try:
            name, shape, offset = entry["name"], tuple(int(s) for s in entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"malformed manifest entry {entry!r}") from None
        nbytes = 4 * int(np.prod(shape))
        if offset < 0 or offset + nbytes > len(payload):
            raise FormatError(f"parameter {name} spans bytes {offset}..{offset + nbytes}, outside payload of {len(payload)} bytes")
        spans.append((offset, offset + nbytes, name))
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
    spans.sort()
    for (_, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise FormatError(f"manifest offsets overlap: {n0} and {n1}")
    return ModelContainer(arrays, model, config, version)


def save_model(path, net, head, config: dict | None = None):
    atomic_write(path, ModelContainer.from_model(net, head, config).to_bytes())


def load_model(path) -> ModelContainer:
    with open(path, "rb") as fh:
        return decode(fh.read())
