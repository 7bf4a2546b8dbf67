"""Checkpoint files: ``manifest.json`` plus ``params.bin``.

The blob is the concatenation of every tensor in manifest order, row-major,
little-endian float64. The manifest is written with sorted keys and no
timestamps so identical runs give identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seqnet import TENSOR_ORDER, ModelParams

MANIFEST = "manifest.json"
BLOB = "params.bin"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    manifest: dict

    @property
    def strategy(self) -> str:
        return self.manifest["strategy"]["name"]

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(self.manifest["letters"])

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(self.manifest["groups"])

    @property
    def catalog(self) -> tuple[str, ...]:
        return tuple(self.manifest["catalog"])

    @property
    def feature_mode(self) -> str:
        return self.manifest["feature_mode"]

    def to_bytes(self) -> tuple[bytes, bytes]:
        manifest = dict(self.manifest)
        manifest["format_version"] = FORMAT_VERSION
        manifest["tensors"] = [
            {"name": name, "shape": list(getattr(self.params, name).shape)} for name in TENSOR_ORDER
        ]
        text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        blob = b"".join(
            np.ascontiguousarray(getattr(self.params, name), dtype="<f8").tobytes() for name in TENSOR_ORDER
        )
        return text.encode("utf-8"), blob

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        text, blob = self.to_bytes()
        (path / MANIFEST).write_bytes(text)
        (path / BLOB).write_bytes(blob)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        try:
            manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
            blob = (path / BLOB).read_bytes()
        except FileNotFoundError as exc:
            raise CheckpointError(f"checkpoint file missing: {exc.filename}") from None
        flat = np.frombuffer(blob, dtype="<f8")
        tensors = {}
        offset = 0
        specs = manifest.get("tensors", [])
        if [s["name"] for s in specs] != list(TENSOR_ORDER):
            raise CheckpointError(f"unexpected tensor order in {path / MANIFEST}")
        for spec in specs:
            shape = tuple(spec["shape"])
            size = int(np.prod(shape))
            if offset + size > flat.size:
                raise CheckpointError(f"blob too short for tensor {spec['name']}")
            tensors[spec["name"]] = flat[offset : offset + size].reshape(shape).astype(np.float64)
            offset += size
        if offset != flat.size:
            raise CheckpointError("blob has trailing data")
        params = ModelParams(**tensors)
        dims = manifest["dims"]
        expected = _expected_shapes(dims)
        for name, arr in params.tensors():
            if arr.shape != expected[name]:
                raise CheckpointError(f"tensor {name} has shape {arr.shape}, manifest dims imply {expected[name]}")
        manifest = {k: v for k, v in manifest.items() if k not in ("tensors", "format_version")}
        return cls(params, manifest)


def _expected_shapes(dims: dict) -> dict[str, tuple[int, ...]]:
    from .seqnet import ModelDims

    return ModelDims(**dims).shapes()
