"""Run manifests and binary field dumps."""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import asdict, dataclass, field
from importlib import metadata

import numpy as np

from .nls import Field, Grid2D

__all__ = ["RunManifest", "file_digest", "code_version", "write_field", "read_field", "manifest_path"]


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__
        return __version__


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out) -> str:
    return f"{out}.manifest.json"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


@dataclass
class RunManifest:
    """Everything needed to rerun a command and check its files."""

    command: str
    params: dict
    code_version: str = field(default_factory=code_version)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0
    results: dict = field(default_factory=dict)
    python: str = field(default_factory=platform.python_version)

    def add_input(self, path):
        self.inputs[os.fspath(path)] = file_digest(path)

    def add_output(self, path):
        self.outputs[os.fspath(path)] = file_digest(path)

    def verify(self) -> dict:
        """Map each recorded file to whether its digest still matches."""
        out = {}
        for p, d in {**self.inputs, **self.outputs}.items():
            out[p] = os.path.exists(p) and file_digest(p) == d
        return out

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips float64 exactly
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls.from_json(fh.read())


def write_field(path, f: Field, meta: dict | None = None) -> str:
    """Raw little-endian float64 (re, im) pairs, row-major, plus a JSON header sidecar."""
    data = np.empty(f.samples.shape + (2,), dtype="<f8")
    data[..., 0] = f.samples.real
    data[..., 1] = f.samples.imag
    with open(path, "wb") as fh:
        fh.write(data.tobytes(order="C"))
    header = {
        "N": f.grid.N,
        "L": f.grid.L,
        "dtype": "<f8",
        "layout": "row-major, interleaved re/im",
        "shape": [f.grid.N, f.grid.N, 2],
        "meta": _jsonable({**f.meta, **(meta or {})}),
    }
    side = f"{path}.json"
    with open(side, "w") as fh:
        json.dump(header, fh, indent=2)
    return side


def read_field(path) -> Field:
    with open(f"{path}.json") as fh:
        header = json.load(fh)
    grid = Grid2D(float(header["L"]), int(header["N"]))
    raw = np.fromfile(path, dtype="<f8").reshape(grid.N, grid.N, 2)
    return Field(grid, raw[..., 0] + 1j * raw[..., 1], dict(header.get("meta", {})))
