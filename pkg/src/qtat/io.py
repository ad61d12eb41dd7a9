"""Serialization of media, fields and illuminations.

Every array object is a sidecar-JSON file plus raw little-endian float64
binaries (complex data interleaved re/im, C order).  Directories group the
pieces of one object; manifests list artifacts with sha256 checksums.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .version import SCHEMA_VERSION
from .forward import FACES, BoundaryIllumination, InternalData, VectorField
from .medium import Grid, Medium

_FACE_NAMES = {(0, 0): "-x", (0, 1): "+x", (1, 0): "-y", (1, 1): "+y",
               (2, 0): "-z", (2, 1): "+z"}
_FACE_BY_NAME = {v: k for k, v in _FACE_NAMES.items()}


def _write_bin(path: Path, arr: np.ndarray) -> None:
    if np.iscomplexobj(arr):
        arr = np.ascontiguousarray(arr, dtype="<c16")
    else:
        arr = np.ascontiguousarray(arr, dtype="<f8")
    path.write_bytes(arr.tobytes())


def _read_bin(path: Path, shape, dtype) -> np.ndarray:
    raw = np.frombuffer(path.read_bytes(), dtype="<c16" if dtype == "c128" else "<f8")
    return raw.reshape(shape).copy()


def _grid_meta(grid: Grid) -> dict:
    return {"dims": list(grid.dims), "spacing": grid.spacing,
            "origin": list(grid.origin)}


def _grid_from_meta(meta: dict) -> Grid:
    return Grid(dims=tuple(meta["dims"]), spacing=meta["spacing"],
                origin=tuple(meta["origin"]))


def save_medium(medium: Medium, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": SCHEMA_VERSION,
        "kind": "medium",
        **_grid_meta(medium.grid),
        "omega": medium.omega,
        "n_floor": medium.n_floor,
        "dtype": "f64",
        "order": "C",
    }
    (d / "medium.json").write_text(json.dumps(meta, indent=2))
    _write_bin(d / "n.bin", medium.n)
    _write_bin(d / "sigma.bin", medium.sigma)


def load_medium(directory) -> Medium:
    d = Path(directory)
    try:
        meta = json.loads((d / "medium.json").read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"no medium.json in {d}") from exc
    grid = _grid_from_meta(meta)
    n = _read_bin(d / "n.bin", grid.dims, "f64")
    sigma = _read_bin(d / "sigma.bin", grid.dims, "f64")
    return Medium(grid=grid, n=n, sigma=sigma, omega=meta["omega"],
                  n_floor=meta.get("n_floor", 1e-6))


def save_vector_field(field: VectorField, directory, name: str = "E") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": SCHEMA_VERSION,
        "kind": "vector_field",
        **_grid_meta(field.grid),
        "components": 3,
        "dtype": "c128",  # interleaved re/im float64 pairs
        "order": "C",
        "data": f"{name}.bin",
    }
    (d / f"{name}.json").write_text(json.dumps(meta, indent=2))
    _write_bin(d / f"{name}.bin", field.values)


def load_vector_field(directory, name: str = "E") -> VectorField:
    d = Path(directory)
    meta = json.loads((d / f"{name}.json").read_text())
    grid = _grid_from_meta(meta)
    vals = _read_bin(d / meta["data"], (3, *grid.dims), "c128")
    return VectorField(grid=grid, values=vals)


def save_internal_data(data: InternalData, directory, name: str = "H") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": SCHEMA_VERSION,
        "kind": "internal_data",
        **_grid_meta(data.grid),
        "dtype": "f64",
        "order": "C",
        "data": f"{name}.bin",
    }
    (d / f"{name}.json").write_text(json.dumps(meta, indent=2))
    _write_bin(d / f"{name}.bin", data.H)


def load_internal_data(directory, name: str = "H") -> InternalData:
    d = Path(directory)
    meta = json.loads((d / f"{name}.json").read_text())
    grid = _grid_from_meta(meta)
    return InternalData(grid=grid, H=_read_bin(d / meta["data"], grid.dims, "f64"))


def save_illumination(f: BoundaryIllumination, directory, name: str = "illum") -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "schema": SCHEMA_VERSION,
        "kind": "boundary_illumination",
        **_grid_meta(f.grid),
        "dtype": "c128",
        "order": "C",
        "faces": {},
    }
    for key in FACES:
        fname = f"{name}_{_FACE_NAMES[key].replace('+', 'p').replace('-', 'm')}.bin"
        meta["faces"][_FACE_NAMES[key]] = {
            "file": fname,
            "shape": list(f.faces[key].shape),
        }
        _write_bin(d / fname, f.faces[key])
    (d / f"{name}.json").write_text(json.dumps(meta, indent=2))


def load_illumination(directory, name: str = "illum") -> BoundaryIllumination:
    d = Path(directory)
    meta = json.loads((d / f"{name}.json").read_text())
    grid = _grid_from_meta(meta)
    faces = {}
    for fname, entry in meta["faces"].items():
        faces[_FACE_BY_NAME[fname]] = _read_bin(
            d / entry["file"], tuple(entry["shape"]), "c128"
        )
    return BoundaryIllumination(grid=grid, faces=faces)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(directory, extra: dict | None = None) -> dict:
    """Manifest of every file in `directory` with checksums."""
    d = Path(directory)
    entries = {}
    for p in sorted(d.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            entries[str(p.relative_to(d))] = sha256_file(p)
    manifest = {"schema": SCHEMA_VERSION, "files": entries}
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
