"""Checkpoint directory format.

A checkpoint is a directory holding ``manifest.json`` plus one raw
little-endian float32 tensor file per parameter under ``tensors/``. The
manifest pins the model layout (names, shapes, roles, spec digest), a
content hash per tensor, and training provenance. Round-trips are bitwise
lossless; nothing in the directory depends on when it was written.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .errors import DigestMismatchError, ManifestError, TensorShapeError
from .model import ModelSpec, param_template, spec_digest
from .params import ParameterSet

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


def _tensor_file(name: str) -> str:
    return name + ".bin"


def save_checkpoint(
    params: ParameterSet, spec: ModelSpec, provenance: dict, path
) -> Path:
    """Write ``params`` under ``path``; returns the checkpoint directory."""
    if sys.byteorder != "little":
        raise ManifestError("checkpoint format requires a little-endian host")
    path = Path(path)
    tensor_dir = path / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in params.names:
        data = np.ascontiguousarray(params[name], dtype=_DTYPE)
        raw = data.tobytes()
        (tensor_dir / _tensor_file(name)).write_bytes(raw)
        entries.append(
            {
                "name": name,
                "shape": list(data.shape),
                "role": params.roles[name],
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32",
        "byte_order": "little",
        "spec": spec.to_dict(),
        "spec_digest": spec_digest(spec),
        "params": entries,
        "provenance": dict(provenance),
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    )
    return path


def read_manifest(path) -> dict:
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.is_file():
        raise ManifestError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"unreadable manifest at {manifest_path}: {exc}") from exc
    for key in ("format_version", "spec", "spec_digest", "params", "provenance"):
        if key not in manifest:
            raise ManifestError(f"manifest missing field {key!r}")
    return manifest


def load_checkpoint(path, spec: ModelSpec) -> ParameterSet:
    """Read a checkpoint back into a ParameterSet, verifying layout and hashes."""
    path = Path(path)
    manifest = read_manifest(path)
    if manifest["spec_digest"] != spec_digest(spec):
        raise DigestMismatchError(
            f"checkpoint built for spec {manifest['spec_digest'][:12]}, "
            f"requested spec {spec_digest(spec)[:12]}"
        )
    expected = {name: (shape, role) for name, shape, role in param_template(spec)}
    seen = set()
    tensors: dict[str, np.ndarray] = {}
    roles: dict[str, str] = {}
    for entry in manifest["params"]:
        name = entry["name"]
        if name not in expected:
            raise TensorShapeError(f"unexpected parameter {name!r} in manifest")
        shape, role = expected[name]
        if tuple(entry["shape"]) != tuple(shape):
            raise TensorShapeError(
                f"parameter {name!r}: manifest shape {entry['shape']} "
                f"does not match model shape {list(shape)}"
            )
        if entry["role"] != role:
            raise TensorShapeError(
                f"parameter {name!r}: manifest role {entry['role']!r} "
                f"does not match model role {role!r}"
            )
        tensor_path = path / "tensors" / _tensor_file(name)
        if not tensor_path.is_file():
            raise TensorShapeError(f"missing tensor file for parameter {name!r}")
        raw = tensor_path.read_bytes()
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise DigestMismatchError(f"content hash mismatch for parameter {name!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if len(raw) != count * _DTYPE.itemsize:
            raise TensorShapeError(
                f"parameter {name!r}: payload holds {len(raw)} bytes, "
                f"expected {count * _DTYPE.itemsize}"
            )
        tensors[name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).copy()
        roles[name] = role
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise TensorShapeError(f"manifest lacks parameters: {sorted(missing)}")
    return ParameterSet(tensors, roles)


def checkpoint_digest(path) -> str:
    """Single digest over manifest and tensor bytes, for replay comparisons."""
    path = Path(path)
    manifest = read_manifest(path)
    h = hashlib.sha256()
    h.update(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    )
    for entry in sorted(manifest["params"], key=lambda e: e["name"]):
        h.update((path / "tensors" / _tensor_file(entry["name"])).read_bytes())
    return h.hexdigest()
