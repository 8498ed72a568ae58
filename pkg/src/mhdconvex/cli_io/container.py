"""MHDF1 containers: binary arrays plus a JSON sidecar.

Layout: the 5 magic bytes ``MHDF1``, a little-endian u32 header length, a
UTF-8 JSON header listing each array (name, shape, byte offset), then the
concatenated float64 little-endian payload.  Complex arrays are stored with a
trailing axis of length 2.  The sidecar ``<file>.json`` carries provenance
and the SHA-256 of the container.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MHDF1"


class ContainerError(Exception):
    """Structured I/O failure; ``kind`` is a stable machine-readable tag."""

    def __init__(self, kind, message, path=None):
        super().__init__(message)
        self.kind, self.path = kind, None if path is None else str(path)

    def to_json(self):
        return {"error": self.kind, "message": str(self), "path": self.path}


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def _as_real(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return np.stack([a.real, a.imag], axis=-1).astype("<f8"), True
    return a.astype("<f8"), False


def write(path, arrays: dict, meta: dict) -> str:
    """Write arrays and the sidecar; returns the container hash."""
    path = Path(path)
    entries, blobs, off = [], [], 0
    for name in sorted(arrays):
        data, cplx = _as_real(arrays[name])
        raw = np.ascontiguousarray(data).tobytes()
        entries.append({"name": name, "shape": list(data.shape), "offset": off, "complex": cplx})
        blobs.append(raw)
        off += len(raw)
    grid = meta.get("grid")
    head = {"format": "MHDF1", "version": 1, "dtype": "f64le", "arrays": entries,
            "grid": [grid] * 3 if isinstance(grid, int) else grid,
            "components": {e["name"]: e["shape"][1:] for e in entries if e["name"] != "times"},
            "time_samples": int(np.size(arrays["times"])) if "times" in arrays else None,
            "layout": "time-major, component-major, x-fastest"}
    header = json.dumps(head, sort_keys=True).encode()
    body = MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body)
    digest = hashlib.sha256(body).hexdigest()
    side = dict(meta)
    side["container"] = {"file": path.name, "sha256": digest, "arrays": [e["name"] for e in entries]}
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return digest


def read(path, expect_level=None):
    """Arrays and sidecar metadata; raises ContainerError on any mismatch."""
    path = Path(path)
    if not path.exists():
        raise ContainerError("missing_file", f"state file {path} does not exist", path)
    side = sidecar_path(path)
    if not side.exists():
        raise ContainerError("missing_sidecar", f"sidecar {side.name} not found next to {path.name}", side)
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as e:
        raise ContainerError("bad_sidecar", f"sidecar is not valid JSON: line {e.lineno}: {e.msg}", side) from e
    body = path.read_bytes()
    if body[:5] != MAGIC:
        raise ContainerError("bad_magic", "file does not start with MHDF1", path)
    if len(body) < 9:
        raise ContainerError("truncated", "file ends inside the header", path)
    (hlen,) = struct.unpack("<I", body[5:9])
    try:
        header = json.loads(body[9:9 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError("bad_header", f"header is not valid JSON: {e}", path) from e
    digest = hashlib.sha256(body).hexdigest()
    want = meta.get("container", {}).get("sha256")
    if want is not None and want != digest:
        raise ContainerError("hash_mismatch", "container hash differs from the sidecar", path)
    if expect_level is not None and meta.get("level") != expect_level:
        raise ContainerError("level_mismatch", f"state is at level {meta.get('level')}, expected {expect_level}", path)
    base = 9 + hlen
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        if start + 8 * count > len(body):
            raise ContainerError("truncated", f"array {e['name']} extends past the end of file", path)
        a = np.frombuffer(body, dtype="<f8", count=count, offset=start).reshape(e["shape"]).astype(float)
        arrays[e["name"]] = a[..., 0] + 1j * a[..., 1] if e.get("complex") else a
    return arrays, meta
