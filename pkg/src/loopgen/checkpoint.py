"""Versioned binary checkpoint container.

Layout::

    b"LOOPGENC"                 8-byte magic
    u32 format version          little endian
    u64 header length
    header                      UTF-8 JSON: net config, shape manifest per
                                parameter group, array order, free metadata
    payload                     float64 little endian, arrays in declared order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import GROUPS, NetConfig, UNetLite

MAGIC = b"LOOPGENC"
FORMAT_VERSION = 1


def save(path, net: UNetLite, meta: dict | None = None, extra: dict | None = None) -> None:
    """Write ``net`` plus named ``extra`` arrays (e.g. optimiser moments)."""
    arrays = [(name, net.groups[name], a) for name, a in net.params.items()]
    arrays += [(name, "extra", np.asarray(a, dtype=np.float64)) for name, a in (extra or {}).items()]
    manifest = {g: {} for g in GROUPS}
    for name, group, a in arrays:
        if group in manifest:
            manifest[group][name] = list(a.shape)
    header = {
        "format_version": FORMAT_VERSION,
        "net": net.config_dict(),
        "manifest": manifest,
        "order": [{"name": n, "group": g, "shape": list(a.shape)} for n, g, a in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for _, _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)


def load(path, expect: UNetLite | None = None):
    """Read a checkpoint; returns ``(net, meta, extra)``.

    With ``expect`` given, the stored shape manifest must match its network
    exactly.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if raw[:8] != MAGIC:
        raise DataError(f"{path} is not a checkpoint")
    try:
        version, hlen = struct.unpack_from("<IQ", raw, 8)
    except struct.error:
        raise DataError(f"{path}: truncated header") from None
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    start = 8 + struct.calcsize("<IQ")
    try:
        header = json.loads(raw[start : start + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise DataError(f"{path}: corrupt header") from None
    payload = memoryview(raw)[start + hlen :]
    expected_bytes = 8 * sum(int(np.prod(e["shape"], dtype=np.int64)) for e in header["order"])
    if len(payload) != expected_bytes:
        raise DataError(f"{path}: payload is {len(payload)} bytes, header declares {expected_bytes}")

    params, extra, off = {}, {}, 0
    for entry in header["order"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        a = np.frombuffer(payload[off : off + 8 * n], dtype="<f8").astype(np.float64).reshape(entry["shape"])
        off += 8 * n
        (extra if entry["group"] == "extra" else params)[entry["name"]] = a
    net = UNetLite(NetConfig(**header["net"]), params)
    for name, group in net.groups.items():
        if header["manifest"].get(group, {}).get(name) is None:
            raise DataError(f"{path}: parameter {name} missing from group {group} in manifest")
    if expect is not None and expect.shape_manifest() != net.shape_manifest():
        raise DataError(f"{path}: shape manifest does not match the target network")
    return net, header["meta"], extra
