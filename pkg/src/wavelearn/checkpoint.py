"""Checkpoint container: length-prefixed JSON header, then float64 payload.

Layout: 8-byte little-endian unsigned header length, the UTF-8 JSON header
(format version, config echo, ordered parameter names and shapes), then each
parameter's entries as little-endian 64-bit floats in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

FORMAT_VERSION = 1


def save_checkpoint(path, state, config):
    """Write {name: array} parameters plus a config echo."""
    names = list(state.keys())
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "params": [
            {"name": n, "shape": list(np.asarray(state[n]).shape)} for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read back (state dict, config dict)."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ParseError(f"{path}: truncated header length at byte 0")
    (header_len,) = struct.unpack_from("<Q", raw, 0)
    if 8 + header_len > len(raw):
        raise ParseError(f"{path}: truncated header at byte 8")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad header json at byte 8: {exc}")
    if header.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported format version {header.get('format_version')!r}")
    state = {}
    offset = 8 + header_len
    for item in header["params"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ParseError(f"{path}: truncated payload for {item['name']!r} at byte {offset}")
        state[item["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    return state, header.get("config", {})
