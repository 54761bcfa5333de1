"""Binary checkpoint files for teachers and the student.

Layout (all integers little-endian):

    magic      4 bytes  b"JGKD"
    version    u16      currently 1
    kind_len   u16      + UTF-8 kind string ("fine-teacher",
                          "coarse-teacher", "student")
    config_len u32      + UTF-8 JSON config (sorted keys)
    count      u32      number of named arrays, then per array:
        name_len u16    + UTF-8 name
        rank     u8
        dims     rank x u64
        data     float64 row-major raw bytes

Round trips are bit-exact: float64 payloads are written raw.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"JGKD"
VERSION = 1


def save_arrays(path, kind: str, config: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    kind_b = kind.encode("utf-8")
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<H", len(kind_b)))
        fh.write(kind_b)
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes(order="C"))


def load_arrays(path, expected_kind: str | None = None
                ) -> tuple[str, dict, dict[str, np.ndarray]]:
    path = Path(path)

    def need(fh, size: int, what: str) -> bytes:
        buf = fh.read(size)
        if len(buf) != size:
            raise FormatError(f"{path.name}: truncated while reading {what}")
        return buf

    with path.open("rb") as fh:
        if need(fh, 4, "magic") != MAGIC:
            raise FormatError(f"{path.name}: bad magic bytes (not a checkpoint)")
        (version,) = struct.unpack("<H", need(fh, 2, "version"))
        if version != VERSION:
            raise FormatError(f"{path.name}: unsupported format version {version}")
        (kind_len,) = struct.unpack("<H", need(fh, 2, "kind length"))
        kind = need(fh, kind_len, "kind").decode("utf-8")
        if expected_kind is not None and kind != expected_kind:
            raise FormatError(
                f"{path.name}: type tag is '{kind}', expected '{expected_kind}'")
        (cfg_len,) = struct.unpack("<I", need(fh, 4, "config length"))
        try:
            config = json.loads(need(fh, cfg_len, "config").decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path.name}: bad config block: {exc}") from exc
        (count,) = struct.unpack("<I", need(fh, 4, "array count"))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", need(fh, 2, "array name length"))
            name = need(fh, name_len, "array name").decode("utf-8")
            (rank,) = struct.unpack("<B", need(fh, 1, "array rank"))
            dims = tuple(struct.unpack("<Q", need(fh, 8, "array dim"))[0]
                         for _ in range(rank))
            n_items = int(np.prod(dims)) if dims else 1
            raw = need(fh, 8 * n_items, f"array '{name}' data")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"{path.name}: trailing bytes after array list")
    return kind, config, arrays
