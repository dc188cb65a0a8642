"""Little-endian binary container for model state.

Layout::

    magic    8 bytes  b"NTWCKPT\\0"
    version  u32      currently 1
    count    u32      number of sections
    section  repeated:
      kind     u8     0 = float64 matrix, 1 = UTF-8 text
      name_len u16, name (UTF-8)
      matrix:  u32 rows, u32 cols, rows*cols float64 row-major
      text:    u32 byte length, bytes
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .latent import EmbeddingTable, MappingNet
from .mlp import MLP
from .numcore import FormatError

MAGIC = b"NTWCKPT\0"
VERSION = 1


def write_sections(path, sections: dict[str, np.ndarray | str]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, value in sections.items():
        key = name.encode("utf-8")
        if isinstance(value, str):
            body = value.encode("utf-8")
            parts += [struct.pack("<BH", 1, len(key)), key, struct.pack("<I", len(body)), body]
        else:
            arr = np.asarray(value, dtype="<f8")
            if arr.ndim != 2:
                raise ValueError(f"section {name!r} must be 2-D, got ndim={arr.ndim}")
            parts += [struct.pack("<BH", 0, len(key)), key, struct.pack("<II", *arr.shape), np.ascontiguousarray(arr).tobytes()]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_sections(path) -> dict[str, np.ndarray | str]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)", 0)
    off = 8

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise FormatError(f"{path}: truncated", off)
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", 8)
    out: dict[str, np.ndarray | str] = {}
    for _ in range(count):
        kind, name_len = take("<BH")
        if off + name_len > len(buf):
            raise FormatError(f"{path}: truncated section name", off)
        name = buf[off : off + name_len].decode("utf-8")
        off += name_len
        if kind == 0:
            rows, cols = take("<II")
            n = rows * cols * 8
            if off + n > len(buf):
                raise FormatError(f"{path}: truncated matrix {name!r}", off)
            out[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(np.float64)
            off += n
        elif kind == 1:
            (n,) = take("<I")
            if off + n > len(buf):
                raise FormatError(f"{path}: truncated text {name!r}", off)
            out[name] = buf[off : off + n].decode("utf-8")
            off += n
        else:
            raise FormatError(f"{path}: unknown section kind {kind}", off - name_len - 3)
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes", off)
    return out


def embedding_sections(table: EmbeddingTable, prefix: str = "embedding") -> dict[str, np.ndarray]:
    return {
        f"{prefix}.means": table.means,
        f"{prefix}.counts": table.class_counts.astype(np.float64).reshape(1, -1),
        f"{prefix}.hyper": np.array([[table.sigma, table.alpha]]),
    }


def embedding_from_sections(sections, prefix: str = "embedding") -> EmbeddingTable:
    try:
        sigma, alpha = sections[f"{prefix}.hyper"][0]
        counts = sections[f"{prefix}.counts"][0].astype(np.int64)
        return EmbeddingTable(sections[f"{prefix}.means"], counts, float(sigma), float(alpha))
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing section {exc}") from None


def mlp_sections(net: MLP, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}.slope": np.array([[net.slope]])}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}.W{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def mlp_from_sections(sections, prefix: str, cls=MLP):
    if f"{prefix}.slope" not in sections:
        raise FormatError(f"checkpoint is missing network {prefix!r}")
    ws, bs, i = [], [], 0
    while f"{prefix}.W{i}" in sections:
        ws.append(sections[f"{prefix}.W{i}"])
        bs.append(sections[f"{prefix}.b{i}"])
        i += 1
    return cls(ws, bs, float(sections[f"{prefix}.slope"][0, 0]))


def save_latent(path, table: EmbeddingTable, net: MappingNet) -> None:
    write_sections(path, {**embedding_sections(table), **mlp_sections(net, "mapping")})


def load_latent(path) -> tuple[EmbeddingTable, MappingNet]:
    s = read_sections(path)
    return embedding_from_sections(s), mlp_from_sections(s, "mapping", MappingNet)
