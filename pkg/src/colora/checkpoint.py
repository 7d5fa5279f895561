"""Binary container for adapter and base-weight checkpoints.

Layout, all integers little-endian::

    magic        4s   b"CLRG"
    version      u16  1
    fingerprint  32s  architecture fingerprint
    rank         u16  0 for base checkpoints
    alpha_fc     f64
    alpha_conv   f64
    count        u32
    count x entry:
        name_len u16, name utf-8, dtype u8 (0 = f32, 1 = f64), ndim u8,
        ndim x u32 extents, raw little-endian data
    crc32        u32  over every preceding byte

Adapter entry names are ``fc:<layer>:<factor>`` or
``conv-<activation>:<layer>:<factor>``; base entries are ``base/<tensor>``.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from colora.adapters import AdapterSet, LLoraConvAdapter, LoraFcAdapter
from colora.arch import ArchSpec
from colora.autodiff import Tensor
from colora.errors import CheckpointError, FingerprintError
from colora.networks import Weights

MAGIC = b"CLRG"
VERSION = 1
_HEADER = struct.Struct("<4sH32sHddI")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
BASE_PREFIX = "base/"


@dataclass
class Container:
    fingerprint: bytes
    rank: int
    alpha_fc: float
    alpha_conv: float
    entries: dict[str, np.ndarray]


def encode(c: Container) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, c.fingerprint, c.rank, c.alpha_fc, c.alpha_conv, len(c.entries))]
    for name, arr in c.entries.items():
        raw = name.encode("utf-8")
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str) -> tuple:
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size, what))


def decode(buf: bytes) -> Container:
    rd = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointError("bad magic bytes, not a CLRG checkpoint", 0)
    if len(buf) < _HEADER.size + 4:
        raise CheckpointError("truncated header", len(buf))
    _, version, fp, rank, a_fc, a_conv, count = _HEADER.unpack(rd.take(_HEADER.size, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {VERSION})", 4)
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: file is corrupt", len(buf) - 4)
    entries: dict[str, np.ndarray] = {}
    rd.buf = body
    for _ in range(count):
        at = rd.pos
        (n,) = rd.unpack("H", "name length")
        try:
            name = rd.take(n, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("entry name is not valid UTF-8", at + 2) from None
        if name in entries:
            raise CheckpointError(f"duplicate entry {name!r}", at)
        tag, ndim = rd.unpack("BB", "dtype/ndim")
        if tag not in _DTYPES:
            raise CheckpointError(f"entry {name!r}: unknown dtype tag {tag}", rd.pos - 2)
        shape = rd.unpack(f"{ndim}I", "extents")
        dt = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        data = rd.take(nbytes, f"data of {name!r}")
        entries[name] = np.frombuffer(data, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if rd.pos != len(body):
        raise CheckpointError(f"{len(body) - rd.pos} trailing bytes after last entry", rd.pos)
    return Container(fp, rank, a_fc, a_conv, entries)


def atomic_write(path: Path, data: bytes) -> None:
    """Write to a sibling temp file, fsync, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path: Path) -> Container:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return decode(buf)


# ---------------------------------------------------------------- adapters


def adapters_to_container(s: AdapterSet) -> Container:
    entries = {}
    for layer, a in s.adapters.items():
        prefix = "fc" if a.kind == "fc" else f"conv-{a.activation}"
        for fname, t in a.factors().items():
            entries[f"{prefix}:{layer}:{fname}"] = t.data
    return Container(s.arch_fingerprint, s.rank, s.alpha_fc, s.alpha_conv, entries)


def adapters_from_container(c: Container, arch: ArchSpec) -> AdapterSet:
    if c.fingerprint != arch.fingerprint():
        raise FingerprintError(f"checkpoint was written for a different architecture than {arch.name!r}")
    if c.rank < 1:
        raise CheckpointError(f"adapter checkpoint has rank {c.rank}", 38)
    groups: dict[str, dict[str, np.ndarray]] = {}
    kinds: dict[str, str] = {}
    for key, arr in c.entries.items():
        try:
            prefix, layer, fname = key.split(":")
        except ValueError:
            raise CheckpointError(f"malformed adapter entry name {key!r}") from None
        groups.setdefault(layer, {})[fname] = arr
        kinds[layer] = prefix
    layers = {l.name: l for l in arch.adaptable_layers()}
    adapters = {}
    activations = set()
    try:
        for layer in [l for l in layers if l in groups]:
            f, prefix = groups[layer], kinds[layer]
            t = {k: Tensor._wrap(v.copy(), requires_grad=True) for k, v in f.items()}
            if prefix == "fc":
                a = LoraFcAdapter(t["B"], t["A"], c.alpha_fc, c.rank)
            elif prefix.startswith("conv-"):
                activations.add(prefix[5:])
                a = LLoraConvAdapter(t["B_prime"], t["M_inst"], t["A"], c.alpha_conv, c.rank, prefix[5:])
            else:
                raise CheckpointError(f"unknown adapter kind {prefix!r}")
            if tuple(a.delta_shape) != layers[layer].shape:
                raise CheckpointError(f"adapter {layer} does not match the architecture")
            adapters[layer] = a
    except KeyError as exc:
        raise CheckpointError(f"missing adapter factor {exc}") from None
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    unknown = set(groups) - set(adapters)
    if unknown:
        raise CheckpointError(f"entries for unknown layers {sorted(unknown)}")
    present = {a.kind for a in adapters.values()}
    placement = "both" if present == {"fc", "conv"} else (present.pop() if present else "both")
    activation = activations.pop() if len(activations) == 1 else "relu"
    return AdapterSet(adapters, c.fingerprint, c.rank, c.alpha_fc, c.alpha_conv, placement, activation)


def save_adapters(s: AdapterSet, path: Path) -> None:
    atomic_write(Path(path), encode(adapters_to_container(s)))


def load_adapters(path: Path, arch: ArchSpec) -> AdapterSet:
    return adapters_from_container(_read(path), arch)


# ---------------------------------------------------------------- base weights


def save_base(weights: Weights, path: Path) -> None:
    entries = {BASE_PREFIX + k: t.data for k, t in weights.tensors.items()}
    atomic_write(Path(path), encode(Container(weights.arch.fingerprint(), 0, 0.0, 0.0, entries)))


def load_base(path: Path, arch: ArchSpec) -> Weights:
    c = _read(path)
    if c.fingerprint != arch.fingerprint():
        raise FingerprintError(f"base checkpoint was written for a different architecture than {arch.name!r}")
    expected = arch.generator_tensor_shapes()
    tensors = {}
    for key, arr in c.entries.items():
        if not key.startswith(BASE_PREFIX):
            raise CheckpointError(f"unexpected entry {key!r} in base checkpoint")
        name = key[len(BASE_PREFIX):]
        if expected.get(name) != arr.shape:
            raise CheckpointError(f"base tensor {name!r} has shape {arr.shape}, expected {expected.get(name)}")
        tensors[name] = Tensor._wrap(arr.copy())
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointError(f"base checkpoint lacks {sorted(missing)}")
    return Weights(arch, {k: tensors[k] for k in expected})
