"""Procedural image distributions standing in for the source and target domains.

The source domain is dense: one to three warm-coloured circles or squares over
a low-frequency striped background. Each target kind shifts one factor:

* ``palette``  - hues rotated by half a turn (cool blues/cyans), saturated background
* ``shapes``   - four to seven rings instead of one to three circles or squares
* ``texture``  - high-contrast background stripes at 3-9x the frequency, striped fills

Sample ``i`` of a spec depends only on ``(seed, i)``, so a spec with a larger
``count`` extends a smaller one. Images are quantised to 8 bits at creation,
which makes the byte stream the canonical form.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from colora.errors import ConfigError

KINDS = ("source", "palette", "shapes", "texture")

_PARAMS = {
    "source": dict(hue=(0.0, 0.17), shapes=("circle", "square"), freq=(1.0, 2.0)),
    "palette": dict(hue=(0.5, 0.67), shapes=("circle", "square"), freq=(1.0, 2.0), bg_sat=0.7),
    "shapes": dict(hue=(0.0, 0.17), shapes=("ring",), freq=(1.0, 2.0), count=(4, 8),
                   size=(0.2, 0.3)),
    "texture": dict(hue=(0.0, 0.17), shapes=("circle", "square"), freq=(6.0, 9.0), contrast=0.8,
                    fill_freq=(6.0, 9.0)),
}

# seed offset for held-out reference sets, so they never overlap training shots
REFERENCE_SEED_OFFSET = 7_919_000


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    count: int = 10
    seed: int = 0
    resolution: int = 32

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.count < 1 or self.resolution < 4:
            raise ConfigError(f"dataset {self.kind}: count must be >= 1 and resolution >= 4")

    def reference(self, count: int) -> "DatasetSpec":
        """Held-out samples from the same distribution (for proxy-FID)."""
        return replace(self, count=count, seed=self.seed + REFERENCE_SEED_OFFSET)

    def to_string(self) -> str:
        return f"{self.kind}:{self.count}:{self.seed}:{self.resolution}"

    @classmethod
    def from_string(cls, text: str) -> "DatasetSpec":
        parts = text.strip().split(":")
        if len(parts) != 4:
            raise ConfigError(f"dataset spec must be kind:count:seed:resolution, got {text!r}")
        try:
            return cls(parts[0], int(parts[1]), int(parts[2]), int(parts[3]))
        except ValueError:
            raise ConfigError(f"malformed dataset spec {text!r}") from None


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _shape_mask(kind: str, yy, xx, cy, cx, size, angle) -> np.ndarray:
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        return dy * dy + dx * dx <= size * size
    if kind == "square":
        c, s = np.cos(angle), np.sin(angle)
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (np.abs(u) <= size * 0.85) & (np.abs(v) <= size * 0.85)
    if kind == "ring":
        r2 = dy * dy + dx * dx
        return (r2 <= size * size) & (r2 >= (0.55 * size) ** 2)
    if kind == "triangle":
        inside = np.ones_like(dy, dtype=bool)
        for j in range(3):
            a = angle + 2 * np.pi * j / 3
            inside &= (np.cos(a) * dx + np.sin(a) * dy) <= 0.5 * size
        return inside
    raise ValueError(kind)


def render_sample(spec: DatasetSpec, index: int) -> np.ndarray:
    """One image as uint8 ``[3, R, R]``."""
    p = _PARAMS[spec.kind]
    rng = np.random.default_rng([spec.seed, index])
    res = spec.resolution
    yy, xx = np.mgrid[0:res, 0:res].astype(np.float64) / res

    freq = rng.uniform(*p["freq"])
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    contrast = p.get("contrast", 0.25)
    v_lo = rng.uniform(0.2, 0.35)
    sat = p.get("bg_sat", 0.25)
    bg_a = _hsv(rng.uniform(*p["hue"]) + 0.5, sat, v_lo)
    bg_b = _hsv(rng.uniform(*p["hue"]) + 0.5, sat, min(1.0, v_lo + contrast))
    img = bg_a[:, None, None] * (1 - stripes) + bg_b[:, None, None] * stripes

    for _ in range(rng.integers(*p.get("count", (1, 4)))):
        kind = p["shapes"][rng.integers(len(p["shapes"]))]
        color = _hsv(rng.uniform(*p["hue"]), rng.uniform(0.7, 1.0), rng.uniform(0.75, 1.0))
        mask = _shape_mask(kind, yy, xx, rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85),
                           rng.uniform(*p.get("size", (0.12, 0.25))), rng.uniform(0, 2 * np.pi))
        fill = color[:, None, None]
        if "fill_freq" in p:
            f, a = rng.uniform(*p["fill_freq"]), rng.uniform(0, np.pi)
            fill = fill * (0.35 + 0.65 * (np.sin(2 * np.pi * f * (np.cos(a) * xx + np.sin(a) * yy)) > 0))
        img = np.where(mask[None], fill, img)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def render(spec: DatasetSpec) -> np.ndarray:
    """All samples as uint8 ``[count, 3, R, R]``."""
    return np.stack([render_sample(spec, i) for i in range(spec.count)])


def to_float(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 images -> floats in [-1, 1]."""
    return (images.astype(np.float64) / 127.5 - 1.0).astype(dtype)


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(images, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def load(spec: DatasetSpec, dtype=np.float32) -> np.ndarray:
    return to_float(render(spec), dtype)


# ---------------------------------------------------------------- PPM / PGM


def write_pnm(path: Path, image: np.ndarray) -> None:
    """Binary PPM (3 channels) or PGM (1 channel), maxval 255, from ``[c, h, w]`` uint8."""
    c, h, w = image.shape
    if c == 3:
        header, body = b"P6", np.ascontiguousarray(image.transpose(1, 2, 0))
    elif c == 1:
        header, body = b"P5", np.ascontiguousarray(image[0])
    else:
        raise ValueError(f"PNM needs 1 or 3 channels, got {c}")
    Path(path).write_bytes(header + f"\n{w} {h}\n255\n".encode() + body.astype(np.uint8).tobytes())


def read_pnm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos].decode())
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255 or magic not in ("P5", "P6"):
        raise ValueError(f"{path}: only 8-bit binary P5/P6 is supported")
    c = 3 if magic == "P6" else 1
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * c, offset=pos)
    return data.reshape(h, w, c).transpose(2, 0, 1).copy()


def write_dataset(spec: DatasetSpec, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for i in range(spec.count):
        path = out_dir / f"{spec.kind}_{spec.seed}_{i:05d}.ppm"
        write_pnm(path, render_sample(spec, i))
        paths.append(path)
    return paths
