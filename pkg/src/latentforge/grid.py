"""Dense latent containers, the seeded noise source and on-disk formats.

Latents are stored as float32 in channel-major, row-major order; arithmetic
elsewhere in the package upcasts to float64 and rounds back when a new
``LatentGrid`` is built, so every grid is exactly representable in the FLXL
file format.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument, NumericError

LATENT_MAGIC = b"FLXL"
SPECTRUM_MAGIC = b"FLXS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")
# refuse to allocate more than this many cells from an untrusted header
MAX_CELLS = 1 << 28


@dataclass(frozen=True, eq=False)
class LatentGrid:
    """Real C x H x W tensor. Immutable; construction copies and validates."""

    data: np.ndarray

    def __post_init__(self):
        with np.errstate(over="ignore", invalid="ignore"):
            arr = np.array(self.data, dtype=np.float32, order="C")
        if arr.ndim != 3:
            raise InvalidArgument(f"latent grid must be 3-D (C, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise InvalidArgument(f"latent grid dimensions must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("latent grid contains NaN or Inf (possibly float32 overflow)")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def f64(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def identical(self, other: "LatentGrid") -> bool:
        """Bitwise equality of shape and payload."""
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    def __repr__(self) -> str:
        return f"LatentGrid(shape={self.shape})"


def grid_new(channels: int, height: int, width: int, fill: float = 0.0) -> LatentGrid:
    for name, n in (("channels", channels), ("height", height), ("width", width)):
        if int(n) != n or n < 1:
            raise InvalidArgument(f"{name} must be a positive integer, got {n!r}")
    return LatentGrid(np.full((channels, height, width), fill, dtype=np.float32))


class Rng:
    """Counter-based generator: Philox4x64-10 keyed directly by the seed.

    Raw 64-bit words come from numpy's Philox bit generator (a fixed,
    published algorithm). Uniforms take the top 53 bits of each word;
    normals use the Box-Muller transform on consecutive word pairs. None of
    this goes through numpy's version-dependent distribution samplers, so a
    seed names the same stream everywhere.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidArgument(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._bits = np.random.Philox(key=seed)

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64).reshape(n)

    def uniform(self, size) -> np.ndarray:
        """Uniform floats in [0, 1)."""
        n = int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(size)

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        words = self.raw(2 * pairs) >> np.uint64(11)
        u1 = (words[0::2].astype(np.float64) + 1.0) * 2.0**-53  # (0, 1]
        u2 = words[1::2].astype(np.float64) * 2.0**-53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n].reshape(size)


def sample_gaussian(shape: tuple[int, int, int], std: float, rng: Rng) -> LatentGrid:
    if not std >= 0:
        raise InvalidArgument(f"std must be >= 0, got {std}")
    c, h, w = shape
    if std == 0:
        return grid_new(c, h, w, 0.0)
    return LatentGrid(std * rng.normal((c, h, w)))


def _write_payload(path, magic: bytes, shape, payload: np.ndarray) -> None:
    c, h, w = shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, FORMAT_VERSION, c, h, w))
        fh.write(payload.astype("<f4").tobytes())


def _read_payload(path, magic: bytes, floats_per_cell: int):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    got_magic, version, c, h, w = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if min(c, h, w) < 1:
        raise FormatError(f"{path}: zero dimension in header ({c}, {h}, {w})")
    cells = c * h * w
    if cells > MAX_CELLS:
        raise FormatError(f"{path}: header shape ({c}, {h}, {w}) exceeds {MAX_CELLS} cells")
    expected = cells * floats_per_cell * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise FormatError(
            f"{path}: header announces {cells * floats_per_cell} floats, payload holds {len(body) / 4:g}"
        )
    values = np.frombuffer(body, dtype="<f4").astype(np.float32)
    return (c, h, w), values


def grid_write(grid: LatentGrid, path) -> None:
    _write_payload(path, LATENT_MAGIC, grid.shape, grid.data.ravel())


def grid_read(path) -> LatentGrid:
    shape, values = _read_payload(path, LATENT_MAGIC, 1)
    try:
        return LatentGrid(values.reshape(shape))
    except NumericError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_complex(data: np.ndarray, path) -> None:
    """FLXS layout: FLXL header, then interleaved (re, im) float32 pairs."""
    inter = np.empty(data.shape + (2,), dtype=np.float32)
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    _write_payload(path, SPECTRUM_MAGIC, data.shape, inter.ravel())


def read_complex(path) -> np.ndarray:
    shape, values = _read_payload(path, SPECTRUM_MAGIC, 2)
    pairs = values.reshape(shape + (2,)).astype(np.float64)
    return pairs[..., 0] + 1j * pairs[..., 1]


def to_gray8(plane: np.ndarray) -> np.ndarray:
    """Min-max normalize a 2-D array to uint8; a constant plane maps to 128."""
    plane = np.asarray(plane, dtype=np.float64)
    lo, hi = plane.min(), plane.max()
    if hi == lo:
        return np.full(plane.shape, 128, dtype=np.uint8)
    return np.rint((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(pixels: np.ndarray, path) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError(f"{path}: only 8-bit PGM images are supported")
    body = raw[pos:]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def image_export(grid: LatentGrid, path, channel: int = 0) -> None:
    if not 0 <= channel < grid.channels:
        raise InvalidArgument(f"channel {channel} out of range for {grid.channels}-channel grid")
    write_pgm(to_gray8(grid.data[channel]), path)
