"""Binary file formats: voxel grids, PFM and Radiance HDR images."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

VOXEL_HEADER = struct.Struct("<4I")


class FormatError(ValueError):
    """Malformed input file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def write_voxels(path: str | Path, data: np.ndarray, pitch_um: float) -> None:
    """Flat uint8 grid: 3 x uint32 dims, uint32 pitch in um, row-major bytes."""
    data = np.ascontiguousarray(data, dtype=np.uint8)
    if data.ndim != 3:
        raise ValueError("voxel data must be 3D")
    header = VOXEL_HEADER.pack(*data.shape, int(round(pitch_um)))
    Path(path).write_bytes(header + data.tobytes())


def read_voxels(path: str | Path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < VOXEL_HEADER.size:
        raise FormatError("truncated voxel header", len(raw))
    nz, ny, nx, pitch = VOXEL_HEADER.unpack_from(raw)
    n = nz * ny * nx
    if len(raw) - VOXEL_HEADER.size != n:
        raise FormatError(f"expected {n} voxel bytes, found {len(raw) - VOXEL_HEADER.size}",
                          VOXEL_HEADER.size)
    data = np.frombuffer(raw, np.uint8, offset=VOXEL_HEADER.size).reshape(nz, ny, nx).copy()
    return data, pitch


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path: str | Path, image: np.ndarray) -> None:
    """Write a float image (H, W) or (H, W, 3), top row first in memory."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        tag = b"Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError("PFM needs (H, W) or (H, W, 3)")
    h, w = image.shape[:2]
    body = np.ascontiguousarray(image[::-1]).astype("<f4").tobytes()
    Path(path).write_bytes(tag + b"\n%d %d\n-1.0\n" % (w, h) + body)


def _read_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(raw) and raw[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(raw) and not raw[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", pos)
    return raw[start:pos], pos


def read_pfm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tag, pos = _read_token(raw, 0)
    if tag == b"PF":
        channels = 3
    elif tag == b"Pf":
        channels = 1
    else:
        raise FormatError(f"bad PFM magic {tag!r}", 0)
    fields = []
    for _ in range(3):
        start = pos
        tok, pos = _read_token(raw, pos)
        try:
            fields.append(float(tok))
        except ValueError:
            raise FormatError(f"bad PFM header field {tok!r}", start) from None
    w, h, scale = int(fields[0]), int(fields[1]), fields[2]
    if w <= 0 or h <= 0:
        raise FormatError("non-positive PFM dimensions", pos)
    pos += 1  # single whitespace before the raster
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    if len(raw) - pos < 4 * n:
        raise FormatError(f"PFM raster truncated: need {4 * n} bytes", len(raw))
    data = np.frombuffer(raw, dtype, count=n, offset=pos).astype(np.float32)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].copy()


# ---------------------------------------------------------------------------
# Radiance RGBE


def write_hdr(path: str | Path, image: np.ndarray) -> None:
    """Write an uncompressed Radiance HDR file from an (H, W, 3) float image."""
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    m = image.max(axis=2)
    rgbe = np.zeros((h, w, 4), np.uint8)
    nz = m > 1e-32
    mant, expo = np.frexp(m[nz])
    scale = mant * 256.0 / m[nz]
    rgbe[nz, :3] = np.clip(image[nz] * scale[:, None], 0, 255).astype(np.uint8)
    rgbe[nz, 3] = (expo + 128).astype(np.uint8)
    header = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y %d +X %d\n" % (h, w)
    Path(path).write_bytes(header + rgbe.tobytes())


def read_hdr(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not (raw.startswith(b"#?RADIANCE") or raw.startswith(b"#?RGBE")):
        raise FormatError("missing Radiance magic", 0)
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise FormatError("unterminated HDR header", pos)
        line = raw[pos:end].strip()
        if line.startswith(b"FORMAT="):
            if line != b"FORMAT=32-bit_rle_rgbe":
                raise FormatError(f"unsupported HDR format {line!r}", pos)
        pos = end + 1
        if not line and pos > 1:
            break
    end = raw.find(b"\n", pos)
    if end < 0:
        raise FormatError("missing HDR resolution line", pos)
    parts = raw[pos:end].split()
    if len(parts) != 4 or parts[0] != b"-Y" or parts[2] != b"+X":
        raise FormatError(f"unsupported HDR orientation {raw[pos:end]!r}", pos)
    h, w = int(parts[1]), int(parts[3])
    pos = end + 1
    out = np.zeros((h, w, 4), np.uint8)
    for row in range(h):
        pos = _read_scanline(raw, pos, w, out[row])
    rgbe = out.astype(np.float32)
    e = out[..., 3].astype(np.int32)
    f = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0).astype(np.float32)
    return rgbe[..., :3] * f[..., None]


def _read_scanline(raw: bytes, pos: int, width: int, dest: np.ndarray) -> int:
    if pos + 4 > len(raw):
        raise FormatError("HDR raster truncated", pos)
    b0, b1, b2, b3 = raw[pos:pos + 4]
    rle = 8 <= width < 32768 and b0 == 2 and b1 == 2 and not (b2 & 0x80)
    if not rle:
        n = 4 * width
        if pos + n > len(raw):
            raise FormatError("HDR raster truncated", pos)
        dest[:] = np.frombuffer(raw, np.uint8, count=n, offset=pos).reshape(width, 4)
        return pos + n
    if (b2 << 8 | b3) != width:
        raise FormatError("HDR scanline width mismatch", pos)
    pos += 4
    for ch in range(4):
        x = 0
        while x < width:
            if pos >= len(raw):
                raise FormatError("HDR raster truncated", pos)
            count = raw[pos]
            pos += 1
            if count > 128:
                count -= 128
                if x + count > width or pos >= len(raw):
                    raise FormatError("bad HDR run length", pos - 1)
                dest[x:x + count, ch] = raw[pos]
                pos += 1
            else:
                if count == 0 or x + count > width or pos + count > len(raw):
                    raise FormatError("bad HDR literal run", pos - 1)
                dest[x:x + count, ch] = np.frombuffer(raw, np.uint8, count=count, offset=pos)
                pos += count
            x += count
    return pos
