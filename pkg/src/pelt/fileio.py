"""Readers and writers for every artifact file.

Formats:
  normal maps    16-bit RGB PNG, channel c -> n_c = 2*(c/65535) - 1
  masks          8-bit grayscale PNG, foreground iff value > 127
  images         8-bit RGB PNG (scene renders), 8-bit RGBA PNG (unwrapped textures)
  UV fields      "UVF1" binary: magic, u32le width/height, row-major f32le (u, v)
                 pairs, quiet-NaN pairs for background
  manifests      JSON, version 1, paths relative to the manifest file

PIL has no 16-bit-per-channel RGB support, so the normal-map PNGs go through
a small self-contained codec (write emits filter 0; read handles filters 0-4).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import NormalField, make_normal_field
from .uvfield import UVField

PNG_SIG = b"\x89PNG\r\n\x1a\n"
UV_MAGIC = b"UVF1"
MANIFEST_VERSION = 1


class IOFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# 16-bit RGB PNG codec

def _chunk(tag: bytes, data: bytes) -> bytes:
    return (struct.pack(">I", len(data)) + tag + data
            + struct.pack(">I", zlib.crc32(tag + data)))


def write_png16_rgb(arr: np.ndarray, path) -> None:
    """Write an (H, W, 3) uint16 array as a 16-bit RGB PNG (filter 0 rows)."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint16:
        raise IOFormatError(f"expected (H, W, 3) uint16, got {arr.shape} {arr.dtype}")
    h, w = arr.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 16, 2, 0, 0, 0)
    rows = arr.astype(">u2").tobytes()
    stride = w * 6
    raw = b"".join(b"\x00" + rows[y * stride:(y + 1) * stride] for y in range(h))
    payload = zlib.compress(raw, 6)
    with open(path, "wb") as f:
        f.write(PNG_SIG)
        f.write(_chunk(b"IHDR", ihdr))
        f.write(_chunk(b"IDAT", payload))
        f.write(_chunk(b"IEND", b""))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, h: int, w: int, bpp: int) -> bytearray:
    stride = w * bpp
    out = bytearray(h * stride)
    prev = bytearray(stride)
    pos = 0
    for y in range(h):
        ftype = raw[pos]
        pos += 1
        row = bytearray(raw[pos:pos + stride])
        pos += stride
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                row[i] = (row[i] + row[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(stride):
                row[i] = (row[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                row[i] = (row[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                ul = prev[i - bpp] if i >= bpp else 0
                row[i] = (row[i] + _paeth(left, prev[i], ul)) & 0xFF
        else:
            raise IOFormatError(f"unknown PNG filter type {ftype}")
        out[y * stride:(y + 1) * stride] = row
        prev = row
    return out


def _png_chunks(data: bytes):
    if data[:8] != PNG_SIG:
        raise IOFormatError("not a PNG file")
    pos = 8
    while pos + 8 <= len(data):
        length, tag = struct.unpack(">I4s", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length:
            raise IOFormatError("truncated PNG chunk")
        yield tag, body
        pos += 12 + length
        if tag == b"IEND":
            return


def read_png16_rgb(path) -> np.ndarray:
    """Read a 16-bit RGB PNG into an (H, W, 3) uint16 array."""
    data = Path(path).read_bytes()
    ihdr = None
    idat = []
    for tag, body in _png_chunks(data):
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", body)
        elif tag == b"IDAT":
            idat.append(body)
    if ihdr is None or not idat:
        raise IOFormatError("PNG missing IHDR or IDAT")
    w, h, depth, color, _comp, _filt, interlace = ihdr
    if depth != 16 or color != 2:
        raise IOFormatError(
            f"expected 16-bit RGB PNG, got bit depth {depth} color type {color}")
    if interlace != 0:
        raise IOFormatError("interlaced PNG not supported")
    raw = zlib.decompress(b"".join(idat))
    expected = h * (w * 6 + 1)
    if len(raw) != expected:
        raise IOFormatError(f"PNG payload is {len(raw)} bytes, expected {expected}")
    flat = _unfilter(raw, h, w, 6)
    return np.frombuffer(bytes(flat), dtype=">u2").reshape(h, w, 3).astype(np.uint16)


def png16_size(path) -> tuple[int, int]:
    """(width, height) from the IHDR without decoding the payload."""
    with open(path, "rb") as f:
        head = f.read(33)
    if head[:8] != PNG_SIG or head[12:16] != b"IHDR":
        raise IOFormatError("not a PNG file")
    w, h = struct.unpack(">II", head[16:24])
    return w, h


# ---------------------------------------------------------------------------
# Normal maps

def write_normal_map(normals: NormalField, path) -> None:
    """Encode unit normals to 16-bit RGB; invalid pixels become (0, 0, 0),
    which decodes as invalid (n3 <= 0)."""
    n = np.where(normals.valid[..., None], normals.normals, -1.0)
    enc = np.clip(np.rint((n + 1.0) / 2.0 * 65535.0), 0, 65535).astype(np.uint16)
    write_png16_rgb(enc, path)


def read_normal_map(path) -> NormalField:
    """Decode a 16-bit RGB normal map; marks pixels invalid when the raw
    vector is unnormalizable (magnitude < 0.1) or back-facing (n3 <= 0)."""
    enc = read_png16_rgb(path)
    raw = enc.astype(np.float64) / 65535.0 * 2.0 - 1.0
    return make_normal_field(raw)


# ---------------------------------------------------------------------------
# Masks and color images

def write_mask(mask: np.ndarray, path) -> None:
    img = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def read_mask(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "L":
        raise IOFormatError(f"expected 8-bit grayscale mask, got mode {img.mode}")
    return np.asarray(img) > 127


def write_image_rgb(arr: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path)


def read_image_rgb(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def write_texture_rgba(arr: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGBA").save(path)


def read_texture_rgba(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGBA"))


# ---------------------------------------------------------------------------
# UV fields

def write_uv_field(uv: UVField, path) -> None:
    payload = np.where(uv.valid[..., None], uv.uv, np.nan).astype("<f4")
    with open(path, "wb") as f:
        f.write(UV_MAGIC)
        f.write(struct.pack("<II", uv.width, uv.height))
        f.write(payload.tobytes())


def read_uv_field(path) -> UVField:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise IOFormatError(f"UV file is {len(data)} bytes, header needs 12")
    magic = data[:4]
    if magic != UV_MAGIC:
        if magic[:3] == b"UVF":
            raise IOFormatError(f"unsupported version {magic.decode('ascii', 'replace')}")
        raise IOFormatError(f"bad magic {magic!r}")
    w, h = struct.unpack("<II", data[4:12])
    expected = 12 + 8 * w * h
    if len(data) != expected:
        raise IOFormatError(
            f"truncated UV file: {len(data)} bytes, expected {expected} for {w}x{h}")
    uv = np.frombuffer(data[12:], dtype="<f4").reshape(h, w, 2).astype(np.float64)
    valid = ~np.isnan(uv).any(axis=2)
    return UVField(uv, valid)


# ---------------------------------------------------------------------------
# Dataset manifests

@dataclass
class ManifestEntry:
    id: str
    identity: str
    image: Path
    normals: Path
    mask: Path
    unwrapped: Path | None = None


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def labels(self) -> dict[str, str]:
        return {e.id: e.identity for e in self.entries}


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    root = path.parent.resolve()

    def rel(p):
        if p is None:
            return None
        p = Path(p).resolve()
        try:
            return p.relative_to(root).as_posix()
        except ValueError:
            return str(p)

    doc = {"version": manifest.version, "entries": []}
    for e in manifest.entries:
        entry = {"id": e.id, "identity": e.identity, "image": rel(e.image),
                 "normals": rel(e.normals), "mask": rel(e.mask)}
        if e.unwrapped is not None:
            entry["unwrapped"] = rel(e.unwrapped)
        doc["entries"].append(entry)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path, check_files: bool = True) -> Manifest:
    """Load and validate a dataset manifest.

    Validates version, id uniqueness, referenced-file existence, and that
    each entry's mask/normals dimensions match its image.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise IOFormatError(f"cannot read manifest {path}: {e}") from e
    if doc.get("version") != MANIFEST_VERSION:
        raise IOFormatError(f"unsupported manifest version {doc.get('version')!r}")
    entries_doc = doc.get("entries")
    if not isinstance(entries_doc, list):
        raise IOFormatError("manifest has no entries list")
    root = path.parent
    entries = []
    seen = set()
    for raw in entries_doc:
        try:
            eid = raw["id"]
            identity = raw["identity"]
        except (TypeError, KeyError) as e:
            raise IOFormatError(f"manifest entry missing field: {e}") from e
        if eid in seen:
            raise IOFormatError(f"duplicate manifest id {eid!r}")
        seen.add(eid)

        def resolve(key, optional=False):
            val = raw.get(key)
            if val is None:
                if optional:
                    return None
                raise IOFormatError(f"entry {eid!r} missing {key!r} path")
            p = (root / val).resolve()
            if check_files and not p.is_file():
                raise IOFormatError(f"entry {eid!r}: {key} file not found: {p}")
            return p

        entry = ManifestEntry(
            id=eid, identity=identity,
            image=resolve("image"), normals=resolve("normals"),
            mask=resolve("mask"), unwrapped=resolve("unwrapped", optional=True))
        if check_files:
            with Image.open(entry.image) as img:
                iw, ih = img.size
            with Image.open(entry.mask) as img:
                mw, mh = img.size
            nw, nh = png16_size(entry.normals)
            if (mw, mh) != (iw, ih) or (nw, nh) != (iw, ih):
                raise IOFormatError(
                    f"entry {eid!r}: image {iw}x{ih}, mask {mw}x{mh}, "
                    f"normals {nw}x{nh} dimensions differ")
        entries.append(entry)
    return Manifest(entries=entries)
