"""Binary file formats: SWTF tensors and 8-bit P5 PGM images.

SWTF layout (little-endian throughout):

    magic  "SWTF" (4 bytes)
    u8     format version (currently 1)
    u32    rank
    u32[rank] dimension sizes
    f64[prod(dims)] payload, row-major

PGM files are binary ``P5`` with maxval 255. Pixel values map affinely
between [-1, 1] and [0, 255]: ``byte = round((v + 1) * 127.5)`` clipped to
[0, 255], and back via ``v = byte / 127.5 - 1``. The byte round trip is
exact; the float round trip quantizes to 8 bits.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

SWTF_MAGIC = b"SWTF"
SWTF_VERSION = 1


def write_swtf(fh, arr: np.ndarray) -> None:
    """Append one tensor to an open binary stream."""
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(SWTF_MAGIC)
    fh.write(struct.pack("<B", SWTF_VERSION))
    fh.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_swtf(fh) -> np.ndarray:
    """Read one tensor from an open binary stream."""
    base = fh.tell()
    magic = fh.read(4)
    if magic != SWTF_MAGIC:
        raise FormatError(base, f"bad magic {magic!r}, expected {SWTF_MAGIC!r}")
    ver = fh.read(1)
    if len(ver) != 1 or ver[0] != SWTF_VERSION:
        raise FormatError(base + 4, f"unsupported version {ver!r}")
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError(base + 5, "truncated rank field")
    rank = struct.unpack("<I", raw)[0]
    dims = []
    for i in range(rank):
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError(base + 9 + 4 * i, "truncated dimension field")
        dims.append(struct.unpack("<I", raw)[0])
    count = int(np.prod(dims)) if dims else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise FormatError(base + 9 + 4 * rank, "truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_swtf(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_swtf(fh)


def to_bytes_pgm(img: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to uint8 [0, 255]."""
    b = np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(b, 0, 255).astype(np.uint8)


def from_bytes_pgm(b: np.ndarray) -> np.ndarray:
    """Map uint8 [0, 255] back to [-1, 1] floats."""
    return np.asarray(b, dtype=np.float64) / 127.5 - 1.0


def write_pgm(path, img: np.ndarray) -> None:
    """Write a 2-D image in [-1, 1] as binary P5, maxval 255."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError(0, f"PGM needs a 2-D image, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(to_bytes_pgm(img).tobytes())


def _parse_pgm_token(data: bytes, pos: int):
    # Skip whitespace and '#' comments, return (token, next position).
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise FormatError(pos, "unexpected end of header")
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM into a 2-D float array in [-1, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FormatError(0, f"bad magic {data[:2]!r}, expected b'P5'")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _parse_pgm_token(data, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(pos - len(tok), f"non-numeric header token {tok!r}") from None
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(pos - len(str(maxval)), f"maxval must be 255, got {maxval}")
    if w <= 0 or h <= 0:
        raise FormatError(2, f"bad dimensions {w}x{h}")
    pos += 1  # exactly one whitespace byte separates header and raster
    raster = data[pos : pos + w * h]
    if len(raster) != w * h:
        raise FormatError(pos, f"raster truncated: need {w * h} bytes, got {len(raster)}")
    return from_bytes_pgm(np.frombuffer(raster, dtype=np.uint8).reshape(h, w))
