"""2-D sample grids, clamp-to-border bilinear sampling and file I/O.

A plane is a 2-D float64 array ``(height, width)``; a field map is a 3-D
float64 array ``(channels, height, width)``.  Pixel centres sit at integer
coordinates, ``x`` is the column and ``y`` the row, origin top-left.
"""

import math
import os
import struct
import tempfile

import numpy as np

MAGIC = b"DKW1"
HEADER = struct.Struct("<4sIII")
MAX_AXIS = 1 << 16


class TensorFormatError(ValueError):
    """Malformed tensor or image file."""


def as_plane(samples, name="plane"):
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: expected a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite samples")
    return arr


def as_fieldmap(samples, channels=None, name="field map"):
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"{name}: expected a non-empty (C, H, W) array, got shape {arr.shape}")
    if channels is not None and arr.shape[0] != channels:
        raise ValueError(f"{name}: expected {channels} channels, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite samples")
    return arr


def bilinear_corners(height, width, x, y):
    """Clamped corner indices and fractional parts for sample positions.

    Returns ``(x0, x1, y0, y1, tx, ty)`` where ``x0 <= x < x0 + 1`` before
    clamping.  Coordinates are first clipped to ``[-1, width]`` (resp.
    height); this does not change any sampled value and keeps ``floor``
    within integer range for huge offsets.
    """
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, float(width))
    y = np.clip(np.asarray(y, dtype=np.float64), -1.0, float(height))
    fx = np.floor(x)
    fy = np.floor(y)
    tx = x - fx
    ty = y - fy
    x0 = fx.astype(np.int64)
    y0 = fy.astype(np.int64)
    x1 = np.clip(x0 + 1, 0, width - 1)
    y1 = np.clip(y0 + 1, 0, height - 1)
    x0 = np.clip(x0, 0, width - 1)
    y0 = np.clip(y0, 0, height - 1)
    return x0, x1, y0, y1, tx, ty


def sample(planes, x, y):
    """Vectorised bilinear sampling.

    ``planes`` is ``(H, W)`` or ``(C, H, W)``; ``x`` and ``y`` broadcast
    together.  Returns values of shape ``x.shape`` (or ``(C,) + x.shape``).
    """
    h, w = planes.shape[-2:]
    x0, x1, y0, y1, tx, ty = bilinear_corners(h, w, x, y)
    tl = planes[..., y0, x0]
    tr = planes[..., y0, x1]
    bl = planes[..., y1, x0]
    br = planes[..., y1, x1]
    return (1 - tx) * (1 - ty) * tl + tx * (1 - ty) * tr + (1 - tx) * ty * bl + tx * ty * br


def bilinear_sample(plane, x, y):
    """Sample one plane at a single real position with clamp-to-border."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite sample coordinate ({x}, {y})")
    h, w = plane.shape
    x = min(max(x, -1.0), float(w))
    y = min(max(y, -1.0), float(h))
    fx, fy = math.floor(x), math.floor(y)
    tx, ty = x - fx, y - fy
    x0, x1 = min(max(fx, 0), w - 1), min(max(fx + 1, 0), w - 1)
    y0, y1 = min(max(fy, 0), h - 1), min(max(fy + 1, 0), h - 1)
    return float(
        (1 - tx) * (1 - ty) * plane[y0, x0]
        + tx * (1 - ty) * plane[y0, x1]
        + (1 - tx) * ty * plane[y1, x0]
        + tx * ty * plane[y1, x1]
    )


def atomic_write_bytes(path, payload):
    """Write to a temporary sibling and rename, so failures leave no partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(fmap):
    fmap = as_fieldmap(fmap)
    c, h, w = fmap.shape
    if max(c, h, w) > MAX_AXIS:
        raise TensorFormatError(f"dimension exceeds {MAX_AXIS}: {fmap.shape}")
    return HEADER.pack(MAGIC, c, h, w) + fmap.astype("<f4").tobytes(order="C")


def decode_tensor(data):
    if len(data) < HEADER.size:
        raise TensorFormatError(
            f"truncated header at byte {len(data)}: expected {HEADER.size} bytes, got {len(data)}"
        )
    magic, c, h, w = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic at byte 0: expected {MAGIC!r}, got {magic!r}")
    for offset, name, value in ((4, "channels", c), (8, "height", h), (12, "width", w)):
        if value == 0 or value > MAX_AXIS:
            raise TensorFormatError(
                f"invalid {name}={value} at byte {offset}: must be in [1, {MAX_AXIS}]"
            )
    expected = HEADER.size + 4 * c * h * w
    if len(data) != expected:
        kind = "truncated payload" if len(data) < expected else "trailing bytes after payload"
        raise TensorFormatError(
            f"{kind} at byte {min(len(data), expected)}: expected {expected} bytes, got {len(data)}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(c, h, w)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("payload contains non-finite samples")
    return arr.astype(np.float64)


def write_tensor(fmap, path):
    atomic_write_bytes(path, encode_tensor(fmap))


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def _ppm_tokens(data, count):
    # Header tokens are whitespace separated; '#' starts a comment to end of line.
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TensorFormatError(f"truncated PPM header at byte {pos}")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_ppm(data):
    tokens, pos = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise TensorFormatError(f"unsupported image type {tokens[0]!r}: only binary PPM (P6)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise TensorFormatError("non-integer PPM header field") from None
    if maxval != 255:
        raise TensorFormatError(f"unsupported bit depth: maxval {maxval}, expected 255")
    if not (0 < w <= MAX_AXIS and 0 < h <= MAX_AXIS):
        raise TensorFormatError(f"invalid PPM dimensions {w}x{h}")
    expected = pos + 3 * w * h
    if len(data) < expected:
        raise TensorFormatError(
            f"truncated PPM raster at byte {len(data)}: expected {expected} bytes, got {len(data)}"
        )
    raster = np.frombuffer(data, dtype=np.uint8, count=3 * w * h, offset=pos)
    return raster.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def quantize(fmap):
    """Round-half-up to bytes after clamping to [0, 1]."""
    return np.floor(np.clip(fmap, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_ppm(fmap):
    fmap = as_fieldmap(fmap, name="image")
    if fmap.shape[0] == 1:
        fmap = np.repeat(fmap, 3, axis=0)
    if fmap.shape[0] != 3:
        raise ValueError(f"image: expected 1 or 3 channels, got {fmap.shape[0]}")
    _, h, w = fmap.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + quantize(fmap).transpose(1, 2, 0).tobytes()


def read_image(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_image(fmap, path):
    atomic_write_bytes(path, encode_ppm(fmap))
