"""PPM image input and pixel-centre coordinates."""
from __future__ import annotations

import numpy as np

from ..errors import FormatError, ParameterError


def _header_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError("truncated PPM header")
        tokens.append(data[start:i])
    if i >= n and tokens[0] == b"P6":
        raise FormatError("PPM header is not followed by pixel data")
    return tokens, i + 1


def parse_ppm(data: bytes) -> np.ndarray:
    """Decode a P3 or P6 image with max value 255 into an (H, W, 3) array in [0, 1]."""
    if data[:2] not in (b"P3", b"P6"):
        raise FormatError("not a PPM file (expected magic P3 or P6)")
    tokens, offset = _header_tokens(data, 4)
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-numeric PPM header field") from None
    if width < 1 or height < 1:
        raise FormatError(f"invalid PPM size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM (max value 255) is supported, got {maxval}")
    count = width * height * 3
    if magic == b"P6":
        body = data[offset:offset + count]
        if len(body) != count:
            raise FormatError(f"PPM pixel data truncated: {len(body)} of {count} bytes")
        pixels = np.frombuffer(body, dtype=np.uint8)
    else:
        text = data[offset - 1:].split()
        try:
            values = [int(v) for v in text if not v.startswith(b"#")]
        except ValueError:
            raise FormatError("non-numeric sample in P3 body") from None
        if len(values) < count:
            raise FormatError(f"PPM pixel data truncated: {len(values)} of {count} samples")
        pixels = np.asarray(values[:count])
        if pixels.min() < 0 or pixels.max() > maxval:
            raise FormatError("P3 sample outside [0, 255]")
    return pixels.reshape(height, width, 3).astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_ppm(fh.read())


def encode_ppm(image, binary: bool = True) -> bytes:
    """Encode an (H, W, 3) array in [0, 1] as an 8-bit PPM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ParameterError(f"expected an (H, W, 3) image, got shape {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = q.shape
    if binary:
        return f"P6\n{w} {h}\n255\n".encode() + q.tobytes()
    rows = (" ".join(str(v) for v in row.reshape(-1)) for row in q)
    return (f"P3\n{w} {h}\n255\n" + "\n".join(rows) + "\n").encode()


def downsample(grid, factor: int) -> np.ndarray:
    """Every ``factor``-th pixel in both directions, starting at index 0."""
    if factor < 1:
        raise ParameterError("downsample factor must be at least 1")
    return np.asarray(grid)[::factor, ::factor]


def pixel_centers(height: int, width: int) -> np.ndarray:
    """Pixel-centre coordinates in [-1, 1]^2, row-major, as (x_j, y_i) pairs."""
    xs = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    ys = (np.arange(height) + 0.5) / height * 2.0 - 1.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)


def check_budget(image, max_pixels: int) -> None:
    h, w = np.asarray(image).shape[:2]
    if h * w > max_pixels:
        raise ParameterError(f"image of {h}x{w} = {h * w} pixels exceeds the budget of {max_pixels}; "
                             "raise max_pixels or the downsample factor")
