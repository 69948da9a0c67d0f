"""Binary PPM (P6, 8-bit) image reading and writing.

Images cross this boundary as float arrays in [0, 1]; quantization is
round-to-nearest on write.
"""

import numpy as np


class PpmFormatError(ValueError):
    """Raised on malformed PPM data."""


def write_ppm(path, image):
    """Write an (H, W, 3) float image in [0, 1] as binary 8-bit PPM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    h, w = image.shape[:2]
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path):
    """Read a binary 8-bit PPM into an (H, W, 3) float array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    # Header: magic, width, height, maxval, separated by whitespace with
    # optional '#' comments, then a single whitespace byte before pixels.
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PpmFormatError(f"truncated header in {path}")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise PpmFormatError(f"not a binary PPM: {path}")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise PpmFormatError(f"bad header numbers in {path}") from exc
    if maxval != 255:
        raise PpmFormatError(f"unsupported maxval {maxval} in {path}")
    if w < 1 or h < 1:
        raise PpmFormatError(f"bad dimensions in {path}")
    expect = 3 * w * h
    raw = data[pos : pos + expect]
    if len(raw) != expect:
        raise PpmFormatError(f"truncated pixel data in {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3) / 255.0
