"""Binary PPM/PGM codecs for images and segmentation masks.

Images travel as P6 with maxval 255; pixel values map linearly from
[-1, 1] to [0, 255] and round half-up on export. Masks travel as P5
with the raw item id as the gray value, and must form an exact
partition when loaded. Headers follow the netpbm rules: tokens split
on whitespace, '#' comments run to end of line, and a single
whitespace byte separates the header from the payload.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigError, CorruptionError
from .masks import MAX_ITEMS, SegmentationMap, validate_partition


def _header_tokens(data: bytes, count: int) -> tuple:
    """Read `count` whitespace-separated tokens after the magic, skipping
    comments. Returns the tokens and the payload offset."""
    pos = 2  # caller checked the two magic bytes
    tokens = []
    while len(tokens) < count:
        if pos >= len(data):
            raise CorruptionError("file ends inside the header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() \
                    and data[pos:pos + 1] != b"#":
                pos += 1
            tok = data[start:pos]
            if not tok.isdigit():
                raise CorruptionError(f"non-numeric header token {tok!r}")
            tokens.append(int(tok))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise CorruptionError("missing whitespace between header and payload")
    return tokens, pos + 1


def image_to_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ConfigError(f"image must be HxWx3, got shape {img.shape}")
    u = np.floor((img + 1.0) * 0.5 * 255.0 + 0.5)
    u8 = np.clip(u, 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + u8.tobytes()


def ppm_to_image(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise CorruptionError(f"not a binary color image: magic {data[:2]!r}")
    (w, h, maxval), off = _header_tokens(data, 3)
    if maxval != 255:
        raise CorruptionError(f"unsupported maxval {maxval}, expected 255")
    need = w * h * 3
    payload = data[off:off + need]
    if len(payload) < need:
        raise CorruptionError(f"payload holds {len(payload)} bytes, needs {need}")
    u8 = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return (u8.astype(np.float32) / 255.0) * 2.0 - 1.0


def mask_to_pgm(m: SegmentationMap) -> bytes:
    validate_partition(m)
    return b"P5\n%d %d\n255\n" % (m.width, m.height) \
        + m.labels.astype(np.uint8).tobytes()


def pgm_to_mask(data: bytes, n_items: Optional[int] = None) -> SegmentationMap:
    if data[:2] != b"P5":
        raise CorruptionError(f"not a binary gray image: magic {data[:2]!r}")
    (w, h, maxval), off = _header_tokens(data, 3)
    if maxval != 255:
        raise CorruptionError(f"unsupported maxval {maxval}, expected 255")
    need = w * h
    payload = data[off:off + need]
    if len(payload) < need:
        raise CorruptionError(f"payload holds {len(payload)} bytes, needs {need}")
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.int32)
    if n_items is None:
        n_items = int(labels.max()) + 1
    if not 1 <= n_items <= MAX_ITEMS:
        raise CorruptionError(
            f"mask references {n_items} items, allowed range [1, {MAX_ITEMS}]")
    m = SegmentationMap(labels, n_items)
    validate_partition(m)
    return m


def save_image(path: str, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(image_to_ppm(image))


def load_image(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        return ppm_to_image(f.read())


def save_mask(path: str, m: SegmentationMap) -> None:
    with open(path, "wb") as f:
        f.write(mask_to_pgm(m))


def load_mask(path: str, n_items: Optional[int] = None) -> SegmentationMap:
    with open(path, "rb") as f:
        return pgm_to_mask(f.read(), n_items)
