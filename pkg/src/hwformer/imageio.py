"""Binary PGM (P5) / PPM (P6) codecs and the in-memory image type."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    MalformedHeaderError,
    TruncatedPayloadError,
    UnsupportedDepthError,
    UnsupportedFormatError,
)

GRAY = "gray"
RGB = "rgb"
_WHITESPACE = b" \t\n\r\x0b\x0c"


@dataclass
class ImageBuffer:
    """Pixels stored as ``(H, W, C)``: uint8 in [0, 255] or floats in unit scale."""

    data: np.ndarray
    colorspace: str = GRAY

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise DataError(f"image data must be (H, W, 1|3), got {data.shape}")
        if data.dtype != np.uint8:
            if data.dtype.kind != "f":
                raise DataError(f"unsupported pixel dtype {data.dtype}")
            if not np.isfinite(data).all():
                raise DataError("image contains non-finite values")
        self.data = data
        self.colorspace = GRAY if data.shape[2] == 1 else RGB

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def is_8bit(self) -> bool:
        return self.data.dtype == np.uint8

    def to_unit(self, dtype=np.float64) -> np.ndarray:
        if self.is_8bit:
            return self.data.astype(dtype) / 255.0
        return self.data.astype(dtype)

    def to_255(self) -> np.ndarray:
        """Float pixels on the 0-255 scale."""
        if self.is_8bit:
            return self.data.astype(np.float64)
        return self.data.astype(np.float64) * 255.0

    def to_8bit(self) -> "ImageBuffer":
        if self.is_8bit:
            return self
        return ImageBuffer(quantize(self.data * 255.0))

    @classmethod
    def from_unit(cls, array: np.ndarray) -> "ImageBuffer":
        return cls(quantize(np.asarray(array) * 255.0))


def quantize(values_255: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values_255), 0, 255).astype(np.uint8)


def _skip_space_and_comments(buf: bytes, pos: int) -> int:
    while pos < len(buf):
        ch = buf[pos:pos + 1]
        if ch in (b"",):
            break
        if ch[0] in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            while pos < len(buf) and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    return pos


def _read_int(buf: bytes, pos: int, what: str):
    pos = _skip_space_and_comments(buf, pos)
    start = pos
    while pos < len(buf) and 48 <= buf[pos] <= 57:
        pos += 1
    if pos == start:
        raise MalformedHeaderError(f"expected {what}", start)
    return int(buf[start:pos]), pos


def decode_pnm(buf: bytes) -> ImageBuffer:
    if len(buf) < 2 or buf[:1] != b"P":
        raise MalformedHeaderError("missing PNM magic number", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"unsupported PNM variant {magic!r}", 0)
    channels = 1 if magic == b"P5" else 3
    pos = 2
    if pos >= len(buf) or buf[pos] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        raise MalformedHeaderError("expected whitespace after magic number", pos)
    width, pos = _read_int(buf, pos, "width")
    height, pos = _read_int(buf, pos, "height")
    maxval_at = _skip_space_and_comments(buf, pos)
    maxval, pos = _read_int(buf, pos, "maxval")
    if width < 1 or height < 1:
        raise MalformedHeaderError("image dimensions must be positive", maxval_at)
    if maxval < 1 or maxval > 65535:
        raise MalformedHeaderError(f"maxval {maxval} out of range", maxval_at)
    if maxval > 255:
        raise UnsupportedDepthError(f"16-bit samples (maxval {maxval}) are not supported", maxval_at)
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise MalformedHeaderError("expected a single whitespace byte before pixel data", pos)
    pos += 1
    expected = width * height * channels
    payload = buf[pos:pos + expected]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"pixel data holds {len(payload)} of {expected} bytes", pos + len(payload)
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        pixels = quantize(pixels.astype(np.float64) * (255.0 / maxval))
    return ImageBuffer(pixels.copy())


def encode_pnm(image: ImageBuffer) -> bytes:
    img = image.to_8bit()
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.data).tobytes()


def read_image(path) -> ImageBuffer:
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".pgm", ".ppm", ".pnm"):
        raise UnsupportedFormatError(f"{path}: only PGM/PPM files are supported")
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return decode_pnm(buf)
    except DataError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


def write_image(image: ImageBuffer, path) -> None:
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm" and image.channels != 1:
        raise DataError(f"{path}: PGM holds one channel, image has {image.channels}")
    if ext == ".ppm" and image.channels != 3:
        raise DataError(f"{path}: PPM holds three channels, image has {image.channels}")
    if ext not in (".pgm", ".ppm", ".pnm"):
        raise UnsupportedFormatError(f"{path}: only PGM/PPM files are supported")
    with open(path, "wb") as f:
        f.write(encode_pnm(image))
