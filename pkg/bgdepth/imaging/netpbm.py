"""Binary Netpbm (P5 / P6) codec and the 16-bit depth format with its scale sidecar."""
import os
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import structlog

from bgdepth.exceptions import (
    DepthScaleError,
    ImageValueError,
    MalformedHeaderError,
    NetpbmError,
    TruncatedPayloadError,
    UnsupportedMagicError,
    UnwritablePathError,
)
from bgdepth.imaging.convert import to_gray
from bgdepth.imaging.types import DepthMap, ImageGray, ImageRGB

logger = structlog.get_logger(__name__)

MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}
WHITESPACE = b" \t\n\r\x0b\x0c"
DEFAULT_DEPTH_SCALE = 1.0 / 1000.0
SIDECAR_SUFFIX = ".meta"

PathLike = Union[str, os.PathLike]


def _round_half_away(values):
    # inputs are non-negative, so half-away-from-zero is floor(v + 0.5)
    return np.floor(values + 0.5)


def _parse_header(blob: bytes, path) -> Tuple[bytes, int, int, int, int]:
    magic = blob[:2]
    if magic not in MAGIC_CHANNELS:
        raise UnsupportedMagicError(f"{path}: unsupported magic number {magic!r}")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(blob):
            raise MalformedHeaderError(f"{path}: header ends before width/height/maxval")
        byte = blob[pos:pos + 1]
        if byte[0] in WHITESPACE:
            pos += 1
            continue
        if byte == b"#":
            end = blob.find(b"\n", pos)
            if end < 0:
                raise MalformedHeaderError(f"{path}: unterminated header comment")
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and blob[pos] not in WHITESPACE and blob[pos:pos + 1] != b"#":
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise MalformedHeaderError(f"{path}: header field {token!r} is not a decimal integer")
        tokens.append(int(token))
    if pos >= len(blob) or blob[pos] not in WHITESPACE:
        raise MalformedHeaderError(f"{path}: missing whitespace after maxval")
    width, height, maxval = tokens
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{path}: image dimensions must be positive, got {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise MalformedHeaderError(f"{path}: maxval {maxval} outside 1..65535")
    return magic, width, height, maxval, pos + 1


def read_netpbm(path: PathLike) -> Tuple[np.ndarray, int]:
    """Decode a P5/P6 file into an integer array (H, W) or (H, W, 3) plus its maxval."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise NetpbmError(f"Cannot read {path}: {e}") from e
    magic, width, height, maxval, offset = _parse_header(blob, path)
    channels = MAGIC_CHANNELS[magic]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    payload = blob[offset:offset + expected]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    samples = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    if samples.size and samples.max() > maxval:
        raise MalformedHeaderError(f"{path}: sample value exceeds maxval {maxval}")
    shape = (height, width) if channels == 1 else (height, width, channels)
    return samples.reshape(shape), maxval


def write_netpbm(path: PathLike, samples: np.ndarray, maxval: int):
    samples = np.asarray(samples)
    magic = b"P5" if samples.ndim == 2 else b"P6"
    height, width = samples.shape[:2]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = magic + f"\n{width} {height}\n{maxval}\n".encode("ascii")
    try:
        with open(path, "wb") as handle:
            handle.write(header)
            handle.write(samples.astype(dtype).tobytes())
    except OSError as e:
        raise UnwritablePathError(f"Cannot write {path}: {e}") from e


def load_image(path: PathLike) -> ImageRGB:
    samples, maxval = read_netpbm(path)
    values = samples.astype(np.float64) / maxval
    if values.ndim == 2:
        values = np.repeat(values[:, :, None], 3, axis=2)
    return ImageRGB(values)


def load_gray(path: PathLike) -> ImageGray:
    samples, maxval = read_netpbm(path)
    values = samples.astype(np.float64) / maxval
    if values.ndim == 3:
        return to_gray(ImageRGB(values))
    return ImageGray(values)


def save_image(img: Union[ImageGray, ImageRGB], path: PathLike, maxval: int = 255):
    if not 1 <= maxval <= 65535:
        raise ImageValueError(f"maxval {maxval} outside 1..65535")
    samples = _round_half_away(img.data * maxval).astype(np.int64)
    write_netpbm(path, samples, maxval)


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_suffix(SIDECAR_SUFFIX)


def read_sidecar(path: PathLike) -> dict:
    entries = {}
    for raw_line in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DepthScaleError(f"{path}: sidecar line {raw_line!r} is not key=value")
        entries[key.strip()] = value.strip()
    return entries


def _depth_scale(path: Path) -> float:
    meta = sidecar_path(path)
    if not meta.exists():
        return DEFAULT_DEPTH_SCALE
    entries = read_sidecar(meta)
    try:
        scale = float(entries.get("scale", DEFAULT_DEPTH_SCALE))
    except ValueError as e:
        raise DepthScaleError(f"{meta}: scale is not a number") from e
    if not scale > 0:
        raise DepthScaleError(f"{meta}: depth scale must be positive, got {scale}")
    return scale


def load_depth(path: PathLike) -> DepthMap:
    path = Path(path)
    samples, _ = read_netpbm(path)
    if samples.ndim != 2:
        raise MalformedHeaderError(f"{path}: depth maps must be single-channel PGM")
    scale = _depth_scale(path)
    mask = samples > 0
    return DepthMap(samples.astype(np.float64) * scale, mask)


def save_depth(depth: DepthMap, path: PathLike, scale: float = DEFAULT_DEPTH_SCALE):
    if not scale > 0:
        raise DepthScaleError(f"Depth scale must be positive, got {scale}")
    path = Path(path)
    codes = _round_half_away(depth.data / scale)
    # a valid depth must never collapse onto the invalid sentinel
    codes = np.where(depth.mask, np.maximum(codes, 1), 0)
    if codes.max(initial=0) > 65535:
        raise DepthScaleError(
            f"Depth {depth.data.max()} m does not fit 16 bits at scale {scale}"
        )
    write_netpbm(path, codes.astype(np.int64), 65535)
    try:
        sidecar_path(path).write_text(f"scale={scale!r}\n", encoding="utf-8")
    except OSError as e:
        raise UnwritablePathError(f"Cannot write depth sidecar for {path}: {e}") from e
    logger.debug("Saved depth map", path=str(path), scale=scale, n_valid=depth.n_valid)
