"""Binary PPM (P6) and PGM (P5) with maxval 255."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _header(data: bytes) -> tuple[bytes, list[int], int]:
    """Parse magic and three integer fields; returns (magic, [w, h, maxval], payload offset)."""
    if len(data) < 2:
        raise NetpbmError("file too short for magic number", 0)
    magic = data[:2]
    pos = 2
    values = []
    while len(values) < 3:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError("expected an integer header field", pos)
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise NetpbmError("header must end with a single whitespace byte", pos)
    return magic, values, pos + 1


def parse(data: bytes) -> np.ndarray:
    """Decode P6 to (H, W, 3) or P5 to (H, W) uint8."""
    magic, (width, height, maxval), offset = _header(data)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r}; expected binary P5 or P6", 0)
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval}; only 255 is accepted", offset - 1)
    if width < 1 or height < 1:
        raise NetpbmError(f"bad dimensions {width}x{height}", offset - 1)
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    if len(data) - offset < need:
        raise NetpbmError(f"truncated payload: need {need} bytes, have {len(data) - offset}", len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return pixels.reshape(shape).copy()


def dumps(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 samples, got {image.dtype}")
    if image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    elif image.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"expected (H, W, 3) or (H, W) image, got shape {image.shape}")
    h, w = image.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(image).tobytes()


def write_atomic(path: str | Path, data: bytes) -> None:
    """Write to a sibling temp file then rename, so readers never see partial output."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        tmp.write_bytes(data)
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_ppm(path: str | Path) -> np.ndarray:
    img = parse(Path(path).read_bytes())
    if img.ndim != 3:
        raise NetpbmError(f"{path}: expected a P6 colour image", 0)
    return img


def load_pgm(path: str | Path) -> np.ndarray:
    img = parse(Path(path).read_bytes())
    if img.ndim != 2:
        raise NetpbmError(f"{path}: expected a P5 greyscale image", 0)
    return img


def save_ppm(path: str | Path, image: np.ndarray) -> None:
    if np.asarray(image).ndim != 3:
        raise ValueError("save_ppm needs an (H, W, 3) image")
    write_atomic(path, dumps(image))


def save_pgm(path: str | Path, image: np.ndarray) -> None:
    if np.asarray(image).ndim != 2:
        raise ValueError("save_pgm needs an (H, W) image")
    write_atomic(path, dumps(image))


def saliency_to_pgm(saliency: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> 0..255, rounding half up."""
    s = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, 1.0)
    return np.floor(s * 255.0 + 0.5).astype(np.uint8)


def pgm_to_saliency(pgm: np.ndarray) -> np.ndarray:
    return np.asarray(pgm, dtype=np.float64) / 255.0


def save_saliency(path: str | Path, saliency: np.ndarray) -> None:
    save_pgm(path, saliency_to_pgm(saliency))


def load_saliency(path: str | Path) -> np.ndarray:
    return pgm_to_saliency(load_pgm(path))
