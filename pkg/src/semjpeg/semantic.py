"""Saliency-driven variable-quality JPEG built from a mosaic of ladder decodes.

Each 8x8 block of the output is copied from the decode of the image at the
quality assigned to the block's saliency level; the mosaic is then encoded
once more with a standard encoder at the quality that lands the file size
on a target.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .jpeg import decode, encode

log = logging.getLogger(__name__)

BLOCK = 8


@dataclass(frozen=True)
class QualityLadder:
    q_low: int = 30
    q_high: int = 70
    levels: int = 5

    def __post_init__(self):
        if not 1 <= self.q_low <= self.q_high <= 100:
            raise ValueError(f"need 1 <= q_low <= q_high <= 100, got {self.q_low}, {self.q_high}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")

    @property
    def qualities(self) -> list[int]:
        return [quality_for_level(self, n) for n in range(self.levels)]


def quality_for_level(ladder: QualityLadder, n: int) -> int:
    """Evenly spaced qualities from q_low (level 0) to q_high (level k-1), rounded half up."""
    if not 0 <= n < ladder.levels:
        raise ValueError(f"level {n} outside 0..{ladder.levels - 1}")
    if ladder.levels == 1:
        return ladder.q_low
    return int(math.floor(ladder.q_low + n * (ladder.q_high - ladder.q_low) / (ladder.levels - 1) + 0.5))


def block_means(saliency: np.ndarray) -> np.ndarray:
    """Mean saliency of each 8x8 block; edge blocks average only real pixels."""
    saliency = np.asarray(saliency, dtype=np.float64)
    h, w = saliency.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    sums = np.pad(saliency, ((0, ph), (0, pw))).reshape((h + ph) // BLOCK, BLOCK, (w + pw) // BLOCK, BLOCK)
    counts = np.pad(np.ones_like(saliency), ((0, ph), (0, pw))).reshape(sums.shape)
    return sums.sum(axis=(1, 3)) / counts.sum(axis=(1, 3))


def discretize(saliency: np.ndarray, levels: int, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Per-block level: the smallest n with block saliency <= (n + 1) / k.

    Level 0 covers [0, 1/k], level n covers (n/k, (n+1)/k].
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    if shape is not None and saliency.shape != tuple(shape):
        raise ValueError(f"saliency map shape {saliency.shape} does not match image shape {tuple(shape)}")
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    means = block_means(saliency)
    out = np.zeros(means.shape, dtype=np.int64)
    for n in range(levels - 1):
        out += means > (n + 1) / levels
    return out


def encode_ladder(image: np.ndarray, ladder: QualityLadder) -> list[np.ndarray]:
    """decode(encode(image, Q_n)) for every level; equal qualities share one roundtrip."""
    cache: dict[int, np.ndarray] = {}
    out = []
    for q in ladder.qualities:
        if q not in cache:
            cache[q] = decode(encode(image, q))
            if cache[q].shape != image.shape:
                raise ValueError(f"roundtrip at Q={q} changed shape {image.shape} -> {cache[q].shape}")
        out.append(cache[q])
    return out


def assemble_mosaic(ladder_images: list[np.ndarray], levels: np.ndarray) -> np.ndarray:
    """Copy every 8x8 block verbatim from the ladder image its level selects."""
    if not ladder_images:
        raise ValueError("no ladder images")
    shape = ladder_images[0].shape
    if any(img.shape != shape for img in ladder_images):
        raise ValueError("ladder images differ in shape")
    h, w = shape[:2]
    grid = (-(-h // BLOCK), -(-w // BLOCK))
    levels = np.asarray(levels)
    if levels.shape != grid:
        raise ValueError(f"level map {levels.shape} does not match block grid {grid}")
    if levels.min() < 0 or levels.max() >= len(ladder_images):
        raise ValueError(f"level map uses levels up to {levels.max()} but only {len(ladder_images)} ladder images")
    per_pixel = np.repeat(np.repeat(levels, BLOCK, axis=0), BLOCK, axis=1)[:h, :w]
    out = np.empty_like(ladder_images[0])
    for n, img in enumerate(ladder_images):
        sel = per_pixel == n
        out[sel] = img[sel]
    return out


@dataclass
class SizedStream:
    stream: bytes
    quality: int
    in_tolerance: bool

    @property
    def size(self) -> int:
        return len(self.stream)


def final_encode(image: np.ndarray, target_size: int, tolerance: float = 0.01) -> SizedStream:
    """Highest quality whose stream size is within ``tolerance`` of ``target_size``.

    Binary search for the largest Q with size <= target * (1 + tolerance),
    assuming size grows with Q. If that Q (or its successor) is not within
    tolerance, the closer of the two is returned and flagged.
    """
    if target_size <= 0:
        raise ValueError(f"target size must be positive, got {target_size}")
    cache: dict[int, bytes] = {}

    def stream(q: int) -> bytes:
        if q not in cache:
            cache[q] = encode(image, q)
        return cache[q]

    def within(q: int) -> bool:
        return abs(len(stream(q)) - target_size) <= tolerance * target_size

    upper = target_size * (1 + tolerance)
    lo, hi = 1, 100
    if len(stream(1)) > upper:
        best = 1
    else:
        # invariant: size(lo) <= upper
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if len(stream(mid)) <= upper:
                lo = mid
            else:
                hi = mid - 1
        best = lo
    if within(best):
        return SizedStream(stream(best), best, True)
    candidates = [best] + ([best + 1] if best < 100 else [])
    q = min(candidates, key=lambda c: (abs(len(stream(c)) - target_size), -c))
    log.info("no quality within %.2f%% of %d bytes; closest Q=%d gives %d bytes",
             100 * tolerance, target_size, q, len(stream(q)))
    return SizedStream(stream(q), q, within(q))


@dataclass
class SemanticResult(SizedStream):
    levels: np.ndarray = None  # type: ignore[assignment]
    mosaic: np.ndarray = None  # type: ignore[assignment]


def semantic_compress(image: np.ndarray, saliency: np.ndarray, ladder: QualityLadder,
                      target_size: int, tolerance: float = 0.01) -> SemanticResult:
    image = np.asarray(image)
    levels = discretize(saliency, ladder.levels, shape=image.shape[:2])
    ladder_images = encode_ladder(image, ladder)
    mosaic = assemble_mosaic(ladder_images, levels)
    final = final_encode(mosaic, target_size, tolerance)
    return SemanticResult(final.stream, final.quality, final.in_tolerance, levels=levels, mosaic=mosaic)
