"""Procedural shapes-on-texture images with exact object masks and labels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SHAPES = ("disk", "square", "triangle", "ring", "cross", "bar")


@dataclass(frozen=True)
class SyntheticSpec:
    count: int = 500
    size: int = 64
    shapes: tuple[str, ...] = SHAPES
    min_objects: int = 1
    max_objects: int = 3
    noise: float = 12.0
    radius: tuple[float, float] = (0.11, 0.19)
    seed: int = 0


@dataclass
class Sample:
    image: np.ndarray
    masks: list[np.ndarray]
    categories: list[int]
    raw_labels: list[str]

    @property
    def saliency(self) -> np.ndarray:
        """Union of object masks as a 0/1 float map."""
        out = np.zeros(self.image.shape[:2])
        for m in self.masks:
            out[m] = 1.0
        return out


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    samples: list[Sample] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def images(self) -> np.ndarray:
        return np.stack([s.image for s in self.samples])

    @property
    def labels(self) -> list[list[str]]:
        return [s.raw_labels for s in self.samples]


def default_merge_table(shapes=SHAPES) -> dict[str, int]:
    """Both size variants of a shape collapse onto the shape's category."""
    return {f"{shape}_{variant}": i for i, shape in enumerate(shapes) for variant in ("small", "large")}


def shape_mask(shape: str, size: int, cy: float, cx: float, r: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    d = np.hypot(dx, dy)
    if shape == "disk":
        return d <= r
    if shape == "square":
        return (np.abs(u) <= 0.75 * r) & (np.abs(v) <= 0.75 * r)
    if shape == "ring":
        return (d <= r) & (d >= 0.55 * r)
    if shape == "cross":
        arm = 0.3 * r
        return ((np.abs(u) <= r) & (np.abs(v) <= arm)) | ((np.abs(v) <= r) & (np.abs(u) <= arm))
    if shape == "bar":
        return (np.abs(u) <= r) & (np.abs(v) <= 0.28 * r)
    if shape == "triangle":
        inside = np.ones_like(d, dtype=bool)
        for k in range(3):
            t = angle + 2 * np.pi * k / 3
            # edge normal pointing outward; inradius r/2 for circumradius r
            inside &= (np.cos(t) * dx + np.sin(t) * dy) <= 0.5 * r
        return inside
    raise ValueError(f"unknown shape {shape!r}")


def _background(rng: np.random.Generator, size: int, noise: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(60, 190, size=3)
    gy, gx = rng.uniform(-50, 50, size=(2, 3))
    img = base + gy * (yy[..., None] - 0.5) + gx * (xx[..., None] - 0.5)
    # low-frequency blotches plus per-pixel grain
    coarse = rng.normal(0, noise, size=(size // 8 + 2, size // 8 + 2, 1))
    coarse = np.kron(coarse, np.ones((8, 8, 1)))[:size, :size]
    return img + coarse + rng.normal(0, noise, size=(size, size, 3))


def _object_color(rng: np.random.Generator, bg_mean: np.ndarray) -> np.ndarray:
    while True:
        col = rng.uniform(0, 255, size=3)
        if np.abs(col - bg_mean).sum() > 200:
            return col


def make_synthetic_dataset(spec: SyntheticSpec) -> SyntheticDataset:
    """Render ``spec.count`` images with non-overlapping objects.

    Categories are drawn so that per-category counts stay balanced: each
    image takes the least-used categories, ties broken by the seeded RNG.
    """
    if not spec.shapes:
        raise ValueError("at least one category is required")
    if not 1 <= spec.min_objects <= spec.max_objects:
        raise ValueError(f"bad object count range {spec.min_objects}..{spec.max_objects}")
    if spec.max_objects > len(spec.shapes):
        raise ValueError("more objects per image than categories")
    rng = np.random.default_rng(spec.seed)
    counts = np.zeros(len(spec.shapes), dtype=int)
    size = spec.size
    r_lo, r_hi = spec.radius[0] * size, spec.radius[1] * size
    r_mid = 0.5 * (r_lo + r_hi)
    out = SyntheticDataset(spec)
    for _ in range(spec.count):
        n_obj = int(rng.integers(spec.min_objects, spec.max_objects + 1))
        tiebreak = rng.random(len(spec.shapes))
        cats = sorted(np.lexsort((tiebreak, counts))[:n_obj].tolist())
        counts[cats] += 1
        rng.shuffle(cats)
        img = _background(rng, size, spec.noise)
        bg_mean = img.reshape(-1, 3).mean(axis=0)
        placed: list[tuple[float, float, float]] = []
        masks, raw = [], []
        for cat in cats:
            for _attempt in range(200):
                r = rng.uniform(r_lo, r_hi)
                cy, cx = rng.uniform(r + 1, size - r - 2, size=2)
                if all(np.hypot(cy - py, cx - px) > r + pr + 3 for py, px, pr in placed):
                    break
            else:
                raise RuntimeError("could not place objects without overlap; lower max_objects or radius")
            placed.append((cy, cx, r))
            mask = shape_mask(spec.shapes[cat], size, cy, cx, r, rng.uniform(0, np.pi))
            col = _object_color(rng, bg_mean)
            img[mask] = col + rng.normal(0, spec.noise * 0.25, size=(int(mask.sum()), 3))
            masks.append(mask)
            raw.append(f"{spec.shapes[cat]}_{'small' if r < r_mid else 'large'}")
        out.samples.append(Sample(np.clip(np.rint(img), 0, 255).astype(np.uint8), masks, list(cats), raw))
    return out
