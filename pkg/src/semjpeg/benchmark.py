"""Standard-vs-semantic JPEG comparison over an image corpus.

For each image the standard arm is our encoder at the baseline quality;
the semantic arm is size-matched to it. Both decodes are scored against
the original with the same saliency map.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics, netpbm
from .config import RunConfig
from .jpeg import decode, encode
from .msroi import MSROINet
from .semantic import semantic_compress

log = logging.getLogger(__name__)

ARMS = ("standard", "semantic")
CSV_COLUMNS = ("id", "arm", "quality", "in_tolerance") + metrics.MetricsReport.COLUMNS[1:]


@dataclass
class ImageResult:
    id: str
    standard: metrics.MetricsReport | None = None
    semantic: metrics.MetricsReport | None = None
    standard_q: int = 0
    semantic_q: int = 0
    in_tolerance: bool = False
    streams: dict[str, bytes] = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class BenchmarkResult:
    results: list[ImageResult]

    @property
    def failed(self) -> list[ImageResult]:
        return [r for r in self.results if not r.ok]

    @property
    def succeeded(self) -> list[ImageResult]:
        return [r for r in self.results if r.ok]

    @property
    def flagged(self) -> list[ImageResult]:
        return [r for r in self.succeeded if not r.in_tolerance]

    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.results:
            if not r.ok:
                writer.writerow([r.id, "error", "na", "na"] + ["na"] * 5)
                continue
            for arm in ARMS:
                report = getattr(r, arm)
                q = r.standard_q if arm == "standard" else r.semantic_q
                tol = "yes" if arm == "standard" or r.in_tolerance else "no"
                writer.writerow([r.id, arm, q, tol] + report.row()[1:])
        return buf.getvalue()

    def means(self, arm: str, name: str) -> float | None:
        """Mean of one metric over successful images where it is defined and finite."""
        values = [getattr(getattr(r, arm), name) for r in self.succeeded]
        values = [v for v in values if v is not None and math.isfinite(v)]
        return float(np.mean(values)) if values else None

    def summary(self) -> str:
        lines = [f"images {len(self.results)} ok {len(self.succeeded)} failed {len(self.failed)} "
                 f"size-flagged {len(self.flagged)}"]
        for name in ("bytes", "psnr", "psnr_s", "ssim", "msssim"):
            std, sem = self.means("standard", name), self.means("semantic", name)
            delta = sem - std if std is not None and sem is not None else None
            lines.append(f"{name:8s} standard {metrics.format_value(std):>12s} "
                         f"semantic {metrics.format_value(sem):>12s} delta {metrics.format_value(delta):>12s}")
        for r in self.failed:
            lines.append(f"FAILED {r.id}: {r.error}")
        return "\n".join(lines) + "\n"


def compare_image(image_id: str, image: np.ndarray, saliency: np.ndarray, config: RunConfig) -> ImageResult:
    """Both arms plus metrics for a single image."""
    result = ImageResult(image_id)
    baseline = encode(image, config.baseline_q)
    semantic = semantic_compress(image, saliency, config.ladder, len(baseline), config.tolerance)
    result.streams = {"standard": baseline, "semantic": semantic.stream}
    result.standard_q = config.baseline_q
    result.semantic_q = semantic.quality
    result.in_tolerance = semantic.in_tolerance
    for arm, stream in result.streams.items():
        decoded = decode(stream)
        if decoded.shape != image.shape:
            raise ValueError(f"{arm} decode has shape {decoded.shape}, expected {image.shape}")
        report = metrics.measure(image_id, image, decoded, len(stream), saliency, config.psnr_s_cutoff)
        setattr(result, arm, report)
    return result


def _safe_compare(args) -> ImageResult:
    image_id, image, saliency, config = args
    try:
        return compare_image(image_id, image, saliency, config)
    except Exception as exc:  # continue-and-flag: one bad image must not sink the run
        log.error("%s: %s", image_id, exc)
        return ImageResult(image_id, error=f"{type(exc).__name__}: {exc}")


def run_benchmark(config: RunConfig, images: Sequence[tuple[str, np.ndarray]],
                  saliency_for: Callable[[str, np.ndarray], np.ndarray]) -> BenchmarkResult:
    """Compare both arms on every image; results keep the input order.

    ``saliency_for(id, image)`` supplies each map. Map failures are reported
    per image like any other failure.
    """
    jobs = []
    failures: dict[int, ImageResult] = {}
    for i, (image_id, image) in enumerate(images):
        try:
            jobs.append((image_id, image, saliency_for(image_id, image), config))
        except Exception as exc:
            log.error("%s: saliency map unavailable: %s", image_id, exc)
            failures[i] = ImageResult(image_id, error=f"saliency map: {exc}")
            jobs.append(None)
    todo = [j for j in jobs if j is not None]
    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            done = iter(list(pool.map(_safe_compare, todo)))
    else:
        done = iter([_safe_compare(j) for j in todo])
    return BenchmarkResult([failures[i] if j is None else next(done) for i, j in enumerate(jobs)])


def load_corpus(directory: str | Path) -> list[tuple[str, np.ndarray]]:
    """Every ``*.ppm`` in ``directory``, sorted by name; id is the file stem."""
    paths = sorted(Path(directory).glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm images in {directory}")
    return [(p.stem, netpbm.load_ppm(p)) for p in paths]


def map_provider(config: RunConfig) -> Callable[[str, np.ndarray], np.ndarray]:
    """Saliency from ``<maps>/<id>.pgm`` if a map directory is set, else from the network."""
    if config.maps:
        root = Path(config.maps)

        def from_file(image_id: str, image: np.ndarray) -> np.ndarray:
            sal = netpbm.load_saliency(root / f"{image_id}.pgm")
            if sal.shape != image.shape[:2]:
                raise ValueError(f"map {sal.shape} does not match image {image.shape[:2]}")
            return sal
        return from_file
    net = MSROINet.load(config.checkpoint or default_checkpoint())

    def from_net(image_id: str, image: np.ndarray) -> np.ndarray:
        return net.saliency(image, mode=config.mode, top_k=config.top_k, threshold=config.threshold)
    return from_net


def default_checkpoint() -> Path:
    return Path(__file__).parent / "data" / "msroi.ckpt"


def default_cam_checkpoint() -> Path:
    return Path(__file__).parent / "data" / "cam.ckpt"


def write_outputs(result: BenchmarkResult, out_dir: str | Path, save_streams: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    netpbm.write_atomic(out / "results.csv", result.csv().encode())
    netpbm.write_atomic(out / "summary.txt", result.summary().encode())
    if save_streams:
        for r in result.succeeded:
            for arm, stream in r.streams.items():
                netpbm.write_atomic(out / f"{r.id}.{arm}.jpg", stream)
