"""Command-line entry point: ``semjpeg <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.ndimage import zoom

from . import benchmark, metrics, netpbm
from .config import RunConfig
from .jpeg import JpegError, decode, encode
from .msroi import CAMNet, ClassMergeTable, MSROINet, NetworkSpec, train
from .semantic import final_encode, semantic_compress
from .synthetic import SyntheticSpec, default_merge_table, make_synthetic_dataset

log = logging.getLogger("semjpeg")


class CliError(Exception):
    pass


def _add_ladder(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run configuration; flags override it")
    p.add_argument("--ql", type=int, help="quality for the least salient level")
    p.add_argument("--qh", type=int, help="quality for the most salient level")
    p.add_argument("--levels", type=int, help="number of saliency levels")
    p.add_argument("--tolerance", type=float, help="relative size tolerance for the final encode")
    p.add_argument("--map", help="saliency PGM (overrides the network)")
    p.add_argument("--checkpoint", help="MS-ROI checkpoint (default: bundled weights)")
    p.add_argument("--mode", choices=("topk", "threshold"))
    p.add_argument("--top-k", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    flags = {"q_low": "ql", "q_high": "qh", "levels": "levels", "tolerance": "tolerance",
             "checkpoint": "checkpoint", "mode": "mode", "top_k": "top_k", "threshold": "threshold",
             "seed": "seed", "baseline_q": "baseline_q", "workers": "workers", "dataset": "dataset",
             "maps": "maps", "output": "out"}
    overrides = {key: getattr(args, attr) for key, attr in flags.items()
                 if getattr(args, attr, None) is not None}
    return cfg.override(overrides)


def _saliency(args, cfg: RunConfig, image: np.ndarray) -> np.ndarray:
    if args.map:
        sal = netpbm.load_saliency(args.map)
        if sal.shape != image.shape[:2]:
            raise CliError(f"map {args.map} is {sal.shape[1]}x{sal.shape[0]}, image is "
                           f"{image.shape[1]}x{image.shape[0]}")
        return sal
    net = MSROINet.load(cfg.checkpoint or benchmark.default_checkpoint())
    return net.saliency(image, mode=cfg.mode, top_k=cfg.top_k, threshold=cfg.threshold)


def _load_image(path: str) -> np.ndarray:
    img = netpbm.parse(Path(path).read_bytes())
    return img if img.ndim == 3 else np.repeat(img[..., None], 3, axis=2)


def _load_any(path: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] == b"\xff\xd8":
        img = decode(data)
    else:
        img = netpbm.parse(data)
    return img if img.ndim == 3 else np.repeat(img[..., None], 3, axis=2)


def cmd_compress(args) -> int:
    cfg = _config(args)
    image = _load_image(args.input)
    sal = _saliency(args, cfg, image)
    target = args.size_target or len(encode(image, cfg.baseline_q))
    result = semantic_compress(image, sal, cfg.ladder, target, cfg.tolerance)
    netpbm.write_atomic(args.out, result.stream)
    flag = "" if result.in_tolerance else " (outside tolerance)"
    print(f"{args.out}: {result.size} bytes at Q={result.quality}, target {target}{flag}")
    return 0


def cmd_map(args) -> int:
    cfg = _config(args)
    image = _load_image(args.input)
    if args.cam:
        net = CAMNet.load(args.checkpoint or benchmark.default_cam_checkpoint())
        sal = net.saliency(image)
    else:
        sal = _saliency(args, cfg, image)
    netpbm.save_saliency(args.out, sal)
    print(f"{args.out}: {sal.shape[1]}x{sal.shape[0]} saliency map")
    return 0


def cmd_train(args) -> int:
    radius = SyntheticSpec.radius
    if args.keep_object_size:
        # objects keep their 64 px pixel size on a larger canvas
        radius = tuple(r * 64 / args.size for r in radius)
    spec = SyntheticSpec(count=args.count, size=args.size, seed=args.data_seed, radius=radius)
    data = make_synthetic_dataset(spec)
    table = ClassMergeTable.load(args.merge_table) if args.merge_table else ClassMergeTable(default_merge_table())
    cls = CAMNet if args.cam else MSROINet
    net = cls.load(args.init) if args.init else cls(NetworkSpec(categories=table.categories), seed=args.seed)
    history = train(net, data.images, data.labels, table, epochs=args.epochs, lr=args.lr,
                    seed=args.seed, batch_size=args.batch_size, optimizer=args.optimizer,
                    momentum=args.momentum)
    tmp = Path(args.out).with_name(f".{Path(args.out).name}.part")
    net.save(tmp)
    tmp.replace(args.out)
    print(f"initial loss {history.initial_loss:.4f}")
    for epoch, (loss, acc) in enumerate(zip(history.losses, history.accuracies)):
        print(f"epoch {epoch} loss {loss:.4f} accuracy {acc:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    reference = _load_image(args.reference)
    candidate = _load_any(args.candidate)
    if candidate.shape != reference.shape:
        raise CliError(f"candidate is {candidate.shape[1]}x{candidate.shape[0]}, reference is "
                       f"{reference.shape[1]}x{reference.shape[0]}")
    sal = netpbm.load_saliency(args.map) if args.map else None
    if sal is not None and sal.shape != reference.shape[:2]:
        raise CliError("map dimensions do not match the reference image")
    data = Path(args.candidate).read_bytes()
    size = len(data)
    reports = [metrics.measure(Path(args.candidate).stem, reference, candidate, size, sal, args.cutoff)]
    if data[:2] == b"\xff\xd8":
        # size-matched standard JPEG of the reference for comparison
        std = final_encode(reference, size, args.tolerance)
        reports.append(metrics.measure("standard", reference, decode(std.stream), std.size, sal, args.cutoff))
    text = metrics.reports_to_csv(reports)
    if args.out:
        netpbm.write_atomic(args.out, text.encode())
    sys.stdout.write(text)
    return 0


def _resize(image: np.ndarray, width: int) -> np.ndarray:
    """Bilinear resize to ``width`` keeping the aspect ratio."""
    h, w = image.shape[:2]
    height = max(1, round(h * width / w))
    factors = (height / h, width / w) + ((1,) if image.ndim == 3 else ())
    out = zoom(image.astype(np.float64), factors, order=1, grid_mode=True, mode="nearest")
    return out


def cmd_sweep(args) -> int:
    cfg = _config(args)
    image = _load_image(args.input)
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else list(cfg.sweep_sizes)
    base_map = netpbm.load_saliency(args.map) if args.map else None
    net = None if base_map is not None else MSROINet.load(cfg.checkpoint or benchmark.default_checkpoint())
    rows = []
    for width in sizes:
        img = np.clip(np.rint(_resize(image, width)), 0, 255).astype(np.uint8)
        if base_map is not None:
            sal = np.clip(_resize(base_map, width), 0, 1)[:img.shape[0], :img.shape[1]]
        else:
            sal = net.saliency(img, mode=cfg.mode, top_k=cfg.top_k, threshold=cfg.threshold)
        r = benchmark.compare_image(f"{img.shape[1]}x{img.shape[0]}", img, sal, cfg)
        deltas = []
        for name in ("psnr", "psnr_s", "ssim", "msssim"):
            a, b = getattr(r.standard, name), getattr(r.semantic, name)
            deltas.append(b - a if a is not None and b is not None else None)
        rows.append([r.id, r.standard.bytes, r.semantic.bytes] + deltas)
    header = "id,bytes,semantic_bytes,d_psnr,d_psnr_s,d_ssim,d_msssim\n"
    text = header + "".join(",".join(metrics.format_value(v) for v in row) + "\n" for row in rows)
    if args.out:
        netpbm.write_atomic(args.out, text.encode())
    sys.stdout.write(text)
    return 0


def cmd_benchmark(args) -> int:
    cfg = _config(args)
    if not cfg.dataset:
        raise CliError("no dataset directory (use --dataset or dataset= in the config)")
    corpus = benchmark.load_corpus(cfg.dataset)
    result = benchmark.run_benchmark(cfg, corpus, benchmark.map_provider(cfg))
    benchmark.write_outputs(result, cfg.output, save_streams=not args.no_streams)
    sys.stdout.write(result.summary())
    return 1 if result.failed else 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(count=args.count, size=args.size, seed=args.seed,
                         min_objects=args.min_objects, max_objects=args.max_objects)
    data = make_synthetic_dataset(spec)
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sample in enumerate(data.samples):
        name = f"synth{i:04d}"
        netpbm.save_ppm(out / f"{name}.ppm", sample.image)
        netpbm.save_saliency(out / "maps" / f"{name}.pgm", sample.saliency)
        lines.append(f"{name} {' '.join(sample.raw_labels)}")
    netpbm.write_atomic(out / "labels.txt", ("\n".join(lines) + "\n").encode())
    print(f"wrote {len(data)} images to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semjpeg", description="Saliency-guided JPEG compression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="semantic JPEG of one PPM image")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--size-target", type=int, help="bytes (default: size of the standard Q=50 stream)")
    _add_ladder(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("map", help="write the saliency map of one image as PGM")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--cam", action="store_true", help="checkpoint is a CAM baseline network")
    _add_ladder(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("train", help="train on the synthetic shapes corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--optimizer", choices=("sgd", "momentum", "adam"), default="adam")
    p.add_argument("--momentum", type=float, default=0.9, help="for --optimizer momentum")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=1)
    p.add_argument("--merge-table", help="raw-label to category table")
    p.add_argument("--cam", action="store_true", help="train the CAM baseline instead")
    p.add_argument("--init", help="continue from this checkpoint instead of a fresh network")
    p.add_argument("--keep-object-size", action="store_true",
                   help="scale object radii by 64/size so shapes keep their 64 px size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics CSV for a candidate against its reference")
    p.add_argument("reference")
    p.add_argument("candidate", help="JPEG or PPM")
    p.add_argument("--map", help="saliency PGM for PSNR-S")
    p.add_argument("--cutoff", type=float, default=0.5)
    p.add_argument("--tolerance", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="rescale one image and compare both arms at each size")
    p.add_argument("input")
    p.add_argument("--sizes", help="comma-separated output widths")
    p.add_argument("--out")
    _add_ladder(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("benchmark", help="standard vs semantic over a PPM directory")
    p.add_argument("--dataset")
    p.add_argument("--maps", help="directory of <id>.pgm maps")
    p.add_argument("--out")
    p.add_argument("--baseline-q", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-streams", action="store_true", help="skip writing JPEG files")
    _add_ladder(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("synth", help="write a synthetic shapes corpus with ground-truth maps")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=24)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=3)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, JpegError, netpbm.NetpbmError, ValueError, OSError, KeyError) as exc:
        print(f"semjpeg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
