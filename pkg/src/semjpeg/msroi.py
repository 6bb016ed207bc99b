"""Multi-structure region-of-interest network and saliency maps.

The trunk is ``blocks`` repetitions of (conv -> relu) x 2 -> maxpool with
same-padded convolutions, so resolution only halves at the pools. The MS-ROI
head is one linear conv producing ``categories * head_features`` channels,
viewed as a (category, feature, y, x) stack per image. A CAM baseline shares
the trunk architecture and adds a bias-free linear classifier over the
trunk features.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkSpec:
    feature_counts: tuple[int, ...] = (16, 32, 32, 64, 64)
    convs_per_block: int = 2
    kernel_size: int = 3
    pool_stride: int = 2
    categories: int = 6
    head_features: int = 4
    in_channels: int = 3
    init: str = "he"

    @property
    def blocks(self) -> int:
        return len(self.feature_counts)

    def head_size(self, size: int) -> int:
        for _ in range(self.blocks):
            size //= self.pool_stride
        return size


def _init_trunk(spec: NetworkSpec, rng: np.random.Generator) -> list[T.LayerParams]:
    init = getattr(T.LayerParams, spec.init)
    layers = []
    prev = spec.in_channels
    for feats in spec.feature_counts:
        for _ in range(spec.convs_per_block):
            layers.append(init(feats, prev, spec.kernel_size, rng))
            prev = feats
    return layers


def preprocess(images: np.ndarray) -> np.ndarray:
    """uint8 (N, H, W, 3) or (H, W, 3) -> float (N, 3, H, W) centred on zero."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    return images.transpose(0, 3, 1, 2).astype(T.DTYPE) / 255.0 - 0.5


class _Trunk:
    """Shared conv/relu/pool stack with cached activations for backward."""

    def __init__(self, spec: NetworkSpec, layers: list[T.LayerParams]):
        self.spec = spec
        self.trunk = layers
        self._cache: list = []

    def trunk_forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        cache = []
        h = x
        it = iter(self.trunk)
        for _ in range(self.spec.blocks):
            for _ in range(self.spec.convs_per_block):
                layer = next(it)
                pre = T.conv2d(h, layer)
                cache.append(("conv", layer, h))
                cache.append(("relu", pre))
                h = T.relu(pre)
            pooled, arg = T.maxpool(h, self.spec.pool_stride, self.spec.pool_stride)
            cache.append(("pool", h.shape, arg))
            h = pooled
        if keep:
            self._cache = cache
        return h

    def trunk_backward(self, grad: np.ndarray) -> np.ndarray:
        for entry in reversed(self._cache):
            kind = entry[0]
            if kind == "pool":
                grad = T.maxpool_backward(entry[1], entry[2], grad)
            elif kind == "relu":
                grad = T.relu_backward(entry[1], grad)
            else:
                grad = T.conv2d_backward(entry[2], entry[1], grad)
        self._cache = []
        return grad


def head_forward(trunk_output: np.ndarray, head: T.LayerParams, categories: int) -> np.ndarray:
    """Per-category feature stacks, shape (N, C, D, h, w)."""
    if head.out_features % categories:
        raise T.ShapeError(f"head kernel {head.kernel.shape} does not split into {categories} categories")
    out = T.conv2d(trunk_output, head)
    n, _, h, w = out.shape
    return out.reshape(n, categories, head.out_features // categories, h, w)


class MSROINet(_Trunk):
    def __init__(self, spec: NetworkSpec = NetworkSpec(), seed: int = 0,
                 layers: list[T.LayerParams] | None = None):
        if layers is None:
            rng = np.random.default_rng(seed)
            layers = _init_trunk(spec, rng)
            layers.append(T.LayerParams.glorot(spec.categories * spec.head_features,
                                               spec.feature_counts[-1], spec.kernel_size, rng))
        expected = spec.blocks * spec.convs_per_block + 1
        if len(layers) != expected:
            raise T.ShapeError(f"MS-ROI network needs {expected} layers, got {len(layers)}")
        super().__init__(spec, layers[:-1])
        self.head = layers[-1]
        self._trunk_out: np.ndarray | None = None

    @property
    def params(self) -> list[T.LayerParams]:
        return [*self.trunk, self.head]

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        feats = self.trunk_forward(x, keep=keep)
        if keep:
            self._trunk_out = feats
        return head_forward(feats, self.head, self.spec.categories)

    def backward(self, grad_head: np.ndarray) -> np.ndarray:
        n, c, d, h, w = grad_head.shape
        grad = T.conv2d_backward(self._trunk_out, self.head, grad_head.reshape(n, c * d, h, w))
        self._trunk_out = None
        return self.trunk_backward(grad)

    def loss_and_grad(self, x: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Multi-label loss for a batch; returns (mean loss, class scores, d loss/d x)."""
        head = self.forward(x, keep=True)
        z = class_scores(head)
        loss, dz = multilabel_loss(z, targets)
        grad_head = np.broadcast_to(dz[:, :, None, None, None], head.shape)
        return loss, z, self.backward(np.ascontiguousarray(grad_head))

    def save(self, path: str | Path) -> None:
        T.save_checkpoint(path, self.params)

    @classmethod
    def load(cls, path: str | Path, spec: NetworkSpec = NetworkSpec()) -> "MSROINet":
        return cls(spec, layers=T.load_checkpoint(path))

    def saliency(self, image: np.ndarray, mode: str = "topk", top_k: int = 5,
                 threshold: float = 0.0) -> np.ndarray:
        """Pixel-resolution saliency map in [0, 1] for one uint8 RGB image."""
        head = self.forward(preprocess(image))[0]
        z = class_scores(head)
        small = msroi_map(head, z, mode=mode, top_k=min(top_k, self.spec.categories), threshold=threshold)
        return upsample_map(small, image.shape[1], image.shape[0])


class CAMNet(_Trunk):
    """Global-average-pool classifier used for the class-activation-map baseline."""

    def __init__(self, spec: NetworkSpec = NetworkSpec(), seed: int = 0,
                 layers: list[T.LayerParams] | None = None):
        if layers is None:
            rng = np.random.default_rng(seed)
            layers = _init_trunk(spec, rng)
            layers.append(T.LayerParams.glorot(spec.categories, spec.feature_counts[-1], 1, rng, padding=0))
        super().__init__(spec, layers[:-1])
        self.classifier = layers[-1]
        self._feats: np.ndarray | None = None

    @property
    def params(self) -> list[T.LayerParams]:
        return [*self.trunk, self.classifier]

    @property
    def weights(self) -> np.ndarray:
        return self.classifier.kernel[:, :, 0, 0]

    def forward(self, x: np.ndarray, keep: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Returns (trunk features, class logits sum_xy M_c(x, y))."""
        feats = self.trunk_forward(x, keep=keep)
        if keep:
            self._feats = feats
        logits = feats.sum(axis=(2, 3)) @ self.weights.T
        return feats, logits

    def loss_and_grad(self, x: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Softmax cross entropy against the label distribution (mass split evenly over present classes)."""
        feats, logits = self.forward(x, keep=True)
        n = x.shape[0]
        dist = targets / targets.sum(axis=1, keepdims=True)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = float(-(dist * log_p).sum() / n)
        dlogits = (np.exp(log_p) - dist) / n
        pooled = feats.sum(axis=(2, 3))
        self.classifier.grad_kernel[:, :, 0, 0] += dlogits.T @ pooled
        grad_feats = np.broadcast_to((dlogits @ self.weights)[:, :, None, None], feats.shape)
        self._feats = None
        return loss, logits, self.trunk_backward(np.ascontiguousarray(grad_feats))

    def save(self, path: str | Path) -> None:
        T.save_checkpoint(path, self.params)

    @classmethod
    def load(cls, path: str | Path, spec: NetworkSpec = NetworkSpec()) -> "CAMNet":
        return cls(spec, layers=T.load_checkpoint(path))

    def saliency(self, image: np.ndarray, category: int | None = None) -> np.ndarray:
        """CAM for ``category`` (default: the top-scoring class) at pixel resolution."""
        feats, logits = self.forward(preprocess(image))
        if category is None:
            category = int(np.argmax(logits[0]))
        small = cam_map(feats[0], self.weights, category)
        return upsample_map(small, image.shape[1], image.shape[0])


def class_scores(head: np.ndarray) -> np.ndarray:
    """Total activation per category: sum over features and positions."""
    head = np.asarray(head, dtype=T.DTYPE)
    if head.ndim not in (4, 5):
        raise T.ShapeError(f"head must be (C, D, h, w) or (N, C, D, h, w), got {head.shape}")
    return head.sum(axis=(-3, -2, -1))


def sigmoid_likelihood(z: np.ndarray) -> np.ndarray:
    """Independent per-category presence probability."""
    return T.sigmoid(np.asarray(z, dtype=T.DTYPE))


def multilabel_loss(z: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed per-category binary cross entropy, averaged over the batch.

    Returns the loss and its gradient with respect to ``z``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=T.DTYPE))
    y = np.atleast_2d(np.asarray(targets, dtype=T.DTYPE))
    n = z.shape[0]
    # -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    softplus = np.logaddexp(0.0, z)
    loss = float((softplus - y * z).sum() / n)
    return loss, (sigmoid_likelihood(z) - y) / n


def normalize_map(raw: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1].

    An identically zero map stays zero; any other constant map becomes all ones.
    """
    m = np.asarray(raw, dtype=T.DTYPE)
    if not m.size or not m.any():
        return np.zeros_like(m)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.ones_like(m)
    return (m - lo) / (hi - lo)


def cam_map(features: np.ndarray, weights: np.ndarray, category: int) -> np.ndarray:
    """Class activation map sum_d w[c, d] f_d(x, y), normalized."""
    features = np.asarray(features, dtype=T.DTYPE)
    weights = np.asarray(weights, dtype=T.DTYPE)
    if not 0 <= category < weights.shape[0]:
        raise ValueError(f"unknown category {category}; classifier has {weights.shape[0]}")
    if weights.shape[1] != features.shape[0]:
        raise T.ShapeError(f"weights {weights.shape} do not match features {features.shape}")
    raw = np.tensordot(weights[category], features, axes=([0], [0]))
    return normalize_map(raw)


def rank_weights(k: int) -> np.ndarray:
    return (k + 1 - np.arange(1, k + 1)) / k


def msroi_raw(head: np.ndarray, z: np.ndarray, mode: str = "topk", top_k: int = 5,
              threshold: float = 0.0, weighted: bool = True) -> np.ndarray:
    """Un-normalized MS-ROI map at head resolution.

    ``threshold``: sum of per-category feature sums over categories whose
    score exceeds ``threshold``. ``topk``: the ``top_k`` highest-scoring
    categories, each weighted by (K + 1 - rank) / K (or 1 if not ``weighted``).
    """
    head = np.asarray(head, dtype=T.DTYPE)
    z = np.asarray(z, dtype=T.DTYPE)
    per_class = head.sum(axis=1)  # (C, h, w)
    n_cat = per_class.shape[0]
    if z.shape != (n_cat,):
        raise T.ShapeError(f"scores shape {z.shape} does not match head shape {head.shape}")
    if mode == "threshold":
        weights = (z > threshold).astype(T.DTYPE)
    elif mode == "topk":
        if not 1 <= top_k <= n_cat:
            raise ValueError(f"top_k={top_k} outside 1..{n_cat}")
        order = np.argsort(-z, kind="stable")[:top_k]
        weights = np.zeros(n_cat)
        weights[order] = rank_weights(top_k) if weighted else 1.0
    else:
        raise ValueError(f"unknown map mode {mode!r}")
    return np.tensordot(weights, per_class, axes=([0], [0]))


def msroi_map(head: np.ndarray, z: np.ndarray, mode: str = "topk", top_k: int = 5,
              threshold: float = 0.0, weighted: bool = True) -> np.ndarray:
    return normalize_map(msroi_raw(head, z, mode, top_k, threshold, weighted))


def upsample_map(small: np.ndarray, width: int, height: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a (h, w) map to (height, width)."""
    small = np.asarray(small, dtype=T.DTYPE)
    if width <= 0 or height <= 0:
        raise ValueError(f"target size must be positive, got {width}x{height}")
    sh, sw = small.shape
    if height < sh or width < sw:
        raise ValueError(f"target {width}x{height} smaller than source {sw}x{sh}")

    def axis(src: int, dst: int):
        if src == 1 or dst == 1:
            pos = np.zeros(dst)
        else:
            pos = np.arange(dst) * (src - 1) / (dst - 1)
        lo = np.minimum(np.floor(pos).astype(int), src - 1)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis(sh, height)
    c0, c1, fc = axis(sw, width)
    top = small[r0][:, c0] * (1 - fc) + small[r0][:, c1] * fc
    bottom = small[r1][:, c0] * (1 - fc) + small[r1][:, c1] * fc
    out = top * (1 - fr)[:, None] + bottom * fr[:, None]
    return np.clip(out, small.min(), small.max())


class ClassMergeTable(dict):
    """Raw dataset label -> merged category id in [0, C)."""

    def __init__(self, mapping: Mapping[str, int]):
        super().__init__(mapping)
        ids = sorted(set(self.values()))
        if ids != list(range(len(ids))):
            raise ValueError(f"merged ids must be dense from 0, got {ids}")

    @property
    def categories(self) -> int:
        return len(set(self.values()))

    def merge(self, labels: Sequence[str]) -> np.ndarray:
        """Multi-hot vector for one image's raw labels."""
        vec = np.zeros(self.categories)
        for label in labels:
            if label not in self:
                raise KeyError(f"label {label!r} not in merge table")
            vec[self[label]] = 1.0
        return vec

    @classmethod
    def parse(cls, text: str) -> "ClassMergeTable":
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'rawLabel mergedId', got {line!r}")
            mapping[parts[0]] = int(parts[1])
        return cls(mapping)

    @classmethod
    def load(cls, path: str | Path) -> "ClassMergeTable":
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        return "".join(f"{raw} {mid}\n" for raw, mid in sorted(self.items(), key=lambda kv: (kv[1], kv[0])))


OPTIMIZERS = ("sgd", "momentum", "adam")


@dataclass
class TrainHistory:
    initial_loss: float
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    skipped_steps: int = 0


def multilabel_accuracy(z: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of (image, category) presence decisions that are correct at P > 0.5."""
    return float(np.mean((np.asarray(z) > 0) == (np.asarray(targets) > 0.5)))


def covers_objects(saliency: np.ndarray, masks: Sequence[np.ndarray], factor: float = 2.0) -> bool:
    """True if every object's mean saliency is at least ``factor`` times the background mean.

    Background is every pixel outside all masks. An object scoring zero never
    counts as covered, even against an all-zero background.
    """
    saliency = np.asarray(saliency, dtype=T.DTYPE)
    if not masks:
        raise ValueError("no object masks")
    objects = np.zeros(saliency.shape, dtype=bool)
    for m in masks:
        if m.shape != saliency.shape:
            raise ValueError(f"mask {m.shape} does not match map {saliency.shape}")
        objects |= m
    if objects.all():
        raise ValueError("masks leave no background")
    background = saliency[~objects].mean()
    return all(saliency[m].mean() > 0 and saliency[m].mean() >= factor * background for m in masks)


def train(net: MSROINet | CAMNet, images: np.ndarray, labels: Sequence[Sequence[str]],
          merge_table: ClassMergeTable, epochs: int, lr: float, seed: int,
          batch_size: int = 16, optimizer: str = "sgd", momentum: float = 0.9) -> TrainHistory:
    """Minibatch SGD over ``images`` (N, H, W, 3 uint8).

    The network's own ``loss_and_grad`` supplies the objective, so the same
    loop trains the sigmoid multi-label MS-ROI model and the softmax CAM
    baseline. ``optimizer`` is "sgd" (plain), "momentum" or "adam".
    Deterministic for a fixed seed.
    """
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {optimizer!r}")
    if len(images) == 0:
        raise ValueError("empty dataset")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} label sets")
    targets = np.stack([merge_table.merge(ls) for ls in labels])
    if targets.shape[1] != net.spec.categories:
        raise ValueError(f"merge table has {targets.shape[1]} categories, network expects {net.spec.categories}")
    if np.any(targets.sum(axis=1) == 0):
        raise ValueError("every image needs at least one label")
    x_all = preprocess(images)
    rng = np.random.default_rng(seed)

    initial = 0.0
    for start in range(0, len(x_all), batch_size):
        x = x_all[start:start + batch_size]
        loss, _, _ = net.loss_and_grad(x, targets[start:start + batch_size])
        initial += loss * len(x)
    for p in net.params:
        p.zero_grad()
    history = TrainHistory(initial_loss=initial / len(x_all))

    if optimizer == "adam":
        step = T.Adam(net.params, lr).step
    elif optimizer == "momentum":
        step = T.Momentum(net.params, lr, momentum).step
    else:
        step = lambda: T.sgd_step(net.params, lr)  # noqa: E731
    for epoch in range(epochs):
        order = rng.permutation(len(x_all))
        total, correct = 0.0, 0.0
        for start in range(0, len(order), batch_size):
            idx = np.sort(order[start:start + batch_size])
            loss, z, _ = net.loss_and_grad(x_all[idx], targets[idx])
            total += loss * len(idx)
            if isinstance(net, MSROINet):
                correct += multilabel_accuracy(z, targets[idx]) * len(idx)
            else:
                correct += _top_label_accuracy(z, targets[idx]) * len(idx)
            if not step():
                history.skipped_steps += 1
                log.warning("epoch %d: non-finite gradient, step skipped", epoch)
        history.losses.append(total / len(order))
        history.accuracies.append(correct / len(order))
        log.info("epoch %d loss %.4f acc %.4f", epoch, history.losses[-1], history.accuracies[-1])
    return history


def _top_label_accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    top = np.argmax(logits, axis=1)
    return float(np.mean(targets[np.arange(len(top)), top] > 0.5))


def predict_scores(net: MSROINet, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    x_all = preprocess(images)
    return np.concatenate([class_scores(net.forward(x_all[s:s + batch_size]))
                           for s in range(0, len(x_all), batch_size)])
