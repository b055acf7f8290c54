"""Datasets and two-view augmentation.

Images are float arrays in [0, 1] with layout (M, H, W, C). Synthetic
datasets are (M, dim) vectors drawn around well-separated unit-sphere
centers; their "augmentation" is independent additive Gaussian noise.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .numcore.rng import Rng

CIFAR_SIDE = 32
CIFAR_PIXELS = 3 * CIFAR_SIDE * CIFAR_SIDE
_CIFAR = {
    # variant: (label bytes, max fine label, max coarse label)
    "cifar10": (1, 9, None),
    "cifar100": (2, 99, 19),
}
SYNTH_MAGIC = b"DCLSYN1"


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    kind: str = "vector"
    coarse_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("image", "vector"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if len(self.x) != len(self.labels):
            raise ValueError("feature and label counts differ")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        coarse = None if self.coarse_labels is None else self.coarse_labels[idx]
        return Dataset(self.x[idx], self.labels[idx], self.kind, coarse)


# --- CIFAR binary -----------------------------------------------------------


def _read_cifar_bytes(buf: bytes, variant: str, source: str = "<bytes>"):
    if variant not in _CIFAR:
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    nlab, max_fine, max_coarse = _CIFAR[variant]
    rec = nlab + CIFAR_PIXELS
    if len(buf) % rec:
        whole = len(buf) // rec
        raise ValueError(
            f"{source}: truncated record at byte offset {whole * rec} "
            f"({len(buf) - whole * rec} of {rec} bytes present)"
        )
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, rec)
    fine = raw[:, nlab - 1].astype(np.int64)
    bad = np.flatnonzero(fine > max_fine)
    if bad.size:
        raise ValueError(
            f"{source}: label {fine[bad[0]]} out of range at byte offset {bad[0] * rec + nlab - 1}"
        )
    coarse = None
    if max_coarse is not None:
        coarse = raw[:, 0].astype(np.int64)
        bad = np.flatnonzero(coarse > max_coarse)
        if bad.size:
            raise ValueError(
                f"{source}: coarse label {coarse[bad[0]]} out of range at byte offset {bad[0] * rec}"
            )
    # planes are R, G, B, each 32x32 row-major
    pix = raw[:, nlab:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return pix, fine, coarse


def load_cifar(
    paths: Union[str, PathLike, Sequence[Union[str, PathLike]]], variant: str = "cifar10"
) -> Dataset:
    """Parse one or more CIFAR binary batch files; pixels are scaled to [0, 1]."""
    if isinstance(paths, (str, PathLike)):
        paths = [paths]
    pix, fine, coarse = [], [], []
    for p in paths:
        with open(p, "rb") as fh:
            a, b, c = _read_cifar_bytes(fh.read(), variant, str(p))
        pix.append(a)
        fine.append(b)
        coarse.append(c)
    x = np.concatenate(pix).astype(np.float32) / np.float32(255.0)
    return Dataset(
        x,
        np.concatenate(fine),
        "image",
        None if coarse[0] is None else np.concatenate(coarse),
    )


def cifar_bytes(ds: Dataset, variant: str = "cifar10") -> bytes:
    """Serialize an image dataset back to the CIFAR binary record layout."""
    nlab = _CIFAR[variant][0]
    pix = np.rint(np.asarray(ds.x, dtype=np.float64) * 255.0).astype(np.uint8)
    planes = pix.transpose(0, 3, 1, 2).reshape(len(ds), CIFAR_PIXELS)
    labels = [ds.labels.astype(np.uint8)[:, None]]
    if nlab == 2:
        if ds.coarse_labels is None:
            raise ValueError("cifar100 serialization needs coarse labels")
        labels.insert(0, ds.coarse_labels.astype(np.uint8)[:, None])
    return np.concatenate(labels + [planes], axis=1).tobytes()


# --- synthetic clusters -----------------------------------------------------


def synth_clusters(
    classes: int, dim: int, per_class: int, sigma: float, seed: int, min_separation: float = 0.5
) -> Dataset:
    """Gaussian clusters around unit-sphere centers at least ``min_separation`` apart."""
    if classes < 2:
        raise ValueError("need at least two classes")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    root = Rng(seed)
    gen = root.stream("centers").generator()
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < classes:
        attempts += 1
        if attempts > 100_000:
            raise RuntimeError("cannot separate centers")
        c = gen.normal(size=dim)
        c /= np.linalg.norm(c)
        if all(np.linalg.norm(c - o) >= min_separation for o in centers):
            centers.append(c)
    noise = root.stream("noise").generator().normal(size=(classes * per_class, dim))
    x = np.repeat(np.array(centers), per_class, axis=0) + sigma * noise
    y = np.repeat(np.arange(classes), per_class)
    return Dataset(x, y, "vector")


def split_per_class(ds: Dataset, train_per_class: int) -> tuple[Dataset, Dataset]:
    """First ``train_per_class`` examples of every class train, the rest test."""
    train, test = [], []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        train.append(idx[:train_per_class])
        test.append(idx[train_per_class:])
    return ds.subset(np.concatenate(train)), ds.subset(np.concatenate(test))


def save_synthetic(path, ds: Dataset) -> None:
    if ds.kind != "vector":
        raise ValueError("only vector datasets use the synthetic file format")
    n, dim = ds.x.shape
    header = SYNTH_MAGIC + struct.pack("<iii", n, dim, ds.n_classes)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(ds.x, dtype="<f4").tobytes())
        fh.write(np.asarray(ds.labels, dtype="<i4").tobytes())


def load_synthetic(path) -> Dataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:7] != SYNTH_MAGIC:
        raise ValueError(f"{path}: not a DCLSYN1 file")
    n, dim, classes = struct.unpack_from("<iii", buf, 7)
    off = 7 + 12
    need = off + 4 * n * dim + 4 * n
    if len(buf) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(buf)}")
    x = np.frombuffer(buf, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
    y = np.frombuffer(buf, dtype="<i4", count=n, offset=off + 4 * n * dim).astype(np.int64)
    if n and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"{path}: label out of range")
    return Dataset(x.astype(np.float64), y, "vector")


def batch_order(n: int, batch_size: int, rng: Rng, epoch: int, drop_last: bool = True) -> Iterator[np.ndarray]:
    """Shuffled index batches for one epoch, drawn from the ``rng`` stream of that epoch."""
    perm = rng.stream(epoch).generator().permutation(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield perm[start : start + batch_size]


# --- augmentation -----------------------------------------------------------


@dataclass(frozen=True)
class AugmentPolicy:
    crop_scale: tuple = (0.2, 1.0)
    crop_ratio: tuple = (3 / 4, 4 / 3)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 0.0
    blur_sigma: tuple = (0.1, 2.0)
    blur_kernel: int = 3
    solarize_prob: float = 0.0
    solarize_threshold: float = 0.5

    def __post_init__(self):
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "solarize_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        lo, hi = self.crop_scale
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"crop_scale must satisfy 0 < min <= max <= 1, got {self.crop_scale}")
        if not 0.0 <= self.solarize_threshold <= 1.0:
            raise ValueError("solarize_threshold must be in [0,1]")
        if self.hue > 0.5:
            raise ValueError("hue jitter must be <= 0.5")

    @classmethod
    def identity(cls) -> "AugmentPolicy":
        return cls(crop_scale=(1.0, 1.0), flip_prob=0.0, jitter_prob=0.0, grayscale_prob=0.0)


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def random_resized_crop(img, scale, ratio, gen: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    area = h * w
    log_r = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target = area * gen.uniform(scale[0], scale[1])
        r = math.exp(gen.uniform(*log_r))
        cw = int(round(math.sqrt(target * r)))
        ch = int(round(math.sqrt(target / r)))
        if cw < 1 or ch < 1:
            raise ValueError("crop smaller than 1 pixel")
        if cw <= w and ch <= h:
            top = int(gen.integers(0, h - ch + 1))
            left = int(gen.integers(0, w - cw + 1))
            return _resize_bilinear(img[top : top + ch, left : left + cw], h, w)
    return img.copy()


def _gray(img):
    return img @ np.array([0.299, 0.587, 0.114], dtype=img.dtype)


def _rgb_to_hsv(img):
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    mx = img.max(axis=-1)
    mn = img.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.where(
        mx == r, ((g - b) / safe) % 6.0, np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0)
    )
    hue = np.where(delta > 0, hue / 6.0, 0.0)
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([hue, sat, mx], axis=-1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.astype(int) % 6
    choices = [
        np.stack(c, axis=-1)
        for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ]
    out = np.zeros_like(hsv)
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def color_jitter(img, policy: AugmentPolicy, gen: np.random.Generator) -> np.ndarray:
    """Brightness, contrast, saturation and hue adjustments in random order."""

    def factor(s):
        return gen.uniform(max(0.0, 1 - s), 1 + s)

    ops = []
    if policy.brightness > 0:
        f = factor(policy.brightness)
        ops.append(lambda x: x * f)
    if policy.contrast > 0:
        f2 = factor(policy.contrast)
        ops.append(lambda x: (x - _gray(x).mean()) * f2 + _gray(x).mean())
    if policy.saturation > 0:
        f3 = factor(policy.saturation)
        ops.append(lambda x: _gray(x)[..., None] + (x - _gray(x)[..., None]) * f3)
    if policy.hue > 0:
        shift = gen.uniform(-policy.hue, policy.hue)

        def hue_op(x):
            hsv = _rgb_to_hsv(x)
            hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
            return _hsv_to_rgb(hsv)

        ops.append(hue_op)
    for k in gen.permutation(len(ops)):
        img = np.clip(ops[k](img), 0.0, 1.0)
    return img


def gaussian_blur(img, sigma: float, kernel: int = 3) -> np.ndarray:
    radius = kernel // 2
    t = np.arange(-radius, radius + 1)
    k = np.exp(-(t**2) / (2 * sigma**2))
    k /= k.sum()
    pad = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    h, w = img.shape[:2]
    rows = sum(k[i] * pad[i : i + h, :, :] for i in range(kernel))
    return sum(k[i] * rows[:, i : i + w, :] for i in range(kernel))


def augment(img: np.ndarray, policy: AugmentPolicy, gen: np.random.Generator) -> np.ndarray:
    """One augmented copy of an H x W x 3 image in [0, 1]."""
    x = random_resized_crop(img, policy.crop_scale, policy.crop_ratio, gen)
    if gen.random() < policy.flip_prob:
        x = x[:, ::-1]
    if gen.random() < policy.jitter_prob:
        x = color_jitter(x, policy, gen)
    if gen.random() < policy.grayscale_prob:
        x = np.repeat(_gray(x)[..., None], 3, axis=-1)
    if gen.random() < policy.blur_prob:
        x = gaussian_blur(x, gen.uniform(*policy.blur_sigma), policy.blur_kernel)
    if gen.random() < policy.solarize_prob:
        x = np.where(x >= policy.solarize_threshold, 1.0 - x, x)
    return np.clip(np.ascontiguousarray(x), 0.0, 1.0).astype(img.dtype, copy=False)


def two_views(img: np.ndarray, policy: AugmentPolicy, rng: Union[Rng, np.random.Generator]):
    gen = rng.generator() if isinstance(rng, Rng) else rng
    return augment(img, policy, gen), augment(img, policy, gen)


def noise_views(x: np.ndarray, sigma: float, gen: np.random.Generator):
    """Two independent additive-Gaussian-noise views of a batch of vectors."""
    return x + sigma * gen.normal(size=x.shape), x + sigma * gen.normal(size=x.shape)


@dataclass
class Augmenter:
    """Batch-level view generator for either dataset kind."""

    kind: str
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    noise_sigma: float = 0.1

    def __call__(self, batch: np.ndarray, gen: np.random.Generator):
        if self.kind == "vector":
            return noise_views(batch, self.noise_sigma, gen)
        a = np.empty_like(batch)
        b = np.empty_like(batch)
        for i, img in enumerate(batch):
            a[i], b[i] = two_views(img, self.policy, gen)
        return a, b
