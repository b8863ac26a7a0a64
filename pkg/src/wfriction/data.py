"""IDX dataset loading, train/validation splits, permuted tasks, synthetic data."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Prng, ShapeError, fisher_yates_permutation

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# task_seed reserved for the unpermuted first task
IDENTITY_TASK_SEED = 0


class IdxFormatError(ValueError):
    pass


class IdxLengthError(IdxFormatError):
    pass


class DataError(RuntimeError):
    """A dataset could not be found or assembled."""


def _read_header(buf: bytes, magic: int, n_dims: int, path) -> tuple[int, ...]:
    need = 4 * (1 + n_dims)
    if len(buf) < need:
        raise IdxLengthError(f"{path}: header truncated ({len(buf)} bytes)")
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise IdxFormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack(f">{n_dims}I", buf[4:need])


def load_idx_images(path) -> np.ndarray:
    """Images as an n x (rows*cols) float64 matrix scaled to [0, 1]."""
    buf = Path(path).read_bytes()
    n, rows, cols = _read_header(buf, IDX_IMAGES_MAGIC, 3, path)
    size = n * rows * cols
    payload = buf[16:]
    if len(payload) != size:
        raise IdxLengthError(f"{path}: expected {size} pixel bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n,) = _read_header(buf, IDX_LABELS_MAGIC, 1, path)
    payload = buf[8:]
    if len(payload) != n:
        raise IdxLengthError(f"{path}: expected {n} label bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def encode_idx_images(images: np.ndarray, rows: int, cols: int) -> bytes:
    """Inverse of ``load_idx_images`` for values that are exact multiples of 1/255."""
    raw = np.rint(np.asarray(images) * 255.0).astype(np.uint8)
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, raw.shape[0], rows, cols) + raw.tobytes()


def encode_idx_labels(labels) -> bytes:
    raw = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, raw.shape[0]) + raw.tobytes()


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.name}: {self.inputs.shape} inputs vs {self.labels.shape} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"{self.name}: labels outside [0, {self.num_classes})")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise DataError(f"{self.name}: inputs outside [0, 1]")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, name: str | None = None) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.num_classes, name or self.name)


def load_idx_dataset(images_path, labels_path, num_classes: int = 10, name: str = "") -> LabeledDataset:
    try:
        x = load_idx_images(images_path)
        y = load_idx_labels(labels_path)
    except FileNotFoundError as e:
        raise DataError(f"dataset file not found: {e.filename}") from e
    if x.shape[0] != y.shape[0]:
        raise DataError(f"{images_path} has {x.shape[0]} images but {labels_path} has {y.shape[0]} labels")
    return LabeledDataset(x, y, num_classes, name or Path(images_path).stem)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("cannot split an empty dataset")
    order = fisher_yates_permutation(Prng(spec.seed), n)
    k = int(np.floor(spec.train_fraction * n))
    return order[:k], order[k:]


def split_train_validation(ds: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffle, then the first floor(fraction*n) examples train."""
    tr, va = split_indices(len(ds), spec)
    return ds.subset(tr, f"{ds.name}/train"), ds.subset(va, f"{ds.name}/validation")


@dataclass(frozen=True, eq=False)
class PermutationTask:
    """A dataset viewed through a fixed pixel permutation.

    Images are stored once and permuted when rows are read.
    """

    base: LabeledDataset
    pixel_permutation: np.ndarray
    task_seed: int

    def __len__(self) -> int:
        return len(self.base)

    @property
    def labels(self) -> np.ndarray:
        return self.base.labels

    @property
    def num_classes(self) -> int:
        return self.base.num_classes

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def name(self) -> str:
        return f"{self.base.name}/perm{self.task_seed}"

    def rows(self, idx) -> np.ndarray:
        return self.base.inputs[idx][:, self.pixel_permutation]

    @property
    def inputs(self) -> np.ndarray:
        return self.base.inputs[:, self.pixel_permutation]

    def on(self, other: LabeledDataset) -> "PermutationTask":
        """Same permutation over a different split of the base data."""
        return PermutationTask(other, self.pixel_permutation, self.task_seed)


def make_permutation(task_seed: int, dim: int) -> np.ndarray:
    if task_seed == IDENTITY_TASK_SEED:
        return np.arange(dim, dtype=np.int64)
    return fisher_yates_permutation(Prng(task_seed), dim)


def make_permuted_task(base: LabeledDataset, task_seed: int, expected_dim: int = 784) -> PermutationTask:
    if base.dim != expected_dim:
        raise ShapeError(f"permuted tasks need {expected_dim}-dim inputs, got {base.dim}")
    return PermutationTask(base, make_permutation(task_seed, base.dim), task_seed)


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def task_rows(task, idx) -> np.ndarray:
    """Rows ``idx`` of a LabeledDataset or PermutationTask."""
    if isinstance(task, PermutationTask):
        return task.rows(idx)
    return task.inputs[idx]


def synthetic_gaussians(
    num_classes: int,
    per_class: int,
    dim: int,
    rng: Prng,
    noise: float = 0.1,
    means: np.ndarray | None = None,
    name: str = "gaussians",
) -> LabeledDataset:
    """Isotropic Gaussian clusters clipped to [0, 1], ``per_class`` points each.

    Class means are drawn uniformly from [0.1, 0.9]^dim unless given.
    Rows come out class by class; shuffle downstream if order matters.
    """
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("num_classes, per_class and dim must be positive")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    if means is None:
        means = rng.uniform(0.1, 0.9, size=(num_classes, dim))
    means = np.asarray(means, dtype=np.float64)
    if means.shape != (num_classes, dim):
        raise ShapeError(f"means must have shape {(num_classes, dim)}, got {means.shape}")
    labels = np.repeat(np.arange(num_classes), per_class)
    x = means[labels]
    if noise > 0:
        x = x + noise * rng.normal((labels.size, dim))
    return LabeledDataset(np.clip(x, 0.0, 1.0), labels, num_classes, name)


def glyph_prototypes(rng: Prng, num_classes: int = 10, strokes: int = 3, side: int = 28, margin: float = 5.0) -> np.ndarray:
    """Random stroke skeletons, shape (num_classes, strokes, 2 endpoints, (row, col))."""
    return rng.uniform(margin, side - 1 - margin, size=(num_classes, strokes, 2, 2))


def synthetic_glyphs(
    num_classes: int,
    per_class: int,
    rng: Prng,
    prototypes: np.ndarray | None = None,
    side: int = 28,
    jitter: float = 1.5,
    shift: int = 2,
    width: float = 1.5,
    noise: float = 0.05,
    name: str = "glyphs",
) -> LabeledDataset:
    """Handwriting-like images rendered from per-class stroke prototypes.

    Each example perturbs its class's stroke endpoints, translates the whole
    glyph by up to ``shift`` pixels and adds pixel noise. Unlike isotropic
    clusters, glyph families share pixels, so sequential tasks interfere the
    way MNIST-style image tasks do. Labels cycle 0, 1, ..., num_classes-1.
    """
    if num_classes < 1 or per_class < 1:
        raise ValueError("num_classes and per_class must be positive")
    if prototypes is None:
        prototypes = glyph_prototypes(rng, num_classes, side=side)
    if prototypes.shape[0] != num_classes:
        raise ShapeError(f"{prototypes.shape[0]} prototypes for {num_classes} classes")
    n = num_classes * per_class
    labels = np.arange(n) % num_classes
    seg = prototypes[labels] + jitter * rng.normal(prototypes[labels].shape)
    offsets = np.floor(rng.random((n, 1, 1, 2)) * (2 * shift + 1)) - shift
    seg = seg + offsets
    yy, xx = np.mgrid[0:side, 0:side]
    pix = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    images = np.empty((n, side * side))
    for lo in range(0, n, 512):
        s = seg[lo : lo + 512]
        a = s[:, :, 0, None, :]
        ab = s[:, :, 1, None, :] - a
        ap = pix[None, None] - a
        t = np.clip((ap * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-12), 0.0, 1.0)
        dist = np.sqrt(((ap - t[..., None] * ab) ** 2).sum(-1)).min(axis=1)
        images[lo : lo + 512] = np.clip(1.0 - (dist / width) ** 2, 0.0, 1.0)
    if noise > 0:
        images = images + noise * rng.normal(images.shape)
    return LabeledDataset(np.clip(images, 0.0, 1.0), labels, num_classes, name)
