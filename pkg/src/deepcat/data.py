"""Datasets: synthetic benchmarks, IDX / CIFAR-10 binary loaders, human label CSVs."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import helmert

from .errors import ConfigurationError, DataError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_CLASSES = 10


@dataclass(frozen=True)
class LabeledDataset:
    """Stimuli (``N x features`` or ``N x c x h x w``) with labels in ``0..C-1``."""

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or inputs.shape[0] != labels.shape[0]:
            raise DataError(f"{inputs.shape[0]} inputs but {labels.shape} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in 0..{self.n_classes - 1}")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.inputs.shape[1:]

    def subset(self, indices) -> LabeledDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.inputs[indices], self.labels[indices], self.n_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class HumanLabelSet:
    """Per-stimulus human label distributions; row ``i`` is stimulus ``indices[i]``."""

    distributions: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        dist = np.asarray(self.distributions, dtype=np.float64)
        if dist.ndim != 2 or np.any(dist < 0) or np.any(np.abs(dist.sum(axis=1) - 1.0) > 1e-6):
            raise DataError("human distributions must be non-negative rows summing to 1")
        object.__setattr__(self, "distributions", dist)
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))

    def __len__(self):
        return len(self.distributions)

    @property
    def n_classes(self) -> int:
        return self.distributions.shape[1]


# --- generators ---------------------------------------------------------------


def _simplex_vertices(n_classes, dim, separation, rng):
    if dim >= n_classes - 1:
        # columns of the reduced Helmert matrix: a centered simplex with edge sqrt(2)
        vertices = helmert(n_classes, full=False).T * (separation / np.sqrt(2.0))
        out = np.zeros((n_classes, dim))
        out[:, : n_classes - 1] = vertices
        return out
    # no simplex fits: evenly spaced points on a seeded random line, seeded class order
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    positions = (rng.permutation(n_classes) - (n_classes - 1) / 2.0) * separation
    return positions[:, None] * direction[None, :]


def gen_blobs(n_classes: int, per_class: int, dim: int, separation: float, seed: int) -> LabeledDataset:
    """Unit-variance Gaussian blobs around the vertices of a regular simplex.

    Means are ``separation`` apart.  When ``dim < n_classes - 1`` no simplex
    fits, so means sit ``separation`` apart along a seeded random line.
    Examples are ordered class by class.
    """
    if n_classes < 2 or per_class < 1 or dim < 1 or not separation > 0:
        raise ConfigurationError("gen_blobs needs n_classes >= 2, per_class >= 1, dim >= 1, separation > 0")
    rng = np.random.default_rng(seed)
    means = _simplex_vertices(n_classes, dim, separation, rng)
    inputs = np.concatenate([m + rng.normal(size=(per_class, dim)) for m in means])
    labels = np.repeat(np.arange(n_classes), per_class)
    return LabeledDataset(inputs, labels, n_classes)


def multimodal_means(n_classes: int, modes_per_class: int, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Grid cell centers and their classes for :func:`gen_multimodal`.

    Cells form a ``modes_per_class x n_classes`` grid centered at the
    origin; cell ``(r, c)`` belongs to class ``(r + c) % n_classes``, so
    neighbouring cells always differ in class (a checkerboard for two
    classes, XOR for a 2 x 2 grid).
    """
    rows, cols = np.meshgrid(np.arange(modes_per_class), np.arange(n_classes), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    points = np.stack([cols - (n_classes - 1) / 2.0, rows - (modes_per_class - 1) / 2.0], axis=1) * spacing
    return points, (rows + cols) % n_classes


def gen_multimodal(
    n_classes: int,
    modes_per_class: int,
    per_mode: int,
    dim: int,
    seed: int,
    spacing: float = 6.0,
) -> LabeledDataset:
    """Classes made of several unit-variance clusters interleaved on a grid.

    The clusters of different classes alternate so that the class means
    nearly coincide and one prototype per class cannot separate them.
    Examples are ordered class by class; within a class the modes take
    turns, so any prefix of a class covers its modes evenly.
    """
    if n_classes < 2 or modes_per_class < 2 or per_mode < 1 or dim < 2 or not spacing > 0:
        raise ConfigurationError("gen_multimodal needs n_classes >= 2, modes_per_class >= 2, per_mode >= 1, dim >= 2")
    rng = np.random.default_rng(seed)
    points, owners = multimodal_means(n_classes, modes_per_class, spacing)
    inputs, labels = [], []
    for c in range(n_classes):
        modes = points[owners == c]
        mode_of = np.tile(np.arange(modes_per_class), per_mode)
        means = np.zeros((len(mode_of), dim))
        means[:, :2] = modes[mode_of]
        inputs.append(means + rng.normal(size=means.shape))
        labels.append(np.full(len(mode_of), c))
    return LabeledDataset(np.concatenate(inputs), np.concatenate(labels), n_classes)


def split(dataset: LabeledDataset, fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; ``fraction`` of every class goes to the first part.

    Both parts keep the original example order.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise DataError(f"class {c} has fewer than 2 examples and cannot be split")
        n_train = min(max(int(round(fraction * len(members))), 1), len(members) - 1)
        chosen = rng.permutation(len(members))
        train_idx.append(members[chosen[:n_train]])
        val_idx.append(members[chosen[n_train:]])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return dataset.subset(train_idx), dataset.subset(val_idx)


# --- IDX ----------------------------------------------------------------------


def _read_idx(path, expected_magic, what):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{what} file truncated in header", offset=len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"{what} file has magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = expected_magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{what} file truncated in dimension header", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = header_end + int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(f"{what} file holds {len(raw)} bytes, header implies {expected}", offset=min(len(raw), expected))
    return dims, np.frombuffer(raw, dtype=np.uint8, offset=header_end)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> LabeledDataset:
    """Load an IDX image/label pair (e.g. MNIST) as ``N x 1 x h x w`` floats in [0, 1]."""
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    (n_labels,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if n_labels != count:
        raise FormatError(f"labels file holds {n_labels} labels for {count} images", offset=4)
    if n_classes is None:
        n_classes = max(int(labels.max()) + 1 if labels.size else 0, 2)
    images = pixels.reshape(count, 1, rows, cols).astype(np.float64) / 255.0
    return LabeledDataset(images, labels.astype(np.int64), n_classes)


def write_idx(dataset: LabeledDataset, images_path, labels_path):
    """Write single-channel images (values in [0, 1]) and labels as IDX files."""
    inputs = dataset.inputs
    if inputs.ndim == 4:
        if inputs.shape[1] != 1:
            raise DataError("IDX images must have a single channel")
        inputs = inputs[:, 0]
    if inputs.ndim != 3:
        raise DataError(f"IDX images need shape N x h x w, got {dataset.inputs.shape}")
    pixels = np.clip(np.rint(inputs * 255.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">I3I", IDX_IMAGES_MAGIC, *pixels.shape) + pixels.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)) + dataset.labels.astype(np.uint8).tobytes()
    )


# --- CIFAR-10 -----------------------------------------------------------------


def load_cifar10_binary(paths) -> LabeledDataset:
    """Load CIFAR-10 binary batches: 3073-byte records, label byte then RGB planes."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise FormatError(f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}", offset=len(raw))
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(records[:, 0] >= CIFAR_CLASSES)
        if bad.size:
            raise DataError(f"{path}: record {bad[0]} has label {records[bad[0], 0]} > 9")
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
    if not images:
        raise DataError("no CIFAR-10 files given")
    return LabeledDataset(np.concatenate(images), np.concatenate(labels), CIFAR_CLASSES)


def write_cifar10_binary(dataset: LabeledDataset, path):
    if dataset.inputs.shape[1:] != (3, 32, 32):
        raise DataError(f"CIFAR-10 records need 3 x 32 x 32 images, got {dataset.inputs.shape[1:]}")
    pixels = np.clip(np.rint(dataset.inputs * 255.0), 0, 255).astype(np.uint8).reshape(len(dataset), -1)
    records = np.concatenate([dataset.labels.astype(np.uint8)[:, None], pixels], axis=1)
    Path(path).write_bytes(records.tobytes())


# --- human label distributions ---------------------------------------------------


def load_human_csv(path, n_classes: int) -> HumanLabelSet:
    """Read ``index, v_1, ..., v_C`` rows (no header).

    Rows whose values sum to more than 1 + 1e-6 are treated as counts and
    normalized; other rows must already be probabilities.
    """
    seen = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != n_classes + 1:
                raise FormatError(f"expected {n_classes + 1} columns, found {len(row)}", row=row_no)
            try:
                index = int(row[0])
                values = np.array([float(v) for v in row[1:]])
            except ValueError:
                raise FormatError("non-numeric field", row=row_no) from None
            if index < 0:
                raise FormatError(f"negative stimulus index {index}", row=row_no)
            if index in seen:
                raise FormatError(f"duplicate stimulus index {index}", row=row_no)
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise FormatError("values must be finite and non-negative", row=row_no)
            total = values.sum()
            if total > 1.0 + 1e-6:
                values = values / total
            elif abs(total - 1.0) > 1e-6:
                raise FormatError(f"probabilities sum to {total}, not 1", row=row_no)
            seen[index] = values
    order = sorted(seen)
    dist = np.array([seen[i] for i in order]).reshape(len(order), n_classes)
    return HumanLabelSet(dist, np.array(order, dtype=np.int64))


def write_human_csv(human: HumanLabelSet, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for idx, row in zip(human.indices, human.distributions):
            writer.writerow([int(idx), *(repr(float(v)) for v in row)])
