"""Hyperspectral cube I/O, patch extraction, per-class splits and a
synthetic rank-1 task.

Cubes are ``(H, W, B)`` float64 arrays.  Label maps are lists of
``(row, col, class_id)`` with 1-based coordinates and class ids, matching the
label CSV on disk.  Inside a :class:`LabeledDataset` classes are 0-based.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import cp_reconstruct, CPFactors

__all__ = [
    "BadMagicError",
    "DataError",
    "LabeledDataset",
    "NonFiniteDataError",
    "TruncatedDataError",
    "extract_patches",
    "generate_synthetic",
    "load_cube",
    "load_labels",
    "load_patch_set",
    "normalize_bands",
    "per_class_split",
    "save_cube",
    "save_labels",
    "save_patch_set",
    "select_classes",
]

CUBE_MAGIC = b"HSC1"
PATCH_MAGIC = b"HSP1"


class DataError(ValueError):
    """Input data is unusable (bad file, bad labels, too few samples)."""


class BadMagicError(DataError):
    pass


class TruncatedDataError(DataError):
    pass


class NonFiniteDataError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Samples of identical shape with integer class labels.

    ``samples`` has shape ``(N, *dims)``; ``labels`` holds 0-based class
    indices below ``n_classes``.
    """

    samples: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.samples, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if X.ndim < 2 and X.shape[0] != 0:
            raise ValueError("samples must have shape (N, *dims)")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} samples but {y.shape[0]} labels")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("labels out of range")
        object.__setattr__(self, "samples", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", int(self.n_classes))

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dims(self) -> tuple:
        return tuple(self.samples.shape[1:])

    @property
    def targets(self) -> np.ndarray:
        """One-hot targets, shape ``(N, C)``."""
        return np.eye(self.n_classes)[self.labels]

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(self.samples[index], self.labels[index], self.n_classes)


# -- cube and label files ----------------------------------------------------

def save_cube(cube, path) -> None:
    """Write an ``(H, W, B)`` cube in HSC format (values stored as float32)."""
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ValueError(f"cube must be 3-order, got shape {cube.shape}")
    H, W, B = cube.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<3I", H, W, B))
        fh.write(np.ascontiguousarray(cube, dtype="<f4").tobytes())


def load_cube(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CUBE_MAGIC:
        raise BadMagicError(f"{path}: not an HSC file")
    if len(raw) < 16:
        raise TruncatedDataError(f"{path}: header truncated")
    H, W, B = struct.unpack("<3I", raw[4:16])
    if min(H, W, B) < 1:
        raise DataError(f"{path}: zero dimension in header {H}x{W}x{B}")
    expected = 4 * H * W * B
    payload = raw[16:]
    if len(payload) < expected:
        raise TruncatedDataError(
            f"{path}: expected {H * W * B} values, found {len(payload) // 4}"
        )
    if len(payload) > expected:
        raise DataError(f"{path}: {len(payload) - expected} trailing bytes")
    cube = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(H, W, B)
    if not np.all(np.isfinite(cube)):
        raise NonFiniteDataError(f"{path}: cube contains non-finite values")
    return cube


def load_labels(path) -> list:
    """Read a ``row,col,class`` CSV into ``(row, col, class_id)`` tuples."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["row", "col", "class"]:
            raise DataError(f"{path}: expected header 'row,col,class'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                r, c, k = (int(v) for v in rec)
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed record {rec}") from None
            out.append((r, c, k))
    return out


def save_labels(labels, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "class"])
        writer.writerows(labels)


def normalize_bands(cube) -> np.ndarray:
    """Min-max rescale each band to [0, 1]; constant bands become 0."""
    cube = np.asarray(cube, dtype=np.float64)
    lo = cube.min(axis=(0, 1), keepdims=True)
    span = cube.max(axis=(0, 1), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (cube - lo) / safe, 0.0)


def extract_patches(cube, labels: Sequence, s: int = 5, n_classes: int | None = None) -> LabeledDataset:
    """Pair every labeled pixel with the ``s x s x B`` patch centred on it.

    Pixels whose patch would cross the image border are dropped.  Samples
    come out in row-major pixel order.
    """
    if s < 1 or s % 2 == 0:
        raise ValueError(f"patch side must be a positive odd integer, got {s}")
    cube = np.asarray(cube, dtype=np.float64)
    H, W, B = cube.shape
    half = s // 2
    seen = set()
    for r, c, k in labels:
        if not (1 <= r <= H and 1 <= c <= W):
            raise DataError(f"label at ({r}, {c}) outside a {H}x{W} image")
        if k < 1:
            raise DataError(f"class ids start at 1, got {k}")
        if (r, c) in seen:
            raise DataError(f"pixel ({r}, {c}) labeled twice")
        seen.add((r, c))
    if n_classes is None:
        n_classes = max((k for _, _, k in labels), default=1)
    patches, ys = [], []
    for r, c, k in sorted(labels):
        r0, c0 = r - 1 - half, c - 1 - half
        if r0 < 0 or c0 < 0 or r0 + s > H or c0 + s > W:
            continue
        patches.append(cube[r0:r0 + s, c0:c0 + s, :])
        ys.append(k - 1)
    samples = np.stack(patches) if patches else np.empty((0, s, s, B))
    return LabeledDataset(samples, np.asarray(ys, dtype=np.int64), n_classes)


def per_class_split(dataset: LabeledDataset, n_per_class: int, seed: int):
    """Draw ``n_per_class`` training samples from every class; the rest is test.

    Sampling is uniform without replacement.  Both halves keep the original
    sample order.
    """
    hist = dataset.histogram
    short = [k + 1 for k in range(dataset.n_classes) if hist[k] < n_per_class]
    if short:
        raise DataError(f"classes {short} have fewer than {n_per_class} samples")
    rng = np.random.default_rng(seed)
    take = np.zeros(len(dataset), dtype=bool)
    for k in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == k)
        take[rng.choice(members, size=n_per_class, replace=False)] = True
    return dataset.subset(np.flatnonzero(take)), dataset.subset(np.flatnonzero(~take))


def select_classes(dataset: LabeledDataset, min_count: int) -> LabeledDataset:
    """Keep classes with at least ``min_count`` samples, renumbered contiguously."""
    keep = np.flatnonzero(dataset.histogram >= min_count)
    if keep.size < 2:
        raise DataError(f"fewer than two classes have {min_count} samples")
    remap = np.full(dataset.n_classes, -1)
    remap[keep] = np.arange(keep.size)
    mask = remap[dataset.labels] >= 0
    return LabeledDataset(dataset.samples[mask], remap[dataset.labels[mask]], keep.size)


def generate_synthetic(dims: Sequence[int], n_classes: int, n_per_class: int,
                       noise_sigma: float, seed: int) -> LabeledDataset:
    """Rank-1 prototype per class plus i.i.d. Gaussian noise.

    Each prototype is the outer product of ``len(dims)`` random unit vectors.
    Samples are grouped by class.
    """
    dims = tuple(int(p) for p in dims)
    if not dims or any(p < 1 for p in dims):
        raise ValueError(f"invalid dims {dims}")
    if n_classes < 1 or n_per_class < 0:
        raise ValueError("n_classes must be positive and n_per_class non-negative")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    prototypes = []
    for _ in range(n_classes):
        vs = [rng.standard_normal(p) for p in dims]
        vs = [v / np.linalg.norm(v) for v in vs]
        prototypes.append(cp_reconstruct(CPFactors(tuple(v[:, None] for v in vs))))
    samples = np.repeat(np.stack(prototypes), n_per_class, axis=0)
    samples = samples + noise_sigma * rng.standard_normal(samples.shape)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    return LabeledDataset(samples, labels, n_classes)


# -- patch-set files (synthetic datasets on disk) ----------------------------

def save_patch_set(dataset: LabeledDataset, data_path, labels_path) -> None:
    """Write samples in HSP format plus an ``index,class`` label CSV.

    HSP layout: magic ``HSP1``; little-endian uint32 ``D``, ``N``, ``C``;
    ``D`` uint32 dims; then ``N`` samples as float64, each in vec order.
    """
    N, dims = len(dataset), dataset.dims
    with open(data_path, "wb") as fh:
        fh.write(PATCH_MAGIC)
        fh.write(struct.pack(f"<{3 + len(dims)}I", len(dims), N, dataset.n_classes, *dims))
        flat = dataset.samples.reshape(N, -1, order="F")
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())
    with open(labels_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "class"])
        writer.writerows((i + 1, int(k) + 1) for i, k in enumerate(dataset.labels))


def load_patch_set(data_path, labels_path) -> LabeledDataset:
    raw = Path(data_path).read_bytes()
    if raw[:4] != PATCH_MAGIC:
        raise BadMagicError(f"{data_path}: not an HSP file")
    if len(raw) < 16:
        raise TruncatedDataError(f"{data_path}: header truncated")
    D, N, C = struct.unpack("<3I", raw[4:16])
    end = 16 + 4 * D
    if len(raw) < end:
        raise TruncatedDataError(f"{data_path}: header truncated")
    dims = struct.unpack(f"<{D}I", raw[16:end])
    size = N * math.prod(dims)
    if len(raw) - end != 8 * size:
        raise TruncatedDataError(f"{data_path}: expected {size} values, found {(len(raw) - end) // 8}")
    flat = np.frombuffer(raw[end:], dtype="<f8").astype(np.float64).reshape(N, -1)
    if not np.all(np.isfinite(flat)):
        raise NonFiniteDataError(f"{data_path}: non-finite values")
    samples = flat.reshape((N, *dims), order="F")
    labels = np.zeros(N, dtype=np.int64)
    seen = np.zeros(N, dtype=bool)
    with open(labels_path, newline="") as fh:
        reader = csv.reader(fh)
        if [h.strip() for h in next(reader, [])] != ["index", "class"]:
            raise DataError(f"{labels_path}: expected header 'index,class'")
        for rec in reader:
            if not rec:
                continue
            try:
                i, k = int(rec[0]), int(rec[1])
            except (ValueError, IndexError):
                raise DataError(f"{labels_path}: malformed record {rec}") from None
            if not (1 <= i <= N and 1 <= k <= C):
                raise DataError(f"{labels_path}: record {rec} out of range")
            labels[i - 1], seen[i - 1] = k - 1, True
    if not seen.all():
        raise DataError(f"{labels_path}: {int((~seen).sum())} samples unlabeled")
    return LabeledDataset(samples, labels, C)
