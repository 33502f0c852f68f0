"""Synthetic domain-shift datasets, an IDX reader/writer and CSV round-trips."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DOMAINS = ("source", "target")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class UnlabeledView:
    """What the training loop is allowed to see of the target domain."""

    inputs: np.ndarray
    domain: str = "target"

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    domain: str = "source"

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError(f"inputs must be a non-empty [n x d] array, got shape {inputs.shape}")
        if labels.shape[0] != inputs.shape[0]:
            raise ValueError(f"{inputs.shape[0]} rows but {labels.shape[0]} labels")
        if labels.min() < 0:
            raise ValueError("labels must be non-negative class ids")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def unlabeled(self) -> UnlabeledView:
        return UnlabeledView(self.inputs, self.domain)


@dataclass(frozen=True)
class ShiftSpec:
    rotation: float = 0.0
    translation: tuple[float, ...] = (0.0, 0.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        values = [self.rotation, self.noise_sigma, *self.translation]
        if not all(np.isfinite(values)):
            raise ValueError("shift parameters must be finite")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def gen_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaving half circles, ``n // 2`` points per class."""
    if n < 2 or n % 2:
        raise ValueError(f"n must be an even integer >= 2, got {n}")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([upper, lower])
    if noise > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise, size=x.shape)
    y = np.repeat([0, 1], half)
    return Dataset(x, y, "source")


def gen_gaussian_mixture(n: int, num_classes: int, means, sigma: float, seed: int) -> Dataset:
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] != num_classes:
        raise ValueError(f"need {num_classes} class means, got array of shape {means.shape}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    y = np.repeat(np.arange(num_classes), counts)
    rng = np.random.default_rng(seed)
    x = means[y] + rng.normal(0.0, sigma, size=(n, means.shape[1]))
    return Dataset(x, y, "source")


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def apply_shift(src: Dataset, spec: ShiftSpec) -> Dataset:
    """Rotate about the origin, translate, add fresh noise; relabel as target."""
    x = np.array(src.inputs)
    if spec.rotation != 0.0:
        if src.dim != 2:
            raise ValueError(f"rotation needs 2-D inputs, got {src.dim}-D")
        x = x @ rotation_matrix(spec.rotation).T
    shift = np.asarray(spec.translation, dtype=np.float64)
    if np.any(shift != 0):
        if shift.shape != (src.dim,):
            raise ValueError(f"translation has {shift.size} components for {src.dim}-D inputs")
        x = x + shift
    if spec.noise_sigma > 0:
        x = x + np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, size=x.shape)
    return Dataset(x, src.labels, "target")


def make_two_moons_pair(
    n: int = 600,
    noise: float = 0.1,
    rotation: float = 0.5,
    seed: int = 0,
    translation: Sequence[float] = (0.0, 0.0),
) -> tuple[Dataset, Dataset]:
    """Source moons plus an independently drawn, rotated target sample."""
    source = gen_two_moons(n, noise, seed)
    fresh = gen_two_moons(n, noise, seed + 1_000_003)
    target = apply_shift(fresh, ShiftSpec(rotation, tuple(translation), 0.0, seed))
    return source, target


# -- IDX --------------------------------------------------------------------


def _read_u32s(blob: bytes, count: int, path) -> tuple[int, ...]:
    if len(blob) < 4 * count:
        raise DataFormatError(f"{path}: truncated IDX header")
    return struct.unpack(f">{count}I", blob[: 4 * count])


def load_idx(images_path: str | Path, labels_path: str | Path, downsample: bool = False) -> Dataset:
    img_blob = Path(images_path).read_bytes()
    lab_blob = Path(labels_path).read_bytes()
    magic, = _read_u32s(img_blob, 1, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"{images_path}: bad IDX images magic 0x{magic:08X}, expected 0x{IDX_IMAGES_MAGIC:08X}")
    magic, = _read_u32s(lab_blob, 1, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"{labels_path}: bad IDX labels magic 0x{magic:08X}, expected 0x{IDX_LABELS_MAGIC:08X}")
    _, count, rows, cols = _read_u32s(img_blob, 4, images_path)
    _, n_labels = _read_u32s(lab_blob, 2, labels_path)
    if count != n_labels:
        raise DataFormatError(f"image count {count} does not match label count {n_labels}")
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=16)
    if pixels.size != count * rows * cols:
        raise DataFormatError(f"{images_path}: expected {count * rows * cols} pixel bytes, found {pixels.size}")
    labels = np.frombuffer(lab_blob, dtype=np.uint8, offset=8)
    if labels.size != count:
        raise DataFormatError(f"{labels_path}: expected {count} label bytes, found {labels.size}")
    images = pixels.reshape(count, rows, cols).astype(np.float64) / 255.0
    if downsample:
        images = images[:, : rows // 2 * 2, : cols // 2 * 2]
        images = images.reshape(count, rows // 2, 2, cols // 2, 2).mean(axis=(2, 4))
    return Dataset(images.reshape(count, -1), labels.astype(np.int64), "source")


def write_idx(images: np.ndarray, labels, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 images [n x rows x cols] and labels in IDX format."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError("images must be a uint8 array of shape [n, rows, cols]")
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


# -- CSV --------------------------------------------------------------------


def save_csv(ds: Dataset, path: str | Path) -> None:
    header = [f"x{i}" for i in range(ds.dim)] + ["label", "domain"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, label in zip(ds.inputs, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label), ds.domain])


def load_csv(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[-2:] != ["label", "domain"] or any(h != f"x{i}" for i, h in enumerate(header[:-2])):
            raise DataFormatError(f"{path}: unexpected header {','.join(header)}")
        rows, labels, domains = [], [], set()
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append([float(v) for v in rec[:-2]])
            labels.append(int(rec[-2]))
            domains.add(rec[-1])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    if len(domains) != 1:
        raise DataFormatError(f"{path}: mixed domain tags {sorted(domains)}")
    return Dataset(np.array(rows), np.array(labels), domains.pop())
