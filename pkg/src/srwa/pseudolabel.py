"""Confidence-filtered pseudo-labels and P x K batches for triplet mining."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import NetworkTriple, predict_proba


@dataclass(frozen=True)
class PseudoLabelSet:
    indices: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        for name in ("indices", "labels", "confidences"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("duplicate target indices in pseudo-label set")

    @classmethod
    def empty(cls, epoch: int = 0) -> "PseudoLabelSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), epoch)

    def __len__(self) -> int:
        return len(self.indices)

    def accuracy(self, true_labels) -> float | None:
        """Fraction of accepted labels that are correct; None when nothing was accepted."""
        if not len(self):
            return None
        return float(np.mean(np.asarray(true_labels)[self.indices] == self.labels))


@dataclass(frozen=True)
class TripletBatchSpec:
    classes_per_batch: int = 2
    samples_per_class: int = 3

    def __post_init__(self):
        if self.classes_per_batch < 2 or self.samples_per_class < 2:
            raise ValueError("P x K batches need P >= 2 and K >= 2")


@dataclass(frozen=True)
class PKBatch:
    """Rows drawn for one triplet step; ``origin`` is "source" or "target" per row."""

    indices: np.ndarray
    labels: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U6"))

    def __len__(self) -> int:
        return len(self.indices)


def assign_from_probs(probs: np.ndarray, threshold: float, epoch: int = 0) -> PseudoLabelSet:
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    keep = np.flatnonzero(conf >= threshold)
    return PseudoLabelSet(keep, pred[keep], conf[keep], epoch)


def assign(net: NetworkTriple, target_inputs: np.ndarray, threshold: float, epoch: int = 0) -> PseudoLabelSet:
    """Argmax labels for every target row whose top probability is >= threshold."""
    return assign_from_probs(predict_proba(net, target_inputs), threshold, epoch)


def refresh_schedule(epoch: int, cadence: int = 1) -> bool:
    if cadence < 1:
        raise ValueError(f"cadence must be >= 1, got {cadence}")
    return epoch % cadence == 0


def sample_pk_batch(
    source_labels,
    pseudo: PseudoLabelSet | None,
    spec: TripletBatchSpec,
    rng: np.random.Generator,
) -> PKBatch:
    """Draw P classes, then K rows per class from source plus accepted target rows.

    A class with fewer than K rows is sampled with replacement.  Returns an
    empty batch when fewer than two classes are available.
    """
    source_labels = np.asarray(source_labels, dtype=np.int64)
    pool_idx = [np.arange(len(source_labels))]
    pool_lab = [source_labels]
    pool_org = [np.full(len(source_labels), "source")]
    if pseudo is not None and len(pseudo):
        pool_idx.append(np.asarray(pseudo.indices, dtype=np.int64))
        pool_lab.append(np.asarray(pseudo.labels, dtype=np.int64))
        pool_org.append(np.full(len(pseudo), "target"))
    idx = np.concatenate(pool_idx)
    lab = np.concatenate(pool_lab)
    org = np.concatenate(pool_org)

    classes = np.unique(lab)
    if len(classes) < 2:
        return PKBatch(np.zeros(0, np.int64), np.zeros(0, np.int64))
    chosen = rng.choice(classes, size=min(spec.classes_per_batch, len(classes)), replace=False)
    k = spec.samples_per_class
    picks = []
    for c in np.sort(chosen):
        members = np.flatnonzero(lab == c)
        picks.append(rng.choice(members, size=k, replace=len(members) < k))
    rows = np.concatenate(picks)
    return PKBatch(idx[rows], lab[rows], org[rows])


def save_pseudo_csv(sets, path: str | Path) -> None:
    """Dump one or more pseudo-label sets as ``epoch,target_index,label,confidence``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "target_index", "label", "confidence"])
        for ps in sets:
            for i, y, c in zip(ps.indices, ps.labels, ps.confidences):
                w.writerow([ps.epoch, int(i), int(y), repr(float(c))])
