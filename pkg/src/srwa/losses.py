"""Loss terms of the re-weighted adversarial objective.

All logarithms are natural and clamped at ``LOG_CLAMP`` so that
``0 * log 0`` evaluates to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_CLAMP, Node

SOURCE, TARGET = 1, 0


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    adversarial: float
    entropy_min: float
    triplet: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "task": self.task,
            "adversarial": self.adversarial,
            "entropy_min": self.entropy_min,
            "triplet": self.triplet,
            "total": self.total,
        }


def _labels_array(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ValueError(f"label {bad} out of range [0, {num_classes})")
    return labels


def task_loss(probs: Node, labels: Sequence[int]) -> Node:
    """Mean cross-entropy of the true-class probabilities."""
    n, num_classes = probs.shape
    labels = _labels_array(labels, num_classes)
    if n < 1 or labels.shape != (n,):
        raise ValueError(f"need one label per row: {n} rows, {labels.shape[0]} labels")
    picked = ad.take(probs, (np.arange(n), labels))
    return ad.neg(ad.mean(ad.log_clamped(picked)))


def conditional_entropy(probs) -> float | np.ndarray:
    """``-(1/C) * sum_c p_c log p_c`` for one row, or row-wise for a matrix."""
    p = np.asarray(probs, dtype=np.float64)
    num_classes = p.shape[-1]
    h = -(p * np.log(np.clip(p, LOG_CLAMP, 1.0))).sum(axis=-1) / num_classes
    return float(h) if p.ndim == 1 else h


def entropy_weights(probs) -> np.ndarray:
    """Per-sample ``1 + H_p`` factors, treated as constants by the caller."""
    return 1.0 + conditional_entropy(np.atleast_2d(probs))


def domain_bce(d_probs: Node, domain_labels: Sequence[int]) -> Node:
    """Per-sample binary cross-entropy against the domain label, shape [n x 1]."""
    d = np.asarray(domain_labels, dtype=np.float64).reshape(-1, 1)
    if d.shape[0] != d_probs.shape[0]:
        raise ValueError(f"{d_probs.shape[0]} discriminator outputs but {d.shape[0]} domain labels")
    log_q = ad.log_clamped(d_probs)
    log_1mq = ad.log_clamped(ad.add(1.0, ad.neg(d_probs)))
    return ad.neg(ad.add(ad.mul(log_q, d), ad.mul(log_1mq, 1.0 - d)))


def weighted_domain_bce(d_probs: Node, domain_labels: Sequence[int], weights) -> Node:
    """``(1/n) * sum_i w_i * BCE_i``: the discriminator's own objective."""
    n = d_probs.shape[0]
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    if w.shape[0] != n:
        raise ValueError(f"{n} discriminator outputs but {w.shape[0]} weights")
    return ad.mean(ad.mul(domain_bce(d_probs, domain_labels), w))


def adversarial_loss(d_probs: Node, domain_labels: Sequence[int], weights) -> Node:
    """Re-weighted adversarial term ``-(1/n) * sum_i (1 + H_p,i) * BCE_i``."""
    return ad.neg(weighted_domain_bce(d_probs, domain_labels, weights))


def entropy_min_loss(probs: Node) -> Node:
    """Mean per-sample Shannon entropy over a target batch."""
    if probs.shape[0] < 1:
        raise ValueError("entropy_min_loss needs at least one row")
    plogp = ad.mul(probs, ad.log_clamped(probs))
    return ad.neg(ad.mul(ad.total(plogp), 1.0 / probs.shape[0]))


def valid_triplets(labels: Sequence[int]) -> np.ndarray:
    """All index triples (a, p, n) with y_a == y_p != y_n and a != p."""
    y = np.asarray(labels)
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(len(y), dtype=bool)
    mask = pos[:, :, None] & ~same[:, None, :]
    return np.argwhere(mask)


def triplet_loss(embeddings: Node, labels: Sequence[int], margin: float, squared: bool = False) -> Node:
    """Batch-all triplet hinge, averaged over the triplets with positive loss.

    Returns a constant 0 node when the batch admits no valid triplet or no
    triplet violates the margin.
    """
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    trip = valid_triplets(labels)
    if len(trip) == 0:
        return ad.as_node(0.0)
    dist = ad.pairwise_distances(embeddings, squared=squared)
    a, p, n = trip.T
    hinge = ad.relu(ad.add(ad.add(ad.take(dist, (a, p)), margin), ad.neg(ad.take(dist, (a, n)))))
    active = int(np.count_nonzero(hinge.value > 0))
    if active == 0:
        return ad.mul(ad.total(hinge), 0.0)
    return ad.mul(ad.total(hinge), 1.0 / active)


def triplet_loss_bruteforce(embeddings, labels, margin: float, squared: bool = False) -> float:
    """Plain triple loop reference; independent of the vectorized path."""
    x = [list(map(float, row)) for row in np.asarray(embeddings)]
    y = list(labels)

    def dist(i, j):
        d = math.dist(x[i], x[j])
        return d * d if squared else d

    acc, active = 0.0, 0
    for a in range(len(x)):
        for p in range(len(x)):
            if p == a or y[p] != y[a]:
                continue
            for n in range(len(x)):
                if y[n] == y[a]:
                    continue
                h = max(0.0, margin + dist(a, p) - dist(a, n))
                if h > 0:
                    acc += h
                    active += 1
    return acc / active if active else 0.0


def total_loss(task: Node, adversarial: Node, entropy_min: Node, triplet: Node) -> Node:
    """Unweighted sum of the four terms."""
    return ad.add(ad.add(ad.add(task, adversarial), entropy_min), triplet)
