"""Accuracy, proxy A-distance, target entropy and 2-D feature projections."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .losses import LOG_CLAMP
from .model import NetworkTriple, embed, predict_proba
from .pseudolabel import PseudoLabelSet

PAD_STEPS = 500
PAD_LR = 0.1
PAD_L2 = 1e-3


@dataclass(frozen=True)
class EvalReport:
    source_accuracy: float
    target_accuracy: float
    a_distance: float
    mean_target_entropy: float
    pseudo_accuracy: float | None = None

    def __post_init__(self):
        for name in ("source_accuracy", "target_accuracy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        if not 0.0 <= self.a_distance <= 2.0:
            raise ValueError("a_distance outside [0, 2]")
        if self.mean_target_entropy < 0:
            raise ValueError("mean_target_entropy must be non-negative")

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            lines.append(f"{key}={'' if value is None else repr(value)}")
        return "\n".join(lines) + "\n"

    def csv_header(self) -> str:
        return ",".join(asdict(self))

    def to_csv_row(self) -> str:
        return ",".join("" if v is None else repr(v) for v in asdict(self).values())

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        txt, row = out_dir / "eval_report.txt", out_dir / "eval_report.csv"
        txt.write_text(self.to_text())
        row.write_text(self.csv_header() + "\n" + self.to_csv_row() + "\n")
        return txt, row


def accuracy_from_probs(probs: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    # argmax returns the first maximum, i.e. ties go to the lowest class id
    return float(np.mean(probs.argmax(axis=1) == labels))


def accuracy(net: NetworkTriple, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    return accuracy_from_probs(predict_proba(net, ds.inputs), ds.labels)


def shannon_entropy_rows(probs: np.ndarray) -> np.ndarray:
    return -(probs * np.log(np.clip(probs, LOG_CLAMP, 1.0))).sum(axis=1)


def mean_target_entropy(net: NetworkTriple, target_inputs: np.ndarray) -> float:
    if len(target_inputs) == 0:
        raise ValueError("mean_target_entropy needs at least one sample")
    return float(shannon_entropy_rows(predict_proba(net, target_inputs)).mean())


def _fit_logistic(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(PAD_STEPS):
        z = x @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        r = p - y
        w -= PAD_LR * (x.T @ r / n + PAD_L2 * w)
        b -= PAD_LR * r.mean()
    return w, b


def _pad_from_split(train_s, test_s, train_t, test_t) -> float:
    x_train = np.vstack([train_s, train_t])
    y_train = np.concatenate([np.ones(len(train_s)), np.zeros(len(train_t))])
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    sd[sd == 0] = 1.0
    w, b = _fit_logistic((x_train - mu) / sd, y_train)
    x_test = (np.vstack([test_s, test_t]) - mu) / sd
    y_test = np.concatenate([np.ones(len(test_s)), np.zeros(len(test_t))])
    z = x_test @ w + b
    err = float(np.mean((z > 0) != (y_test == 1)))
    eps = min(err, 0.5)
    return float(np.clip(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0))


def split_halves(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    return perm[: n // 2], perm[n // 2 :]


def proxy_a_distance(features_source: np.ndarray, features_target: np.ndarray, seed: int = 0) -> float:
    """``2 * (1 - 2 * eps)`` with eps the held-out error of a linear domain classifier."""
    fs = np.asarray(features_source, dtype=np.float64)
    ft = np.asarray(features_target, dtype=np.float64)
    if len(fs) < 4 or len(ft) < 4:
        raise ValueError("proxy A-distance needs at least 4 samples per domain")
    rng = np.random.default_rng(seed)
    tr_s, te_s = split_halves(len(fs), rng)
    tr_t, te_t = split_halves(len(ft), rng)
    return _pad_from_split(fs[tr_s], fs[te_s], ft[tr_t], ft[te_t])


# -- projection -------------------------------------------------------------


@dataclass(frozen=True)
class Projection:
    coords: np.ndarray
    components: np.ndarray
    variances: np.ndarray
    degenerate: bool = False


def _power_iteration(cov: np.ndarray, iters: int, tol: float) -> np.ndarray:
    v = cov[:, np.argmax(np.linalg.norm(cov, axis=0))].copy()
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros(cov.shape[0])
    v /= norm
    for _ in range(iters):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            break
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return v


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    return -v if nz.size and v[nz[0]] < 0 else v


def pca_project(features: np.ndarray, iters: int = 100, tol: float = 1e-9) -> Projection:
    """Top-2 principal directions by power iteration with deflation."""
    x = np.asarray(features, dtype=np.float64)
    n, dim = x.shape
    if n < 3 or dim < 2:
        raise ValueError(f"pca_project needs n >= 3 and F >= 2, got {x.shape}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (n - 1)
    if not np.any(cov):
        return Projection(np.zeros((n, 2)), np.zeros((2, dim)), np.zeros(2), degenerate=True)

    v1 = _power_iteration(cov, iters, tol)
    lam1 = v1 @ cov @ v1
    v2 = _power_iteration(cov - lam1 * np.outer(v1, v1), iters, tol)
    v2 -= (v2 @ v1) * v1
    if np.linalg.norm(v2) < 1e-12:
        # rank-one data: any orthogonal direction carries zero variance
        e = np.zeros(dim)
        e[np.argmin(np.abs(v1))] = 1.0
        v2 = e - (e @ v1) * v1
    v2 /= np.linalg.norm(v2)

    # Rayleigh-Ritz on span{v1, v2} to order the pair and clean up the last digits
    basis = np.column_stack([v1, v2])
    vals, rot = np.linalg.eigh(basis.T @ cov @ basis)
    order = np.argsort(vals)[::-1]
    comps = (basis @ rot[:, order]).T
    comps = np.array([_fix_sign(c) for c in comps])
    coords = xc @ comps.T
    return Projection(coords, comps, np.clip(vals[order], 0.0, None))


def save_projection_csv(coords: np.ndarray, labels, domains, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label", "domain"])
        for (px, py), label, dom in zip(coords, labels, domains):
            w.writerow([repr(float(px)), repr(float(py)), int(label), dom])


# -- reports ----------------------------------------------------------------


def evaluate(
    net: NetworkTriple,
    source: Dataset,
    target: Dataset,
    seed: int = 0,
    pseudo: PseudoLabelSet | None = None,
) -> EvalReport:
    if len(target) == 0:
        raise ValueError("evaluation needs a non-empty target set")
    fs, ft = embed(net, source.inputs), embed(net, target.inputs)
    return EvalReport(
        source_accuracy=accuracy(net, source),
        target_accuracy=accuracy(net, target),
        a_distance=proxy_a_distance(fs, ft, seed),
        mean_target_entropy=mean_target_entropy(net, target.inputs),
        pseudo_accuracy=None if pseudo is None else pseudo.accuracy(target.labels),
    )


def project_domains(net: NetworkTriple, source: Dataset, target: Dataset) -> tuple[Projection, np.ndarray, list[str]]:
    feats = np.vstack([embed(net, source.inputs), embed(net, target.inputs)])
    labels = np.concatenate([source.labels, target.labels])
    domains = ["source"] * len(source) + ["target"] * len(target)
    return pca_project(feats), labels, domains


class TargetMonitor:
    """Per-epoch metrics that need the hidden target labels.

    Handed to the training loop so that the loop itself never touches the
    labels; ``a_distance_every`` = 0 disables the A-distance column.
    """

    def __init__(self, target: Dataset, a_distance_every: int = 1, seed: int = 0):
        self._target = target
        self.a_distance_every = a_distance_every
        self.seed = seed

    def __call__(self, net: NetworkTriple, epoch: int, source_inputs: np.ndarray, pseudo: PseudoLabelSet | None,
                 last_epoch: bool = False) -> dict:
        out = {
            "tgt_acc": accuracy(net, self._target),
            "pseudo_acc": None if pseudo is None else pseudo.accuracy(self._target.labels),
            "a_distance": None,
        }
        every = self.a_distance_every
        if every and ((epoch + 1) % every == 0 or last_epoch):
            out["a_distance"] = proxy_a_distance(
                embed(net, source_inputs), embed(net, self._target.inputs), self.seed
            )
        return out
