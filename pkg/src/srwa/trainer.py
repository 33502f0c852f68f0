"""Minimax training loop with gradient reversal and per-iteration history."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import losses
from .data import Dataset, UnlabeledView
from .evaluate import TargetMonitor, accuracy_from_probs, mean_target_entropy
from .model import ArchitectureConfig, NetworkTriple, build, classify, discriminate, features, predict_proba
from .pseudolabel import PseudoLabelSet, TripletBatchSpec, assign, refresh_schedule, sample_pk_batch


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay: bool = False
    grl_gamma: float = 10.0
    threshold: float = 0.9
    margin: float = 0.3
    n0: int = 3
    pk_classes: int = 2
    coef_task: float = 1.0
    coef_adv: float = 1.0
    coef_ent: float = 1.0
    coef_tri: float = 1.0
    reweight: bool = True
    use_pseudo: bool = True
    pseudo_refresh: int = 1
    squared_distance: bool = False
    feature_dims: tuple[int, ...] = (64, 32)
    discriminator_dims: tuple[int, ...] = (32,)
    a_distance_every: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "feature_dims", tuple(int(w) for w in self.feature_dims))
        object.__setattr__(self, "discriminator_dims", tuple(int(w) for w in self.discriminator_dims))
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.pseudo_refresh < 1:
            raise ValueError("pseudo_refresh must be >= 1")

    def architecture(self, input_dim: int, num_classes: int) -> ArchitectureConfig:
        return ArchitectureConfig(input_dim, num_classes, self.feature_dims, self.discriminator_dims, self.seed)

    @property
    def triplet_spec(self) -> TripletBatchSpec:
        return TripletBatchSpec(self.pk_classes, self.n0)


@dataclass(frozen=True)
class IterRecord:
    iter: int
    task: float
    adv: float
    ent: float
    tri: float
    total: float
    lam: float
    n_pseudo: int


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    src_acc: float
    tgt_acc: float | None
    mean_tgt_entropy: float
    pseudo_acc: float | None
    a_distance: float | None
    refreshed: bool = False


ITER_HEADER = ["iter", "task", "adv", "ent", "tri", "total", "lambda", "n_pseudo"]
EPOCH_HEADER = ["epoch", "src_acc", "tgt_acc", "mean_tgt_entropy", "pseudo_acc", "a_distance"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunHistory:
    iterations: list[IterRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)
    pseudo_sets: list[PseudoLabelSet] = field(default_factory=list)

    def write_iter_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ITER_HEADER)
            for r in self.iterations:
                w.writerow([_fmt(v) for v in astuple_ordered(r)])

    def write_epoch_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EPOCH_HEADER)
            for r in self.epochs:
                w.writerow([_fmt(v) for v in astuple_ordered(r)][: len(EPOCH_HEADER)])


def astuple_ordered(record) -> list:
    return [getattr(record, f.name) for f in fields(record)]


def grl_lambda(progress: float, gamma: float = 10.0) -> float:
    """``2 / (1 + exp(-gamma * p)) - 1``: rises from 0 towards 1."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    return 2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0


def lr_at(config: TrainConfig, progress: float) -> float:
    if not config.lr_decay:
        return config.lr
    return config.lr / (1.0 + 10.0 * progress) ** 0.75


@dataclass
class StepGraph:
    """Forward graph of one step; ``objective`` is the node handed to backward."""

    breakdown: losses.LossBreakdown
    objective: ad.Node
    weights: np.ndarray
    nodes: dict


def build_step_graph(
    net: NetworkTriple,
    xs: np.ndarray,
    ys: np.ndarray,
    xt: np.ndarray,
    pk_x: np.ndarray | None,
    pk_y: np.ndarray | None,
    config: TrainConfig,
    lam: float,
    weights: np.ndarray | None = None,
) -> StepGraph:
    """Run the forward pass of every loss term for one mixed batch.

    The discriminator is fed through a gradient reversal layer, and the
    differentiated objective carries the discriminator's weighted BCE
    (the negated adversarial term).  A single descent step therefore
    lowers the weighted BCE in the discriminator while the feature
    extractor receives ``lam`` times the gradient of the adversarial term.
    """
    c = config
    feat_s = features(net, xs)
    feat_t = features(net, xt)
    probs_s = classify(net, feat_s)
    probs_t = classify(net, feat_t)
    zero = ad.as_node(0.0)

    task = losses.task_loss(probs_s, ys) if c.coef_task else zero
    ent = losses.entropy_min_loss(probs_t) if c.coef_ent else zero

    if weights is None:
        probs = np.vstack([probs_s.value, probs_t.value])
        weights = losses.entropy_weights(probs) if c.reweight else np.ones(len(probs))
    if c.coef_adv:
        d_probs = discriminate(net, ad.concat_rows([feat_s, feat_t]), lam)
        domain = np.concatenate([np.full(len(xs), losses.SOURCE), np.full(len(xt), losses.TARGET)])
        disc_obj = losses.weighted_domain_bce(d_probs, domain, weights)
        adv = ad.neg(disc_obj)
    else:
        d_probs = None
        disc_obj = adv = zero

    if c.coef_tri and pk_x is not None and len(pk_x):
        tri = losses.triplet_loss(features(net, pk_x), pk_y, c.margin, c.squared_distance)
    else:
        tri = zero

    terms = {"task": (c.coef_task, task), "adversarial": (c.coef_adv, adv),
             "entropy_min": (c.coef_ent, ent), "triplet": (c.coef_tri, tri)}
    values = {}
    for name, (coef, node) in terms.items():
        v = coef * float(node.value)
        if not math.isfinite(v):
            raise TrainingDiverged(f"non-finite {name} loss ({v})")
        values[name] = v

    objective = zero
    for coef, node in ((c.coef_task, task), (c.coef_ent, ent), (c.coef_tri, tri), (c.coef_adv, disc_obj)):
        if coef and node is not zero:
            objective = ad.add(objective, ad.mul(node, coef)) if objective is not zero else ad.mul(node, coef)

    breakdown = losses.LossBreakdown(
        task=values["task"],
        adversarial=values["adversarial"],
        entropy_min=values["entropy_min"],
        triplet=values["triplet"],
        total=values["task"] + values["adversarial"] + values["entropy_min"] + values["triplet"],
    )
    nodes = {"feat_s": feat_s, "feat_t": feat_t, "probs_s": probs_s, "probs_t": probs_t, "d_probs": d_probs,
             "task": task, "adv": adv, "ent": ent, "tri": tri, "disc_obj": disc_obj}
    return StepGraph(breakdown, objective, weights, nodes)


def train_step(
    net: NetworkTriple,
    xs: np.ndarray,
    ys: np.ndarray,
    xt: np.ndarray,
    pk_x: np.ndarray | None,
    pk_y: np.ndarray | None,
    config: TrainConfig,
    lam: float,
    lr: float | None = None,
) -> losses.LossBreakdown:
    """One simultaneous update of all three parameter sets."""
    if len(xs) == 0 or len(xt) == 0:
        raise ValueError("train_step needs non-empty source and target batches")
    graph = build_step_graph(net, xs, ys, xt, pk_x, pk_y, config, lam)
    net.zero_grad()
    if graph.objective.requires_grad:
        ad.backward(graph.objective)
    step = config.lr if lr is None else lr
    for ps in net.parameter_sets():
        ad.sgd_momentum_step(ps, step, config.momentum)
    return graph.breakdown


MonitorFn = Callable[..., dict]


def train(
    source: Dataset,
    target: UnlabeledView,
    config: TrainConfig,
    monitor: TargetMonitor | MonitorFn | None = None,
    net: NetworkTriple | None = None,
) -> tuple[NetworkTriple, RunHistory]:
    if isinstance(target, Dataset):
        target = target.unlabeled()
    num_classes = source.num_classes
    if net is None:
        net = build(config.architecture(source.dim, num_classes))
    history = RunHistory()
    if config.epochs == 0:
        return net, history

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    pk_rng = np.random.default_rng(seeds[1])
    spec = TripletBatchSpec(min(config.pk_classes, num_classes), config.n0)

    xs_all, ys_all, xt_all = source.inputs, source.labels, target.inputs
    batch = min(config.batch_size, len(xs_all), len(xt_all))
    per_epoch = min(len(xs_all), len(xt_all)) // batch
    total_iters = per_epoch * config.epochs

    pseudo = PseudoLabelSet.empty(0)
    if config.use_pseudo and config.coef_tri:
        pseudo = assign(net, xt_all, config.threshold, epoch=0)
    refreshed = True

    it = 0
    for epoch in range(config.epochs):
        perm_s = shuffle_rng.permutation(len(xs_all))
        perm_t = shuffle_rng.permutation(len(xt_all))
        for b in range(per_epoch):
            progress = it / total_iters
            lam = grl_lambda(progress, config.grl_gamma)
            s_idx = perm_s[b * batch : (b + 1) * batch]
            t_idx = perm_t[b * batch : (b + 1) * batch]
            pk_x = pk_y = None
            if config.coef_tri:
                pk = sample_pk_batch(ys_all, pseudo if config.use_pseudo else None, spec, pk_rng)
                if len(pk):
                    from_src = pk.origin == "source"
                    pk_x = np.where(from_src[:, None], xs_all[np.where(from_src, pk.indices, 0)],
                                    xt_all[np.where(from_src, 0, pk.indices)])
                    pk_y = pk.labels
            parts = train_step(net, xs_all[s_idx], ys_all[s_idx], xt_all[t_idx], pk_x, pk_y, config, lam,
                               lr_at(config, progress))
            history.iterations.append(
                IterRecord(it, parts.task, parts.adversarial, parts.entropy_min, parts.triplet, parts.total,
                           lam, len(pseudo))
            )
            it += 1

        last = epoch == config.epochs - 1
        if config.use_pseudo and config.coef_tri and refresh_schedule(epoch + 1, config.pseudo_refresh):
            pseudo = assign(net, xt_all, config.threshold, epoch=epoch + 1)
            history.pseudo_sets.append(pseudo)
            refreshed = True
        src_probs = predict_proba(net, xs_all)
        extra = {"tgt_acc": None, "pseudo_acc": None, "a_distance": None}
        if monitor is not None:
            extra.update(monitor(net, epoch, xs_all, pseudo if len(pseudo) else None, last_epoch=last))
        history.epochs.append(
            EpochRecord(
                epoch=epoch + 1,
                src_acc=accuracy_from_probs(src_probs, ys_all),
                tgt_acc=extra["tgt_acc"],
                mean_tgt_entropy=mean_target_entropy(net, xt_all),
                pseudo_acc=extra["pseudo_acc"],
                a_distance=extra["a_distance"],
                refreshed=refreshed,
            )
        )
        refreshed = False
    return net, history


# -- ablation ---------------------------------------------------------------


@dataclass(frozen=True)
class Arm:
    name: str
    overrides: dict

    def apply(self, base: TrainConfig) -> TrainConfig:
        return replace(base, **self.overrides)


DEFAULT_ARMS: tuple[Arm, ...] = (
    Arm("source_only", dict(coef_adv=0.0, coef_ent=0.0, coef_tri=0.0, reweight=False)),
    Arm("source_only_em", dict(coef_adv=0.0, coef_ent=1.0, coef_tri=0.0, reweight=False)),
    Arm("dann_em", dict(coef_ent=1.0, coef_tri=0.0, reweight=False)),
    Arm("dann_em_hp", dict(coef_ent=1.0, coef_tri=0.0, reweight=True)),
    Arm("dann_em_tri_s", dict(coef_ent=1.0, coef_tri=1.0, reweight=False, use_pseudo=False)),
    Arm("dann_em_tri", dict(coef_ent=1.0, coef_tri=1.0, reweight=False, use_pseudo=True)),
    Arm("full", dict()),
)


def arm_by_name(name: str, arms: Sequence[Arm] = DEFAULT_ARMS) -> Arm:
    for arm in arms:
        if arm.name == name:
            return arm
    raise KeyError(f"unknown arm {name!r}; known: {', '.join(a.name for a in arms)}")


@dataclass(frozen=True)
class AblationResult:
    arm: str
    seed: int
    tgt_acc: float


def _run_arm(source: Dataset, target: Dataset, config: TrainConfig, arm: Arm, seed: int) -> AblationResult:
    cfg = replace(arm.apply(config), seed=seed)
    net, _ = train(source, target.unlabeled(), cfg)
    return AblationResult(arm.name, seed, accuracy_from_probs(predict_proba(net, target.inputs), target.labels))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SRWA_THREADS", "1")))
    except ValueError:
        return 1


def run_ablation(
    source: Dataset,
    target: Dataset,
    base_config: TrainConfig,
    arms: Sequence[Arm] = DEFAULT_ARMS,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    threads: int | None = None,
) -> tuple[list[AblationResult], list[tuple[str, float, float]]]:
    """Train every arm for every seed; returns per-run rows and (arm, mean, std)."""
    jobs = [(arm, s) for arm in arms for s in seeds]
    threads = default_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda job: _run_arm(source, target, base_config, *job), jobs))
    else:
        rows = [_run_arm(source, target, base_config, arm, s) for arm, s in jobs]
    summary = []
    for arm in arms:
        accs = np.array([r.tgt_acc for r in rows if r.arm == arm.name])
        summary.append((arm.name, float(accs.mean()), float(accs.std())))
    return rows, summary


def write_ablation_csv(rows: Sequence[AblationResult], summary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "seed", "tgt_acc"])
        for r in rows:
            w.writerow([r.arm, r.seed, repr(r.tgt_acc)])
        fh.write("\n")
        w.writerow(["arm", "mean", "std"])
        for name, m, s in summary:
            w.writerow([name, repr(m), repr(s)])


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)
