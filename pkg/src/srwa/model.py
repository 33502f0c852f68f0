"""Feature extractor, label classifier and domain discriminator as dense nets."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParameterSet, ShapeError

CHECKPOINT_MAGIC = b"SRWA1"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureConfig:
    input_dim: int
    num_classes: int
    feature_dims: tuple[int, ...] = (64, 32)
    discriminator_dims: tuple[int, ...] = (32,)
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "feature_dims", tuple(int(w) for w in self.feature_dims))
        object.__setattr__(self, "discriminator_dims", tuple(int(w) for w in self.discriminator_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.feature_dims:
            raise ValueError("feature_dims must name at least one layer")
        if any(w < 1 for w in self.feature_dims + self.discriminator_dims):
            raise ValueError("all layer widths must be positive")

    @property
    def feature_dim(self) -> int:
        return self.feature_dims[-1]


@dataclass
class NetworkTriple:
    """Parameters of f (``feature``), G_y (``classifier``) and G_d (``discriminator``)."""

    feature: ParameterSet
    classifier: ParameterSet
    discriminator: ParameterSet
    config: ArchitectureConfig | None = field(default=None, compare=False)

    def parameter_sets(self) -> tuple[ParameterSet, ParameterSet, ParameterSet]:
        return self.feature, self.classifier, self.discriminator

    def named_parameters(self):
        for prefix, ps in zip("fyd", self.parameter_sets()):
            for name, node in ps.items():
                yield f"{prefix}.{name}", node

    def zero_grad(self) -> None:
        for ps in self.parameter_sets():
            ps.zero_grad()

    @property
    def input_dim(self) -> int:
        return self.feature["W0"].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.classifier["W0"].shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier[f"W{_depth(self.classifier) - 1}"].shape[1]


def _depth(ps: ParameterSet) -> int:
    return sum(1 for name in ps if name.startswith("W"))


def _glorot_layers(rng: np.random.Generator, dims: list[int]) -> list[tuple[str, np.ndarray]]:
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((f"W{i}", rng.uniform(-a, a, size=(fan_in, fan_out))))
        layers.append((f"b{i}", np.zeros(fan_out)))
    return layers


def build(config: ArchitectureConfig) -> NetworkTriple:
    rng = np.random.default_rng(config.init_seed)
    f_dims = [config.input_dim, *config.feature_dims]
    y_dims = [config.feature_dim, config.num_classes]
    d_dims = [config.feature_dim, *config.discriminator_dims, 1]
    return NetworkTriple(
        ParameterSet(_glorot_layers(rng, f_dims)),
        ParameterSet(_glorot_layers(rng, y_dims)),
        ParameterSet(_glorot_layers(rng, d_dims)),
        config,
    )


def _dense_stack(ps: ParameterSet, x: Node, relu_last: bool) -> Node:
    depth = _depth(ps)
    for i in range(depth):
        x = ad.add(ad.matmul(x, ps[f"W{i}"]), ps[f"b{i}"])
        if i < depth - 1 or relu_last:
            x = ad.relu(x)
    return x


def _check_cols(x: Node, expected: int, what: str) -> None:
    if x.value.ndim != 2 or x.shape[1] != expected:
        raise ShapeError(f"{what} expects [n x {expected}] input, got {x.shape}")


def features(net: NetworkTriple, x) -> Node:
    """Final hidden representation of f; the embedding used for triplet distances."""
    x = ad.as_node(x)
    _check_cols(x, net.input_dim, "features")
    return _dense_stack(net.feature, x, relu_last=False)


def logits(net: NetworkTriple, feat: Node) -> Node:
    _check_cols(feat, net.feature_dim, "classify")
    return _dense_stack(net.classifier, feat, relu_last=False)


def classify(net: NetworkTriple, feat: Node) -> Node:
    return ad.softmax_rows(logits(net, feat))


def discriminate(net: NetworkTriple, feat: Node, lam: float) -> Node:
    """Probability that each row comes from the source domain.

    Features pass through a gradient reversal scaled by ``lam`` first, so
    the feature extractor sees the negated discriminator gradient.
    """
    _check_cols(feat, net.feature_dim, "discriminate")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    h = ad.grad_reverse(feat, lam)
    return ad.sigmoid(_dense_stack(net.discriminator, h, relu_last=False))


def predict_proba(net: NetworkTriple, x: np.ndarray) -> np.ndarray:
    return classify(net, features(net, x)).value


def embed(net: NetworkTriple, x: np.ndarray) -> np.ndarray:
    return features(net, x).value


# -- checkpoint I/O ---------------------------------------------------------


def save_checkpoint(net: NetworkTriple, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, node in net.named_parameters():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", node.value.ndim))
            fh.write(struct.pack(f"<{node.value.ndim}I", *node.shape))
            fh.write(np.ascontiguousarray(node.value, dtype="<f8").tobytes())


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    magic = blob[: len(CHECKPOINT_MAGIC)]
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC.decode()!r}"
        )
    pos = len(CHECKPOINT_MAGIC)
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise CheckpointError(f"{path}: truncated values for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out


def load_checkpoint(path: str | Path) -> NetworkTriple:
    """Rebuild a NetworkTriple; the layer sizes are recovered from the tensor shapes."""
    tensors = read_checkpoint(path)
    groups = {p: [] for p in "fyd"}
    for name, value in tensors.items():
        prefix, _, local = name.partition(".")
        if prefix not in groups or not local:
            raise CheckpointError(f"{path}: unexpected parameter name {name!r}")
        groups[prefix].append((local, value))
    net = NetworkTriple(*(ParameterSet(groups[p]) for p in "fyd"))
    for ps, label in zip(net.parameter_sets(), "fyd"):
        if "W0" not in ps:
            raise CheckpointError(f"{path}: missing {label}.W0")
    return net
