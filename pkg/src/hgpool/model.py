"""The level-stacked classifier: convolve, read out, pool, relearn structure.

Each level convolves the current features over the current structure, takes
a mean/max readout, scores and keeps the top ceil(r * n) nodes, then builds
the structure the next level will convolve over.  Level readouts are summed
and classified by an MLP head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import layers
from .data import GraphInstance
from .tensor import SparseMatrix

VARIANTS = ("full", "nsl", "hop", "den")


@dataclass
class ModelConfig:
    """Hyper-parameters of the pooling classifier."""

    feature_dim: int
    num_classes: int
    num_levels: int = 3
    hidden_dim: int = 128
    pooling_ratio: float = 0.8
    lam: float = 1.0
    hop_limit: int | None = 2
    normalization: str = "sparsemax"
    variant: str = "full"
    mlp_dims: tuple[int, ...] = (256, 128, 64)
    activation: str = "relu"

    def __post_init__(self):
        if not 1 <= self.num_levels <= 5:
            raise ValueError("num_levels must be in [1, 5]")
        if not 0.0 < self.pooling_ratio <= 1.0:
            raise ValueError("pooling_ratio must be in (0, 1]")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.feature_dim < 1 or self.num_classes < 1:
            raise ValueError("feature_dim and num_classes must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.normalization not in ("sparsemax", "softmax"):
            raise ValueError("normalization must be sparsemax or softmax")
        self.mlp_dims = tuple(int(d) for d in self.mlp_dims)

    def effective_normalization(self) -> str:
        return "softmax" if self.variant == "den" else self.normalization

    def structure_params(self, attention: ad.Variable) -> layers.StructureLearnParams:
        return layers.StructureLearnParams(
            attention=attention, lam=self.lam, hop_limit=self.hop_limit,
            normalization=self.effective_normalization())


@dataclass
class LayerParams:
    """Per-level trainables: convolution weight and attention vector."""

    conv_weight: ad.Variable      # (d_in, d)
    attention: ad.Variable        # (1, 2d)


@dataclass
class ModelParams:
    """All trainables, in fixed order for checkpoints and the optimizer."""

    levels: list[LayerParams]
    mlp_weights: list[ad.Variable]
    mlp_biases: list[ad.Variable]

    def named_parameters(self) -> list[tuple[str, ad.Variable]]:
        out = []
        for k, lp in enumerate(self.levels, 1):
            out.append((f"level{k}.conv_weight", lp.conv_weight))
            out.append((f"level{k}.attention", lp.attention))
        for j, (w, b) in enumerate(zip(self.mlp_weights, self.mlp_biases), 1):
            out.append((f"mlp{j}.weight", w))
            out.append((f"mlp{j}.bias", b))
        return out

    def parameters(self) -> list[ad.Variable]:
        return [v for _, v in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: v.value.copy() for name, v in self.named_parameters()}

    def load_values(self, state: dict[str, np.ndarray]):
        for name, v in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint is missing parameter {name}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != v.value.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} "
                                 f"!= expected {v.value.shape}")
            v.value[...] = arr


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Symmetric-uniform weights, zero MLP biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    d = config.hidden_dim
    levels = []
    for k in range(config.num_levels):
        d_in = config.feature_dim if k == 0 else d
        levels.append(LayerParams(
            conv_weight=ad.parameter(_glorot(rng, d_in, d)),
            attention=ad.parameter(_glorot(rng, 1, 2 * d))))
    dims = [2 * d, *config.mlp_dims, config.num_classes]
    mlp_w = [ad.parameter(_glorot(rng, dims[i], dims[i + 1]))
             for i in range(len(dims) - 1)]
    mlp_b = [ad.parameter(np.zeros((1, dims[i + 1]))) for i in range(len(dims) - 1)]
    return ModelParams(levels=levels, mlp_weights=mlp_w, mlp_biases=mlp_b)


def _candidate_mask(structure: layers.Structure, idx: np.ndarray,
                    hop_limit: int | None) -> SparseMatrix:
    """Structure-learning candidates: pre-pool h-hop pairs among kept nodes.

    Measuring hops before extraction is what lets the learner reconnect
    nodes whose connecting paths were pooled away.  Cached on constant
    structures (the level-1 adjacency is reused every epoch).
    """
    if hop_limit is None:
        return layers.full_pattern(len(idx))
    if isinstance(structure, SparseMatrix):
        key = f"hop{hop_limit}"
        reach = structure._cache.get(key)
        if reach is None:
            reach = layers.hop_neighborhood(structure, hop_limit)
            structure._cache[key] = reach
    else:
        reach = layers.hop_neighborhood(structure, hop_limit)
    return reach.extract_submatrix(idx)


@dataclass
class LevelOutput:
    """What one level leaves behind for inspection and export."""

    idx: np.ndarray                    # nodes kept, relative to this level's input
    structure: layers.Structure        # structure over the kept nodes
    features: ad.Variable              # post-convolution features (pre-pool)
    readout: ad.Variable               # (1, 2d) level summary


def forward(graph: GraphInstance, params: ModelParams, config: ModelConfig,
            probe: layers.SmoothnessProbe | None = None
            ) -> tuple[ad.Variable, list[LevelOutput]]:
    """Run the full pipeline on one graph; returns (logits, per-level outputs)."""
    if graph.num_nodes == 0:
        raise ad.ContractError("cannot run on an empty graph")
    if graph.features.shape[1] != config.feature_dim:
        raise ValueError("graph feature dimension does not match the config")
    if len(params.levels) != config.num_levels:
        raise ValueError("parameter levels do not match the config")

    feats = ad.constant(graph.features)
    structure: layers.Structure = graph.adjacency
    variant = config.variant
    act = config.activation

    summed = None
    outputs: list[LevelOutput] = []
    for k in range(config.num_levels):
        lp = params.levels[k]
        first = k == 0
        if first or variant == "nsl":
            h = layers.sym_norm_conv(structure, feats, lp.conv_weight, act, probe)
            scores = layers.node_info_score(structure, h.value, "layer1-degree")
        else:
            h = layers.learned_struct_conv(structure, feats, lp.conv_weight, act, probe)
            scores = layers.node_info_score(structure, h.value, "learned-rowsum")
        r = layers.readout(h, act, probe)
        summed = r if summed is None else ad.add(summed, r)

        pool = layers.top_rank_pool(scores, config.pooling_ratio, h, structure, probe)
        if variant == "nsl":
            next_structure: layers.Structure = pool.structure
        elif variant == "hop":
            next_structure = layers.uniform_hop_structure(
                pool.structure, config.hop_limit)
        else:  # full, den
            next_structure = layers.structure_learn(
                pool.features, pool.structure,
                config.structure_params(lp.attention), probe,
                mask=_candidate_mask(structure, pool.idx, config.hop_limit))
        outputs.append(LevelOutput(idx=pool.idx, structure=next_structure,
                                   features=h, readout=r))
        feats = pool.features
        structure = next_structure

    logits = mlp_head(summed, params)
    return logits, outputs


def mlp_head(z: ad.Variable, params: ModelParams) -> ad.Variable:
    """Fully connected stack with relu between layers; last layer is linear."""
    out = z
    last = len(params.mlp_weights) - 1
    for j, (w, b) in enumerate(zip(params.mlp_weights, params.mlp_biases)):
        out = ad.add(ad.matmul(out, w), b)
        if j != last:
            out = ad.relu(out)
    return out


def cross_entropy_loss(logits_batch, labels) -> ad.Variable:
    """Summed cross-entropy of a batch of (1, c) logit rows against labels."""
    logits_batch = list(logits_batch)
    labels = list(labels)
    if len(logits_batch) != len(labels) or not logits_batch:
        raise ValueError("need one label per logit row, at least one of each")
    total = ad.cross_entropy_logits(logits_batch[0], labels[0])
    for lg, y in zip(logits_batch[1:], labels[1:]):
        total = ad.add(total, ad.cross_entropy_logits(lg, y))
    return total


def predict(logits) -> int:
    """Argmax class with lowest-index tie break."""
    values = logits.value if isinstance(logits, ad.Variable) else np.asarray(logits)
    return int(np.argmax(values.ravel()))


def level_node_counts(n: int, config: ModelConfig) -> list[int]:
    """Node count entering each level plus the final pooled size."""
    counts = [n]
    for _ in range(config.num_levels):
        counts.append(layers.pool_size(counts[-1], config.pooling_ratio))
    return counts


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams):
    """Text header of (name rows cols) lines, blank line, little-endian float64."""
    named = params.named_parameters()
    with open(path, "wb") as fh:
        for name, v in named:
            fh.write(f"{name} {v.value.shape[0]} {v.value.shape[1]}\n".encode())
        fh.write(b"\n")
        for _, v in named:
            fh.write(np.ascontiguousarray(v.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header: list[tuple[str, int, int]] = []
        while True:
            line = fh.readline()
            if not line:
                raise ValueError("checkpoint ended before the blank separator line")
            line = line.decode().rstrip("\n")
            if not line:
                break
            try:
                name, rows, cols = line.split()
                header.append((name, int(rows), int(cols)))
            except ValueError:
                raise ValueError(f"bad checkpoint header line {line!r}") from None
        state = {}
        for name, rows, cols in header:
            raw = fh.read(rows * cols * 8)
            if len(raw) != rows * cols * 8:
                raise ValueError(f"checkpoint truncated inside {name}")
            state[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
        if fh.read(1):
            raise ValueError("trailing bytes after the last checkpoint array")
    return state
