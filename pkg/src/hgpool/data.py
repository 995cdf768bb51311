"""Dataset ingestion, feature encoding, splits, and synthetic test corpora.

Real datasets use the TU graph-kernel layout: DS_A.txt holds the edge list
as comma-separated 1-based global node pairs, DS_graph_indicator.txt maps
each node to its graph, DS_graph_labels.txt one label per graph, and
optionally DS_node_labels.txt / DS_node_attributes.txt per node.
"""

from __future__ import annotations

import shutil
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import SparseMatrix, as_tensor


class DatasetFormatError(ValueError):
    """A dataset file is missing or malformed."""


class DatasetLookupError(KeyError):
    """The dataset name is not in the known-benchmark registry."""


class TransportError(RuntimeError):
    """Downloading the dataset archive failed."""


class SizeError(ValueError):
    """The dataset is too small for the requested operation."""


@dataclass
class GraphInstance:
    """One graph: symmetric loop-free adjacency, node features, class label."""

    adjacency: SparseMatrix
    features: np.ndarray
    label: int

    def __post_init__(self):
        self.features = as_tensor(self.features)
        a = self.adjacency
        if a.rows != a.cols:
            raise ValueError("adjacency must be square")
        if self.features.shape[0] != a.rows:
            raise ValueError("feature rows must match node count")
        if a.nnz and np.any(a.diagonal() != 0):
            raise ValueError("adjacency must have a zero diagonal")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.rows

    @property
    def num_edges(self) -> int:
        """Undirected edge count (stored entries / 2)."""
        return self.adjacency.nnz // 2


@dataclass
class Dataset:
    name: str
    graphs: list[GraphInstance]
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        for g in self.graphs:
            if not 0 <= g.label < self.num_classes:
                raise ValueError(f"label {g.label} outside [0, {self.num_classes})")
            if g.features.shape[1] != self.feature_dim:
                raise ValueError("inconsistent feature dimension across graphs")

    def __len__(self):
        return len(self.graphs)


@dataclass
class SplitSpec:
    """Deterministic 80/10/10 partition of graph indices."""

    seed: int
    train_idx: np.ndarray
    valid_idx: np.ndarray
    test_idx: np.ndarray


def split(dataset: Dataset, seed: int) -> SplitSpec:
    """Shuffle with the seed, then cut floor(0.8 n) / floor(0.1 n) / remainder."""
    n = len(dataset)
    if n < 10:
        raise SizeError(f"need at least 10 graphs to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(0.8 * n)
    n_valid = int(0.1 * n)
    return SplitSpec(seed=seed,
                     train_idx=perm[:n_train],
                     valid_idx=perm[n_train:n_train + n_valid],
                     test_idx=perm[n_train + n_valid:])


# -- TU format parsing -----------------------------------------------------------

_MANDATORY = ("A", "graph_indicator", "graph_labels")


def _tu_prefix(directory: Path) -> str:
    hits = sorted(directory.glob("*_A.txt"))
    if not hits:
        raise DatasetFormatError(f"no *_A.txt edge file in {directory}")
    return hits[0].name[:-len("_A.txt")]


def _tu_file(directory: Path, prefix: str, kind: str, required: bool) -> Path | None:
    path = directory / f"{prefix}_{kind}.txt"
    if not path.is_file():
        if required:
            raise DatasetFormatError(f"missing mandatory file {path.name}")
        return None
    return path


def _read_int_column(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.int64, ndmin=1)
    except ValueError as exc:
        raise DatasetFormatError(f"{path.name}: {exc}") from exc


def _read_edge_pairs(path: Path) -> np.ndarray:
    """Edge list as an (m, 2) int array; malformed lines get line-numbered errors."""
    try:
        pairs = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError:
        with open(path) as fh:  # slow path only to locate the offending line
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                toks = line.split(",")
                try:
                    if len(toks) != 2:
                        raise ValueError
                    int(toks[0]), int(toks[1])
                except ValueError:
                    raise DatasetFormatError(
                        f"{path.name}:{lineno}: bad edge line {line!r}") from None
        raise DatasetFormatError(f"{path.name}: unreadable edge list")
    if pairs.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if pairs.shape[1] != 2:
        raise DatasetFormatError(f"{path.name}: expected two columns per line")
    return pairs


def parse_tu_dataset(directory, feature_scheme: str = "auto") -> Dataset:
    """Load a TU-format dataset directory into one GraphInstance per graph."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetFormatError(f"not a dataset directory: {directory}")
    prefix = _tu_prefix(directory)

    indicator = _read_int_column(_tu_file(directory, prefix, "graph_indicator", True))
    graph_labels_raw = _read_int_column(_tu_file(directory, prefix, "graph_labels", True))
    num_nodes_total = len(indicator)
    num_graphs = len(graph_labels_raw)

    graph_ids, counts = np.unique(indicator, return_counts=True)
    if len(graph_ids) != num_graphs:
        raise DatasetFormatError(
            f"{prefix}_graph_indicator.txt references {len(graph_ids)} graphs "
            f"but {prefix}_graph_labels.txt has {num_graphs} labels")

    # local index of each global node inside its graph, preserving global order
    order = np.argsort(indicator, kind="stable")
    local = np.empty(num_nodes_total, dtype=np.intp)
    local[order] = np.arange(num_nodes_total) - np.repeat(
        np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    graph_pos = np.searchsorted(graph_ids, indicator)

    a_path = _tu_file(directory, prefix, "A", True)
    pairs = _read_edge_pairs(a_path)
    bad = np.nonzero((pairs < 1) | (pairs > num_nodes_total))[0]
    if len(bad):
        raise DatasetFormatError(
            f"{a_path.name}:{bad[0] + 1}: node id outside 1..{num_nodes_total}")
    src_graph = graph_pos[pairs[:, 0] - 1]
    dst_graph = graph_pos[pairs[:, 1] - 1]
    crossing = np.nonzero(src_graph != dst_graph)[0]
    if len(crossing):
        raise DatasetFormatError(
            f"{a_path.name}:{crossing[0] + 1}: edge crosses two graphs")
    keep = pairs[:, 0] != pairs[:, 1]  # self-loops are never stored
    pairs, src_graph = pairs[keep], src_graph[keep]
    by_graph = np.argsort(src_graph, kind="stable")
    cuts = np.cumsum(np.bincount(src_graph, minlength=num_graphs))[:-1]
    edges_per_graph = np.split(local[pairs[by_graph] - 1], cuts)

    node_labels = None
    p = _tu_file(directory, prefix, "node_labels", False)
    if p is not None:
        col = _read_int_column(p)
        if len(col) != num_nodes_total:
            raise DatasetFormatError(f"{p.name}: expected {num_nodes_total} lines")
        node_labels = col

    node_attrs = None
    p = _tu_file(directory, prefix, "node_attributes", False)
    if p is not None:
        try:
            node_attrs = np.loadtxt(p, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DatasetFormatError(f"{p.name}: {exc}") from exc
        if node_attrs.shape[0] != num_nodes_total:
            raise DatasetFormatError(f"{p.name}: expected {num_nodes_total} rows")

    per_graph_labels = None
    if node_labels is not None:
        per_graph_labels = [node_labels[graph_pos == i] for i in range(num_graphs)]
    per_graph_attrs = None
    if node_attrs is not None:
        per_graph_attrs = [node_attrs[graph_pos == i] for i in range(num_graphs)]

    features = encode_features(per_graph_labels, per_graph_attrs, feature_scheme,
                               node_counts=counts)

    label_values = np.unique(graph_labels_raw)
    remap = {int(v): i for i, v in enumerate(label_values)}

    graphs = []
    for i in range(num_graphs):
        n = int(counts[i])
        arr = edges_per_graph[i]
        if len(arr):
            r = np.concatenate([arr[:, 0], arr[:, 1]])
            c = np.concatenate([arr[:, 1], arr[:, 0]])
            adj = SparseMatrix.from_coo(n, n, r, c, np.ones(len(r)))
            adj = adj.with_values(np.ones(adj.nnz))  # drop duplicate multiplicity
        else:
            adj = SparseMatrix.zeros(n, n)
        graphs.append(GraphInstance(adjacency=adj, features=features[i],
                                    label=remap[int(graph_labels_raw[i])]))

    return Dataset(name=directory.name, graphs=graphs,
                   num_classes=len(label_values), feature_dim=features[0].shape[1])


def encode_features(node_labels, node_attributes, scheme: str = "auto",
                    node_counts=None) -> list[np.ndarray]:
    """Build per-graph feature matrices from raw node labels and attributes.

    Schemes: onehot-label, attributes, onehot-plus-attributes, constant, or
    auto (pick the richest encoding the data supports).
    """
    if scheme == "auto":
        if node_labels is not None and node_attributes is not None:
            scheme = "onehot-plus-attributes"
        elif node_attributes is not None:
            scheme = "attributes"
        elif node_labels is not None:
            scheme = "onehot-label"
        else:
            scheme = "constant"

    if scheme == "constant":
        if node_counts is None:
            if node_labels is not None:
                node_counts = [len(x) for x in node_labels]
            elif node_attributes is not None:
                node_counts = [len(x) for x in node_attributes]
            else:
                raise ValueError("constant scheme needs node counts")
        return [np.ones((int(n), 1)) for n in node_counts]

    wants_labels = scheme in ("onehot-label", "onehot-plus-attributes")
    wants_attrs = scheme in ("attributes", "onehot-plus-attributes")
    if scheme not in ("onehot-label", "attributes", "onehot-plus-attributes"):
        raise ValueError(f"unknown feature scheme {scheme!r}")
    if wants_labels and node_labels is None:
        raise ValueError(f"scheme {scheme!r} requires node labels, none present")
    if wants_attrs and node_attributes is None:
        raise ValueError(f"scheme {scheme!r} requires node attributes, none present")

    blocks: list[list[np.ndarray]] = []
    if wants_labels:
        values = np.unique(np.concatenate(node_labels))
        lookup = {int(v): i for i, v in enumerate(values)}
        onehots = []
        for labels in node_labels:
            block = np.zeros((len(labels), len(values)))
            block[np.arange(len(labels)), [lookup[int(v)] for v in labels]] = 1.0
            onehots.append(block)
        blocks.append(onehots)
    if wants_attrs:
        blocks.append([np.asarray(a, dtype=np.float64).reshape(len(a), -1)
                       for a in node_attributes])

    if len(blocks) == 1:
        return blocks[0]
    return [np.hstack(parts) for parts in zip(*blocks)]


# -- dataset statistics -----------------------------------------------------------

@dataclass
class DatasetStats:
    num_graphs: int
    total_nodes: int
    avg_nodes: float
    avg_edges_undirected: float
    avg_edges_directed: float
    num_classes: int


def dataset_stats(dataset: Dataset) -> DatasetStats:
    n = len(dataset)
    total_nodes = sum(g.num_nodes for g in dataset.graphs)
    total_stored = sum(g.adjacency.nnz for g in dataset.graphs)
    return DatasetStats(
        num_graphs=n,
        total_nodes=total_nodes,
        avg_nodes=total_nodes / n,
        avg_edges_undirected=total_stored / 2 / n,
        avg_edges_directed=total_stored / n,
        num_classes=dataset.num_classes,
    )


# -- fetching ----------------------------------------------------------------------

DEFAULT_BASE_URL = "https://ls11-www.cs.tu-dortmund.de/people/morris/graphkerneldatasets"

KNOWN_DATASETS = ("ENZYMES", "PROTEINS", "DD", "NCI1", "NCI109", "Mutagenicity")


def _manifest_complete(directory: Path, name: str) -> bool:
    return all((directory / f"{name}_{kind}.txt").is_file() for kind in _MANDATORY)


def fetch_dataset(name: str, base_url: str = DEFAULT_BASE_URL,
                  cache_dir="~/.cache/hgpool") -> Path:
    """Download and unpack a benchmark archive; a complete cache is a no-op."""
    if name not in KNOWN_DATASETS:
        raise DatasetLookupError(
            f"unknown dataset {name!r}; known: {', '.join(KNOWN_DATASETS)}")
    cache = Path(cache_dir).expanduser()
    target = cache / name
    if _manifest_complete(target, name):
        return target

    cache.mkdir(parents=True, exist_ok=True)
    url = f"{base_url.rstrip('/')}/{name}.zip"
    archive = cache / f"{name}.zip"
    try:
        with urllib.request.urlopen(url) as resp, open(archive, "wb") as out:
            shutil.copyfileobj(resp, out)
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(f"failed to download {url}: {exc}") from exc

    try:
        with zipfile.ZipFile(archive) as zf:
            for member in zf.namelist():
                rel = Path(member)
                if rel.name == "" or member.endswith("/"):
                    continue
                # archives nest files under NAME/; tolerate flat archives too
                dest = target / rel.name
                dest.parent.mkdir(parents=True, exist_ok=True)
                with zf.open(member) as src, open(dest, "wb") as out:
                    shutil.copyfileobj(src, out)
    except zipfile.BadZipFile as exc:
        raise DatasetFormatError(f"{archive.name} is not a zip archive") from exc
    finally:
        archive.unlink(missing_ok=True)

    if not _manifest_complete(target, name):
        raise DatasetFormatError(
            f"archive for {name} lacks one of "
            f"{', '.join(f'{name}_{k}.txt' for k in _MANDATORY)}")
    return target


# -- synthetic corpora ----------------------------------------------------------------

SYNTH_KINDS = ("cycles-vs-cliquepairs", "trees-vs-cycles")


def _cycle_edges(n: int) -> list[tuple[int, int]]:
    return [(i, (i + 1) % n) for i in range(n)]


def _cliquepair_edges(n: int) -> list[tuple[int, int]]:
    m = n // 2
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    edges += [(i, j) for i in range(m, n) for j in range(i + 1, n)]
    edges.append((0, m))  # single bridge between the cliques
    return edges


def _random_tree_edges(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    return [(int(rng.integers(0, v)), v) for v in range(1, n)]


def _graph_from_edges(n: int, edges) -> GraphInstance:
    arr = np.array(edges, dtype=np.intp)
    r = np.concatenate([arr[:, 0], arr[:, 1]])
    c = np.concatenate([arr[:, 1], arr[:, 0]])
    adj = SparseMatrix.from_coo(n, n, r, c, np.ones(len(r)))
    adj = adj.with_values(np.ones(adj.nnz))
    return GraphInstance(adjacency=adj, features=np.ones((n, 1)), label=0)


def synth_dataset(kind: str, count: int, size_range=(8, 20), seed: int = 0) -> Dataset:
    """Balanced two-class corpus of structurally separable constant-feature graphs."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; known: {SYNTH_KINDS}")
    lo, hi = size_range
    if lo < 4:
        raise ValueError("minimum graph size is 4")
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        label = i % 2
        if kind == "cycles-vs-cliquepairs":
            edges = _cycle_edges(n) if label == 0 else _cliquepair_edges(n)
        else:
            edges = _random_tree_edges(n, rng) if label == 0 else _cycle_edges(n)
        g = _graph_from_edges(n, edges)
        g.label = label
        graphs.append(g)
    return Dataset(name=kind, graphs=graphs, num_classes=2, feature_dim=1)


def random_graph_instance(n: int, edge_prob: float, feature_dim: int,
                          rng: np.random.Generator, label: int = 0) -> GraphInstance:
    """G(n, p) graph with standard-normal features; used by checks and demos."""
    upper = np.triu(rng.random((n, n)) < edge_prob, k=1)
    r, c = np.nonzero(upper | upper.T)
    adj = (SparseMatrix.from_coo(n, n, r, c, np.ones(len(r)))
           if len(r) else SparseMatrix.zeros(n, n))
    return GraphInstance(adjacency=adj,
                         features=rng.standard_normal((n, feature_dim)),
                         label=label)
