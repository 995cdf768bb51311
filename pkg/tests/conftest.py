import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles / helpers

from hgpool.tensor import SparseMatrix


def write_tu_fixture(directory: Path, name="FIXT", node_labels=False,
                     node_attributes=False):
    """Two handcrafted graphs: a triangle (label 1) and a single edge (label -1)."""
    directory = Path(directory) / name
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}_A.txt").write_text(
        "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n")
    (directory / f"{name}_graph_indicator.txt").write_text("1\n1\n1\n2\n2\n")
    (directory / f"{name}_graph_labels.txt").write_text("1\n-1\n")
    if node_labels:
        (directory / f"{name}_node_labels.txt").write_text("0\n1\n2\n0\n1\n")
    if node_attributes:
        (directory / f"{name}_node_attributes.txt").write_text(
            "0.5\n1.5\n2.5\n3.5\n4.5\n")
    return directory


@pytest.fixture
def tu_fixture_dir(tmp_path):
    return write_tu_fixture(tmp_path)


def path_adjacency(n: int) -> SparseMatrix:
    """Path graph 0-1-...-(n-1)."""
    r = np.concatenate([np.arange(n - 1), np.arange(1, n)])
    c = np.concatenate([np.arange(1, n), np.arange(n - 1)])
    return SparseMatrix.from_coo(n, n, r, c, np.ones(2 * (n - 1)))


def permute_graph(adj: SparseMatrix, features: np.ndarray, perm: np.ndarray):
    """Relabel nodes: new index perm[i] holds old node i."""
    r = perm[adj.row_ids()]
    c = perm[adj.col_indices]
    new_adj = SparseMatrix.from_coo(adj.rows, adj.cols, r, c, adj.values)
    new_feat = np.empty_like(features)
    new_feat[perm] = features
    return new_adj, new_feat
