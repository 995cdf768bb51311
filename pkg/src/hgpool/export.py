"""DOT and JSON export of pooled graphs with their learned structures.

Node identifiers are the *original* graph's node ids at every level so the
levels can be aligned visually; edge weights are the structure values (row
sums are 1 for learned structures).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import GraphInstance
from .layers import SparseVariable
from .model import LevelOutput


@dataclass
class PooledLevel:
    level: int
    node_ids: np.ndarray                      # original node ids, ascending
    edges: list[tuple[int, int, float]]       # (src id, dst id, weight)


def pooled_levels(graph: GraphInstance, levels: list[LevelOutput]) -> list[PooledLevel]:
    """Map each level's kept nodes and structure back to original node ids."""
    ids = np.arange(graph.num_nodes)
    out = []
    for k, lv in enumerate(levels, 1):
        ids = ids[lv.idx]
        s = lv.structure.detached() if isinstance(lv.structure, SparseVariable) \
            else lv.structure
        edges = [(int(ids[p]), int(ids[q]), float(w))
                 for p, q, w in zip(s.row_ids(), s.col_indices, s.values)]
        out.append(PooledLevel(level=k, node_ids=ids.copy(), edges=edges))
    return out


def write_dot(path, pooled: PooledLevel):
    with open(path, "w") as fh:
        fh.write(f"digraph pool_level_{pooled.level} {{\n")
        for node in pooled.node_ids:
            fh.write(f"  {int(node)};\n")
        for s, t, w in pooled.edges:
            fh.write(f"  {s} -> {t} [weight=\"{w:.9g}\"];\n")
        fh.write("}\n")


def write_json(path, pooled: PooledLevel):
    doc = {
        "level": pooled.level,
        "nodes": [int(n) for n in pooled.node_ids],
        "edges": [{"source": s, "target": t, "weight": w}
                  for s, t, w in pooled.edges],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def export_levels(graph: GraphInstance, levels: list[LevelOutput], out_dir,
                  fmt: str = "dot") -> list[Path]:
    """One file per level under out_dir; fmt is 'dot' or 'json'."""
    if fmt not in ("dot", "json"):
        raise ValueError(f"unknown export format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for pooled in pooled_levels(graph, levels):
        path = out_dir / f"level{pooled.level}.{fmt}"
        (write_dot if fmt == "dot" else write_json)(path, pooled)
        paths.append(path)
    return paths


_DOT_HEADER = re.compile(r"digraph\s+(\w+)\s*\{")
_DOT_EDGE = re.compile(r"(\d+)\s*->\s*(\d+)\s*\[weight=\"([^\"]+)\"\];")
_DOT_NODE = re.compile(r"(\d+);")


def read_dot(path) -> PooledLevel:
    """Round-trip reader for the files write_dot produces."""
    text = Path(path).read_text()
    m = _DOT_HEADER.search(text)
    if m is None or not text.rstrip().endswith("}"):
        raise ValueError(f"{path}: not a digraph block")
    level = int(m.group(1).rsplit("_", 1)[-1])
    nodes, edges = [], []
    for line in text.splitlines():
        line = line.strip()
        e = _DOT_EDGE.fullmatch(line)
        if e:
            edges.append((int(e.group(1)), int(e.group(2)), float(e.group(3))))
            continue
        n = _DOT_NODE.fullmatch(line)
        if n:
            nodes.append(int(n.group(1)))
    return PooledLevel(level=level, node_ids=np.array(nodes, dtype=np.intp),
                       edges=edges)
