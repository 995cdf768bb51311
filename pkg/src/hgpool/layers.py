"""Graph convolution, node scoring, top-rank pooling, and structure learning.

All operations are pure given their inputs.  Dense node features travel as
autodiff Variables; graph structure travels either as a constant
SparseMatrix (adjacency, hop patterns) or as a SparseVariable whose values
were produced by the learned attention path and carry gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _simplex, autodiff as ad
from .tensor import ShapeError, SparseMatrix, row_l1_norm


# -- activations ---------------------------------------------------------------

ACTIVATIONS = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "identity": lambda v: v,
}


def get_activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; "
                         f"choose from {sorted(ACTIVATIONS)}") from None


@dataclass
class SmoothnessProbe:
    """Collects distances to the nearest nondifferentiability during a forward.

    Used to screen sample points before finite-difference checks: a small
    margin means a relu crossing, a max tie, a sparsemax support boundary or
    a selection-rank tie sits close enough to corrupt central differences.

    Exactly-zero gaps are ignored: with continuous random inputs they only
    arise from relu-clamped paths that are pinned (locally constant), not
    from active values drifting across a kink.
    """

    relu: float = math.inf
    colmax: float = math.inf
    sparsemax: float = math.inf
    selection: float = math.inf

    def _note(self, attr: str, gaps: np.ndarray):
        gaps = gaps[gaps > 0.0]
        if gaps.size:
            setattr(self, attr, min(getattr(self, attr), float(gaps.min())))

    def note_relu(self, pre: np.ndarray):
        self._note("relu", np.abs(pre).ravel())

    def note_colmax(self, mat: np.ndarray):
        if mat.shape[0] >= 2:
            top2 = np.sort(mat, axis=0)[-2:, :]
            self._note("colmax", top2[1] - top2[0])

    def note_sparsemax(self, z: np.ndarray, tau: float):
        if z.size >= 2:
            self._note("sparsemax", np.abs(z - tau))

    def note_selection(self, scores: np.ndarray, k: int):
        if 0 < k < len(scores):
            s = np.sort(scores)[::-1]
            self._note("selection", np.array([s[k - 1] - s[k]]))

    def min_margin(self) -> float:
        return min(self.relu, self.colmax, self.sparsemax, self.selection)


def _activate(pre, name, probe):
    if probe is not None and name == "relu":
        probe.note_relu(pre.value)
    return get_activation(name)(pre)


# -- learned structure container -------------------------------------------------

@dataclass
class SparseVariable:
    """CSR pattern with autodiff-tracked values, e.g. a learned structure S."""

    pattern: SparseMatrix
    values: ad.Variable

    def __post_init__(self):
        if self.values.shape != (self.pattern.nnz, 1):
            raise ShapeError("values must be an (nnz, 1) column")

    @property
    def rows(self):
        return self.pattern.rows

    @property
    def cols(self):
        return self.pattern.cols

    @property
    def shape(self):
        return self.pattern.shape

    def detached(self) -> SparseMatrix:
        """Constant snapshot of the current values."""
        return self.pattern.with_values(self.values.value[:, 0])

    def extract(self, idx) -> "SparseVariable":
        """Symmetric submatrix with gradient-preserving value selection."""
        sub_pattern, positions = self.pattern.extract_positions(idx)
        return SparseVariable(sub_pattern, ad.gather_rows(self.values, positions))


Structure = SparseMatrix | SparseVariable


def _structure_matrix(structure: Structure) -> SparseMatrix:
    return structure.detached() if isinstance(structure, SparseVariable) else structure


def extract_structure(structure: Structure, idx) -> Structure:
    if isinstance(structure, SparseVariable):
        return structure.extract(idx)
    return structure.extract_submatrix(idx)


# -- convolution -----------------------------------------------------------------

def sym_normalized(adjacency: SparseMatrix) -> SparseMatrix:
    """D^{-1/2} (A + I) D^{-1/2} with D the degree diagonal of A + I.

    Cached on the adjacency: graphs are reused across epochs, the normalized
    matrix never changes.
    """
    cached = adjacency._cache.get("sym_norm")
    if cached is not None:
        return cached
    if adjacency.rows != adjacency.cols:
        raise ShapeError("adjacency must be square")
    n = adjacency.rows
    r = np.concatenate([adjacency.row_ids(), np.arange(n)])
    c = np.concatenate([adjacency.col_indices, np.arange(n)])
    v = np.concatenate([adjacency.values, np.ones(n)])
    tilde = SparseMatrix.from_coo(n, n, r, c, v)
    deg = tilde.row_sums()
    inv_sqrt = 1.0 / np.sqrt(deg)
    scaled = tilde.values * inv_sqrt[tilde.row_ids()] * inv_sqrt[tilde.col_indices]
    result = tilde.with_values(scaled)
    adjacency._cache["sym_norm"] = result
    return result


def sym_norm_conv(adjacency: SparseMatrix, h: ad.Variable, w: ad.Variable,
                  activation: str = "relu", probe: SmoothnessProbe | None = None
                  ) -> ad.Variable:
    """Symmetric-normalized graph convolution with self-connections."""
    if adjacency.cols != h.shape[0]:
        raise ShapeError(f"conv: adjacency {adjacency.shape} vs features {h.shape}")
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"conv: features {h.shape} vs weight {w.shape}")
    pre = ad.spmm(sym_normalized(adjacency), ad.matmul(h, w))
    return _activate(pre, activation, probe)


def learned_struct_conv(structure: Structure, h: ad.Variable, w: ad.Variable,
                        activation: str = "relu",
                        probe: SmoothnessProbe | None = None) -> ad.Variable:
    """Convolution over a row-stochastic structure: no degree normalization."""
    if structure.cols != h.shape[0]:
        raise ShapeError(f"conv: structure {structure.shape} vs features {h.shape}")
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"conv: features {h.shape} vs weight {w.shape}")
    hw = ad.matmul(h, w)
    if isinstance(structure, SparseVariable):
        pre = ad.csr_mm(structure.pattern, structure.values, hw)
    else:
        pre = ad.spmm(structure, hw)
    return _activate(pre, activation, probe)


# -- node information score --------------------------------------------------------

def node_info_score(structure: Structure, h: np.ndarray,
                    mode: str = "layer1-degree") -> np.ndarray:
    """Per-node l1 distance between a node and its neighborhood reconstruction.

    layer1-degree mode reconstructs with D^{-1} A (isolated nodes score
    ||h||_1); learned-rowsum mode reconstructs with a row-stochastic S.
    Detached on purpose: selection is non-parametric, no gradient flows here.
    """
    m = _structure_matrix(structure)
    if m.rows != m.cols or m.rows != h.shape[0]:
        raise ShapeError(f"score: structure {m.shape} vs features {h.shape}")
    if mode == "layer1-degree":
        deg = m.row_sums()
        inv = np.zeros_like(deg)
        nz = deg != 0
        inv[nz] = 1.0 / deg[nz]
        recon = m.matmat(h) * inv[:, None]
    elif mode == "learned-rowsum":
        recon = m.matmat(h)
    else:
        raise ValueError(f"unknown score mode {mode!r}")
    return row_l1_norm(h - recon)[:, 0]


# -- top-rank pooling ----------------------------------------------------------------

@dataclass
class PoolResult:
    """Outcome of one pooling step over the current level's graph."""

    idx: np.ndarray              # selected nodes, strictly increasing
    features: ad.Variable        # selected rows of h
    structure: Structure         # selected rows and columns of the structure


def pool_size(n: int, ratio: float) -> int:
    return int(math.ceil(ratio * n))


def top_rank_pool(scores: np.ndarray, ratio: float, h: ad.Variable,
                  structure: Structure,
                  probe: SmoothnessProbe | None = None) -> PoolResult:
    """Keep the ceil(ratio * n) best-scoring nodes; ties prefer lower indices."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = len(scores)
    if n == 0:
        raise ad.ContractError("cannot pool an empty graph")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"pooling ratio must be in (0, 1], got {ratio}")
    if h.shape[0] != n or _structure_matrix(structure).rows != n:
        raise ShapeError("scores, features and structure disagree on node count")
    k = pool_size(n, ratio)
    if probe is not None:
        probe.note_selection(scores, k)
    order = np.argsort(-scores, kind="stable")
    idx = np.sort(order[:k])
    return PoolResult(idx=idx, features=ad.gather_rows(h, idx),
                      structure=extract_structure(structure, idx))


# -- simplex maps ------------------------------------------------------------------

@dataclass
class ThresholdResult:
    tau: float
    rho: int


def tau_threshold(z) -> ThresholdResult:
    """Sparsemax threshold and support size for a nonempty vector."""
    tau, rho = _simplex.tau_rho(np.asarray(z, dtype=np.float64).ravel())
    return ThresholdResult(tau=tau, rho=rho)


def sparsemax_row(z) -> np.ndarray:
    return _simplex.sparsemax(z)


def softmax_row(z) -> np.ndarray:
    return _simplex.softmax(z)


# -- structure learning --------------------------------------------------------------

@dataclass
class StructureLearnParams:
    """Attention vector plus the knobs of the structure-learning layer."""

    attention: ad.Variable            # (1, 2d)
    lam: float = 1.0                  # weight of the existing-edge bias
    hop_limit: int | None = 2         # None means all pairs are candidates
    normalization: str = "sparsemax"  # or "softmax"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.hop_limit is not None and self.hop_limit < 1:
            raise ValueError("hop limit must be >= 1")
        if self.normalization not in ("sparsemax", "softmax"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


_DENSE_HOP_LIMIT = 2048  # below this, boolean dense closure beats sparse products


def hop_neighborhood(structure: Structure, hops: int) -> SparseMatrix:
    """0/1 pattern of pairs within graph distance <= hops; diagonal included."""
    if hops < 1:
        raise ValueError("hop count must be >= 1")
    m = _structure_matrix(structure)
    if m.rows != m.cols:
        raise ShapeError("hop neighborhood requires a square structure")
    n = m.rows
    if n <= _DENSE_HOP_LIMIT:
        base = np.eye(n, dtype=bool)
        if m.nnz:
            base[m.row_ids(), m.col_indices] = True
        reach = base
        for _ in range(hops - 1):
            reach = reach @ base
        r, c = np.nonzero(reach)
        offsets = np.zeros(n + 1, dtype=np.intp)
        np.cumsum(np.bincount(r, minlength=n), out=offsets[1:])
        return SparseMatrix(n, n, offsets, c, np.ones(len(c)), _validate=False)
    base = SparseMatrix.from_coo(
        n, n,
        np.concatenate([m.row_ids(), np.arange(n)]),
        np.concatenate([m.col_indices, np.arange(n)]),
        np.ones(m.nnz + n)).scipy()
    base.data[:] = 1.0
    reach = base
    for _ in range(hops - 1):
        reach = reach @ base
        reach.data[:] = 1.0
    reach = reach.tocsr()
    reach.sort_indices()
    return SparseMatrix(n, n, reach.indptr, reach.indices, np.ones(reach.nnz),
                        _validate=False)


def full_pattern(n: int) -> SparseMatrix:
    """All-pairs candidate pattern for unlimited-hop structure learning."""
    return SparseMatrix(n, n, np.arange(0, n * n + 1, n),
                        np.tile(np.arange(n), n), np.ones(n * n), _validate=False)


def attention_scores(h: ad.Variable, params: StructureLearnParams,
                     structure: Structure, mask: SparseMatrix,
                     probe: SmoothnessProbe | None = None) -> SparseVariable:
    """Pairwise similarity scores on the mask pattern.

    E(p, q) = relu(a . [h_p || h_q]) + lambda * A(p, q), with A the current
    structure's stored value (0 when the pair is absent).
    """
    d = h.shape[1]
    if params.attention.shape != (1, 2 * d):
        raise ShapeError(f"attention vector must be (1, {2 * d}), "
                         f"got {params.attention.shape}")
    if mask.rows != h.shape[0] or mask.cols != h.shape[0]:
        raise ShapeError("mask must be square over the node set")
    a_src = ad.slice_cols(params.attention, 0, d)
    a_dst = ad.slice_cols(params.attention, d, 2 * d)
    u = ad.matmul(h, ad.transpose(a_src))
    v = ad.matmul(h, ad.transpose(a_dst))
    pre = ad.add(ad.gather_rows(u, mask.row_ids()),
                 ad.gather_rows(v, mask.col_indices))
    if probe is not None:
        probe.note_relu(pre.value)
    e = ad.relu(pre)
    if params.lam != 0.0:
        m = _structure_matrix(structure)
        if m.shape != mask.shape:
            raise ShapeError("structure and mask shapes differ")
        if m.nnz:
            positions = m.positions_in(mask)
            if isinstance(structure, SparseVariable):
                bias = ad.scatter_rows(ad.scale(structure.values, params.lam),
                                       positions, mask.nnz)
            else:
                dense_bias = np.zeros((mask.nnz, 1))
                dense_bias[positions, 0] = params.lam * m.values
                bias = ad.constant(dense_bias)
            e = ad.add(e, bias)
    return SparseVariable(mask, e)


def structure_learn(h: ad.Variable, structure: Structure,
                    params: StructureLearnParams,
                    probe: SmoothnessProbe | None = None,
                    mask: SparseMatrix | None = None) -> SparseVariable:
    """Row-stochastic learned structure over the hop-restricted candidate set.

    When no mask is given, candidates are the h-hop neighborhoods of
    ``structure`` itself.  Callers that pool first should pass the pre-pool
    neighborhood mask restricted to the kept nodes: that is what lets the
    learner reconnect nodes the pooling step disconnected.  Sparsemax rows
    have their exact zeros pruned from storage so downstream products track
    the true support.
    """
    n = h.shape[0]
    if mask is None:
        if params.hop_limit is None:
            mask = full_pattern(n)
        else:
            mask = hop_neighborhood(structure, params.hop_limit)
    elif mask.shape != (n, n):
        raise ShapeError("candidate mask must be square over the node set")
    e = attention_scores(h, params, structure, mask, probe=probe)
    if params.normalization == "sparsemax":
        vals = ad.segment_sparsemax(e.values, mask.row_offsets)
        if probe is not None:
            flat = e.values.value[:, 0]
            taus, _ = _simplex.segment_tau_rho(flat, mask.row_offsets)
            counts = np.diff(mask.row_offsets)
            gaps = np.abs(flat - np.repeat(taus, counts))
            probe._note("sparsemax", gaps[np.repeat(counts >= 2, counts)])
        keep = vals.value[:, 0] > 0.0
        if not keep.all():
            counts = np.zeros(n, dtype=np.intp)
            np.add.at(counts, mask.row_ids()[keep], 1)
            pattern = SparseMatrix(
                n, n, np.concatenate([[0], np.cumsum(counts)]),
                mask.col_indices[keep], np.ones(int(keep.sum())), _validate=False)
            return SparseVariable(pattern, ad.gather_rows(vals, np.nonzero(keep)[0]))
        return SparseVariable(mask, vals)
    vals = ad.segment_softmax(e.values, mask.row_offsets)
    return SparseVariable(mask, vals)


def uniform_hop_structure(structure: Structure, hops: int | None) -> SparseMatrix:
    """Row-stochastic structure that spreads weight uniformly over h-hop reach.

    Reachability is measured on ``structure`` itself, so nodes a pooling step
    disconnected stay disconnected here.  hops None means all pairs.
    """
    if hops is None:
        mask = full_pattern(_structure_matrix(structure).rows)
    else:
        mask = hop_neighborhood(structure, hops)
    counts = np.diff(mask.row_offsets)
    return mask.with_values(1.0 / counts[mask.row_ids()])


# -- readout -----------------------------------------------------------------------

def readout(h: ad.Variable, activation: str = "relu",
            probe: SmoothnessProbe | None = None) -> ad.Variable:
    """Fixed-size level summary: activated [row mean || column max], (1, 2d)."""
    if h.shape[0] == 0:
        raise ad.ContractError("readout of an empty graph")
    if probe is not None:
        probe.note_colmax(h.value)
    pre = ad.concat_cols(ad.row_mean(h), ad.col_max(h))
    return _activate(pre, activation, probe)


# -- optimality checker ---------------------------------------------------------------

@dataclass
class KktReport:
    """Residuals of the simplex-projection optimality conditions for (z, p)."""

    stationarity: float
    sum_violation: float        # |sum p - 1|
    nonneg_violation: float     # max(0, -min p)
    dual_violation: float       # max(0, -min alpha)
    slackness: float            # max_i |alpha_i * p_i|

    def max_residual(self) -> float:
        return max(self.stationarity, self.sum_violation, self.nonneg_violation,
                   self.dual_violation, self.slackness)


def kkt_check(z, p) -> KktReport:
    """Check whether p solves the simplex projection of z via its multipliers."""
    z = np.asarray(z, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    if z.shape != p.shape:
        raise ShapeError("z and p must have equal length")
    beta, _ = _simplex.tau_rho(z)
    alpha = p - z + beta
    return KktReport(
        stationarity=float(np.abs(p - z - alpha + beta).max()),
        sum_violation=abs(float(p.sum()) - 1.0),
        nonneg_violation=max(0.0, -float(p.min())),
        dual_violation=max(0.0, -float(alpha.min())),
        slackness=float(np.abs(alpha * p).max()),
    )
