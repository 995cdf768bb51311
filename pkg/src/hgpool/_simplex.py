"""Simplex-projection kernels shared by the autodiff ops and the layers API."""

from __future__ import annotations

import numpy as np


def tau_rho(z: np.ndarray) -> tuple[float, int]:
    """Threshold tau and support size rho for projecting z onto the simplex.

    rho = max{ 1 <= j <= n : u_j + (1 - sum_{i<=j} u_i) / j > 0 } for u the
    descending sort of z, and tau = (sum_{i<=rho} u_i - 1) / rho.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("empty input")
    u = np.sort(z)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, z.size + 1)
    cond = u + (1.0 - css) / j > 0.0
    rho = int(np.nonzero(cond)[0][-1]) + 1  # cond[0] is always true
    tau = (css[rho - 1] - 1.0) / rho
    return float(tau), rho


def sparsemax(z: np.ndarray) -> np.ndarray:
    """Euclidean projection of z onto the probability simplex."""
    z = np.asarray(z, dtype=np.float64).ravel()
    tau, _ = tau_rho(z)
    return np.maximum(z - tau, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax (shift by the max before exponentiating)."""
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("empty input")
    e = np.exp(z - z.max())
    return e / e.sum()


def sparsemax_jvp(out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pull grad back through sparsemax given its output.

    On the support S the Jacobian is delta_ij - 1/|S|; zero elsewhere.
    """
    support = out > 0.0
    ns = support.sum()
    back = np.zeros_like(grad)
    if ns:
        g = grad[support]
        back[support] = g - g.sum() / ns
    return back


def softmax_jvp(out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pull grad back through softmax given its output."""
    return out * (grad - np.dot(grad, out))


# -- batched kernels over variable-length segments -----------------------------
#
# Segments are delimited by an offsets array of length n_segments + 1 with
# strictly increasing entries (no empty segments).  Everything below is
# vectorized across all segments at once.

def segment_tau_rho(v: np.ndarray, offsets: np.ndarray):
    """Per-segment sparsemax threshold and support size."""
    counts = np.diff(offsets)
    starts = offsets[:-1]
    row_of = np.repeat(np.arange(len(counts)), counts)
    order = np.lexsort((-v, row_of))  # by segment, then descending value
    vs = v[order]
    css = np.cumsum(vs)
    base = css[starts] - vs[starts]
    css_within = css - base[row_of]
    jpos = np.arange(len(v)) - starts[row_of] + 1
    cond = (vs + (1.0 - css_within) / jpos) > 0.0
    rho = np.add.reduceat(cond.astype(np.intp), starts)
    tau = (css_within[starts + rho - 1] - 1.0) / rho
    return tau, rho


def segment_sparsemax(v: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    tau, _ = segment_tau_rho(v, offsets)
    counts = np.diff(offsets)
    return np.maximum(v - np.repeat(tau, counts), 0.0)


def segment_sparsemax_jvp(out: np.ndarray, grad: np.ndarray,
                          offsets: np.ndarray) -> np.ndarray:
    starts = offsets[:-1]
    counts = np.diff(offsets)
    support = out > 0.0
    ssum = np.add.reduceat(np.where(support, grad, 0.0), starts)
    ns = np.add.reduceat(support.astype(np.float64), starts)
    return np.where(support, grad - np.repeat(ssum / ns, counts), 0.0)


def segment_softmax(v: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    starts = offsets[:-1]
    counts = np.diff(offsets)
    tops = np.maximum.reduceat(v, starts)
    e = np.exp(v - np.repeat(tops, counts))
    return e / np.repeat(np.add.reduceat(e, starts), counts)


def segment_softmax_jvp(out: np.ndarray, grad: np.ndarray,
                        offsets: np.ndarray) -> np.ndarray:
    starts = offsets[:-1]
    counts = np.diff(offsets)
    dot = np.add.reduceat(grad * out, starts)
    return out * (grad - np.repeat(dot, counts))
