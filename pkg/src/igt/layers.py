"""Model layers: input projection, GENConv message passing, global attention.

The GENConv neighbor aggregation and the tiled attention kernel are fused
tape ops with analytic backward rules (both are validated against finite
differences and against literal per-node / per-head loop oracles in the
test suite).  Everything else is composed from tensor primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .graph import CsrAdjacency
from .tensor import Tensor

GENCONV_EPSILON = 1e-7
GENCONV_BETA = 1.0

BLOCK_MODES = ("full", "no-attn", "no-gcn")


@dataclass
class GenConvParams:
    """Two-layer update MLP plus the aggregation constants."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    beta: float = GENCONV_BETA
    epsilon: float = GENCONV_EPSILON


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    n_heads: int = 8

    def __post_init__(self) -> None:
        d = self.wq.rows
        if d % self.n_heads != 0:
            raise ConfigurationError(f"feature dim {d} not divisible by {self.n_heads} heads")

    @property
    def head_dim(self) -> int:
        return self.wq.rows // self.n_heads


@dataclass
class GtiBlockParams:
    gcn: GenConvParams
    attn: AttentionParams


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator,
                   dtype: np.dtype | None = None) -> Tensor:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weight init."""
    limit = math.sqrt(6.0 / (rows + cols))
    data = rng.uniform(-limit, limit, size=(rows, cols))
    dt = dtype if dtype is not None else T.default_dtype()
    return Tensor(data.astype(dt), requires_grad=True)


def input_projection(h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """ReLU(h @ w + b): maps raw instance features to the model width."""
    return T.relu(T.add_bias(T.matmul(h, w), b))


# ---------------------------------------------------------------------------
# GENConv
# ---------------------------------------------------------------------------

def _segment_max(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-segment max along axis 0; empty segments yield 0 (masked by callers)."""
    n_seg = len(offsets) - 1
    out = np.zeros((n_seg,) + values.shape[1:], dtype=values.dtype)
    if len(values) == 0 or n_seg == 0:
        return out
    starts = offsets[:-1]
    nonempty = starts < offsets[1:]
    if nonempty.all():
        out[...] = np.maximum.reduceat(values, starts, axis=0)
    elif nonempty.any():
        # starts of non-empty segments are exactly the boundaries of the
        # non-empty runs, so a filtered reduceat reduces each one correctly
        out[nonempty] = np.maximum.reduceat(values, starts[nonempty], axis=0)
    return out


def _segment_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-segment sum along axis 0, accumulated strictly in segment order.

    Iterates over within-segment positions (vectorized across segments) so
    the float accumulation order per segment is the plain sequential one; a
    per-node loop oracle therefore reproduces it bit for bit.
    """
    n_seg = len(offsets) - 1
    out = np.zeros((n_seg,) + values.shape[1:], dtype=values.dtype)
    if len(values) == 0 or n_seg == 0:
        return out
    starts = offsets[:-1]
    lengths = np.diff(offsets)
    for pos in range(int(lengths.max())):
        active = np.flatnonzero(lengths > pos)
        out[active] += values[starts[active] + pos]
    return out


def genconv_aggregate(h: Tensor, adj: CsrAdjacency, beta: float = GENCONV_BETA,
                      epsilon: float = GENCONV_EPSILON) -> Tensor:
    """Softmax-weighted neighbor aggregation.

    Per node u with neighbors v: messages m_uv = ReLU(h_v) + epsilon, then
    m_u = sum_v softmax_v(beta * m_uv) * m_uv computed independently per
    feature channel.  Nodes without neighbors aggregate to zero.
    """
    if adj.n_nodes != h.rows:
        raise DimensionError(f"adjacency has {adj.n_nodes} nodes, features {h.rows}")
    rows = adj.edge_rows
    cols = adj.cols
    offsets = adj.offsets
    x = h.data

    msg = np.maximum(x[cols], 0.0) + epsilon                      # E x d
    scaled = beta * msg
    seg_max = _segment_max(scaled, offsets)                       # N x d
    p = np.exp(scaled - seg_max[rows])
    denom = _segment_sum(p, offsets)
    isolated = np.diff(offsets) == 0
    denom[isolated] = 1.0                                          # avoid 0/0; masked below
    out = _segment_sum((p / denom[rows]) * msg, offsets)
    out[isolated] = 0.0

    def backward(g: np.ndarray) -> None:
        if not h.requires_grad:
            return
        ge = g[rows]
        w = p / denom[rows]
        # d out_u / d msg_e = w_e * (1 + beta * (msg_e - out_u)), per channel
        dmsg = ge * w * (1.0 + beta * (msg - out[rows]))
        dmsg *= x[cols] > 0                                        # through the ReLU
        order, col_offsets = adj.col_grouping
        dh = _segment_sum(dmsg[order], col_offsets)
        T._accumulate(h, dh)

    return T.op_result(out, "genconv_aggregate", (h,), backward)


def genconv_neighbor_weights(h: Tensor, adj: CsrAdjacency, beta: float = GENCONV_BETA,
                             epsilon: float = GENCONV_EPSILON) -> np.ndarray:
    """The per-channel softmax weights over each node's neighbors (E x d).

    For every node with at least one neighbor the weights of its edge
    segment sum to 1 per channel; exposed for the invariant checks.
    """
    rows = adj.edge_rows
    msg = np.maximum(h.data[adj.cols], 0.0) + epsilon
    scaled = beta * msg
    seg_max = _segment_max(scaled, adj.offsets)
    p = np.exp(scaled - seg_max[rows])
    denom = _segment_sum(p, adj.offsets)
    return p / denom[rows]


def genconv_forward(h: Tensor, adj: CsrAdjacency, p: GenConvParams) -> Tensor:
    """Aggregate neighbors, then update with the two-layer MLP."""
    m = genconv_aggregate(h, adj, p.beta, p.epsilon)
    x = T.add(h, m)
    hidden = T.relu(T.add_bias(T.matmul(x, p.w1), p.b1))
    return T.add_bias(T.matmul(hidden, p.w2), p.b2)


# ---------------------------------------------------------------------------
# global attention
# ---------------------------------------------------------------------------

def attention_naive(h: Tensor, p: AttentionParams) -> Tensor:
    """Exact multi-head scaled-dot-product self-attention.

    Each head operates on a contiguous column block of the projections;
    head outputs are concatenated and merged by the output projection.
    """
    q = T.matmul(h, p.wq)
    k = T.matmul(h, p.wk)
    v = T.matmul(h, p.wv)
    dq = p.head_dim
    heads = []
    for i in range(p.n_heads):
        lo, hi = i * dq, (i + 1) * dq
        qh = T.slice_cols(q, lo, hi)
        kh = T.slice_cols(k, lo, hi)
        vh = T.slice_cols(v, lo, hi)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(dq))
        weights = T.softmax_rows(scores)
        heads.append(T.matmul(weights, vh))
    merged = heads[0] if len(heads) == 1 else T.concat_cols(heads)
    return T.matmul(merged, p.wo)


class KernelStats:
    """Peak auxiliary buffer sizes recorded by the last tiled-kernel call."""

    last_aux_elements: int = 0


def _split_heads(m: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = m.shape
    dq = d // n_heads
    return np.ascontiguousarray(m.reshape(n, n_heads, dq).transpose(1, 0, 2))


def _merge_heads(m: np.ndarray) -> np.ndarray:
    n_heads, n, dq = m.shape
    return np.ascontiguousarray(m.transpose(1, 0, 2).reshape(n, n_heads * dq))


def tiled_sdp_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int, block: int) -> Tensor:
    """Streaming exact attention over key/value blocks (all heads at once).

    Maintains a running row maximum, running denominator and rescaled
    output accumulator per query, so no N x N score matrix ever exists.
    Backward recomputes score tiles blockwise from the saved per-row
    log-sum-exp, accumulating dQ, dK, dV with the same tile budget.
    """
    if block < 1:
        raise ConfigurationError(f"block size must be >= 1, got {block}")
    n, d = q.shape
    dq = d // n_heads
    scale = 1.0 / math.sqrt(dq)
    dtype = q.data.dtype

    qs = _split_heads(q.data, n_heads)   # H x N x dq
    ks = _split_heads(k.data, n_heads)
    vs = _split_heads(v.data, n_heads)

    bq = min(block, n)
    bk = min(block, n)
    out = np.empty((n_heads, n, dq), dtype=dtype)
    lse = np.empty((n_heads, n), dtype=dtype)  # per-row log-sum-exp for backward
    aux = 0
    for i0 in range(0, n, bq):
        i1 = min(i0 + bq, n)
        qi = qs[:, i0:i1]
        m = np.full((n_heads, i1 - i0), -np.inf, dtype=dtype)
        l = np.zeros((n_heads, i1 - i0), dtype=dtype)
        acc = np.zeros((n_heads, i1 - i0, dq), dtype=dtype)
        for j0 in range(0, n, bk):
            j1 = min(j0 + bk, n)
            s = (qi @ ks[:, j0:j1].transpose(0, 2, 1)) * scale
            m_new = np.maximum(m, s.max(axis=2))
            p = np.exp(s - m_new[:, :, None])
            corr = np.exp(m - m_new)
            l = l * corr + p.sum(axis=2)
            acc = acc * corr[:, :, None] + p @ vs[:, j0:j1]
            m = m_new
            aux = max(aux, 2 * s.size + acc.size + 2 * m.size)
        out[:, i0:i1] = acc / l[:, :, None]
        lse[:, i0:i1] = m + np.log(l)
    KernelStats.last_aux_elements = aux
    merged = _merge_heads(out)

    def backward(g: np.ndarray) -> None:
        gs = _split_heads(np.asarray(g), n_heads)
        rowdot = (gs * out).sum(axis=2)                   # H x N
        dqs = np.zeros_like(qs)
        dks = np.zeros_like(ks)
        dvs = np.zeros_like(vs)
        for j0 in range(0, n, bk):
            j1 = min(j0 + bk, n)
            kj = ks[:, j0:j1]
            vj = vs[:, j0:j1]
            for i0 in range(0, n, bq):
                i1 = min(i0 + bq, n)
                qi = qs[:, i0:i1]
                s = (qi @ kj.transpose(0, 2, 1)) * scale
                p = np.exp(s - lse[:, i0:i1, None])
                gi = gs[:, i0:i1]
                dvs[:, j0:j1] += p.transpose(0, 2, 1) @ gi
                dp = gi @ vj.transpose(0, 2, 1)
                ds = p * (dp - rowdot[:, i0:i1, None])
                dqs[:, i0:i1] += (ds @ kj) * scale
                dks[:, j0:j1] += (ds.transpose(0, 2, 1) @ qi) * scale
        if q.requires_grad:
            T._accumulate(q, _merge_heads(dqs))
        if k.requires_grad:
            T._accumulate(k, _merge_heads(dks))
        if v.requires_grad:
            T._accumulate(v, _merge_heads(dvs))

    return T.op_result(merged, "tiled_sdp_attention", (q, k, v), backward)


def attention_tiled(h: Tensor, p: AttentionParams, block: int) -> Tensor:
    """Exact attention via the streaming kernel; same math as attention_naive."""
    q = T.matmul(h, p.wq)
    k = T.matmul(h, p.wk)
    v = T.matmul(h, p.wv)
    merged = tiled_sdp_attention(q, k, v, p.n_heads, block)
    return T.matmul(merged, p.wo)


# ---------------------------------------------------------------------------
# GTI block
# ---------------------------------------------------------------------------

def gti_block_forward(h: Tensor, adj: CsrAdjacency, p: GtiBlockParams, mode: str = "full",
                      kernel: str = "naive", block: int = 128) -> Tensor:
    """One integration block: message-passing and attention branches, summed.

    mode selects the ablation variant: "full" sums both branches,
    "no-attn" keeps only the graph branch, "no-gcn" only attention.
    """
    if mode not in BLOCK_MODES:
        raise ConfigurationError(f"unknown block mode {mode!r}, expected one of {BLOCK_MODES}")
    if kernel not in ("naive", "tiled"):
        raise ConfigurationError(f"unknown attention kernel {kernel!r}")

    def attn(x: Tensor) -> Tensor:
        if kernel == "tiled":
            return attention_tiled(x, p.attn, block)
        return attention_naive(x, p.attn)

    if mode == "no-attn":
        return genconv_forward(h, adj, p.gcn)
    if mode == "no-gcn":
        return attn(h)
    return T.add(genconv_forward(h, adj, p.gcn), attn(h))
