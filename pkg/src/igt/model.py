"""Bag-level model: input projection, GTI blocks, attention pooling, classifier.

Parameters are held in a flat, stably named registry (the names are the
checkpoint contract, documented in the README).  All parameters are drawn
from per-name random streams, so two models built from the same seed share
identical values for every layer they have in common regardless of which
branches exist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .graph import WsiGraph
from .layers import (AttentionParams, GenConvParams, GtiBlockParams, attention_naive,
                     attention_tiled, genconv_forward, gti_block_forward, glorot_uniform,
                     input_projection, GENCONV_BETA, GENCONV_EPSILON)
from .seeding import rng_for
from .tensor import Tensor

cross_entropy = T.cross_entropy


@dataclass
class PoolingParams:
    """Instance scorer for attention pooling: softmax(tanh(h V) w)."""

    v_att: Tensor
    w_att: Tensor


@dataclass
class ClassifierParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def attention_pool(hl: Tensor, p: PoolingParams) -> tuple[Tensor, Tensor]:
    """Pool instance rows into one bag embedding.

    Returns (h_bag 1xd, alpha Nx1); alpha is the softmax over instances of
    the tanh-scorer and always forms a probability vector.
    """
    scores = T.matmul(T.tanh(T.matmul(hl, p.v_att)), p.w_att)      # N x 1
    alpha_row = T.softmax_rows(T.transpose(scores))                # 1 x N
    h_bag = T.matmul(alpha_row, hl)
    return h_bag, T.transpose(alpha_row)


def classify(h_bag: Tensor, p: ClassifierParams) -> Tensor:
    """Two-layer MLP producing raw logits (no softmax)."""
    hidden = T.relu(T.add_bias(T.matmul(h_bag, p.w1), p.b1))
    return T.add_bias(T.matmul(hidden, p.w2), p.b2)


class IgtModel:
    """The full bag classifier; ``mode`` selects the ablation variant."""

    def __init__(self, d_in: int, n_classes: int, d: int = 256, n_blocks: int = 2,
                 n_heads: int = 8, d_att: int = 128, mode: str = "full", seed: int = 0,
                 beta: float = GENCONV_BETA, epsilon: float = GENCONV_EPSILON,
                 kernel: str = "naive", block: int = 128,
                 dtype: np.dtype | None = None):
        if mode not in ("full", "no-attn", "no-gcn"):
            raise ConfigurationError(f"unknown mode {mode!r}")
        if d % n_heads != 0:
            raise ConfigurationError(f"d={d} not divisible by n_heads={n_heads}")
        self.d_in = d_in
        self.n_classes = n_classes
        self.d = d
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.d_att = d_att
        self.mode = mode
        self.kernel = kernel
        self.block = block
        self._params: dict[str, Tensor] = {}
        dt = dtype if dtype is not None else T.default_dtype()

        def make(name: str, rows: int, cols: int, zero: bool = False) -> Tensor:
            if zero:
                t = Tensor(np.zeros((rows, cols), dtype=dt), requires_grad=True)
            else:
                t = glorot_uniform(rows, cols, rng_for(seed, "init", name), dtype=dt)
            self._params[name] = t
            return t

        self.proj_w = make("input_proj.weight", d_in, d)
        self.proj_b = make("input_proj.bias", 1, d, zero=True)

        self.blocks: list[GtiBlockParams] = []
        for i in range(n_blocks):
            gcn = None
            attn = None
            if mode != "no-gcn":
                gcn = GenConvParams(
                    w1=make(f"blocks.{i}.gcn.mlp1.weight", d, d),
                    b1=make(f"blocks.{i}.gcn.mlp1.bias", 1, d, zero=True),
                    w2=make(f"blocks.{i}.gcn.mlp2.weight", d, d),
                    b2=make(f"blocks.{i}.gcn.mlp2.bias", 1, d, zero=True),
                    beta=beta, epsilon=epsilon)
            if mode != "no-attn":
                attn = AttentionParams(
                    wq=make(f"blocks.{i}.attn.wq", d, d),
                    wk=make(f"blocks.{i}.attn.wk", d, d),
                    wv=make(f"blocks.{i}.attn.wv", d, d),
                    wo=make(f"blocks.{i}.attn.wo", d, d),
                    n_heads=n_heads)
            self.blocks.append(GtiBlockParams(gcn=gcn, attn=attn))

        self.pool = PoolingParams(
            v_att=make("pool.v_att", d, d_att),
            w_att=make("pool.w_att", d_att, 1))
        hidden = max(1, d // 2)
        self.classifier = ClassifierParams(
            w1=make("classifier.mlp1.weight", d, hidden),
            b1=make("classifier.mlp1.bias", 1, hidden, zero=True),
            w2=make("classifier.mlp2.weight", hidden, n_classes),
            b2=make("classifier.mlp2.bias", 1, n_classes, zero=True))

    def parameters(self) -> dict[str, Tensor]:
        """Name -> tensor, in a stable creation order."""
        return self._params

    def instance_embeddings(self, bag: WsiGraph) -> Tensor:
        """Run projection and all GTI blocks; returns the final N x d features."""
        feats = bag.features
        if feats.cols != self.d_in:
            raise DimensionError(f"bag {bag.name or '<unnamed>'}: feature dim {feats.cols} != model d_in {self.d_in}")
        h = input_projection(feats, self.proj_w, self.proj_b)
        for blk in self.blocks:
            if self.mode == "no-attn":
                h = genconv_forward(h, bag.adjacency, blk.gcn)
            elif self.mode == "no-gcn":
                if self.kernel == "tiled":
                    h = attention_tiled(h, blk.attn, self.block)
                else:
                    h = attention_naive(h, blk.attn)
            else:
                h = gti_block_forward(h, bag.adjacency, blk, mode="full",
                                      kernel=self.kernel, block=self.block)
        return h

    def forward(self, bag: WsiGraph) -> Tensor:
        """Bag logits, shape 1 x C."""
        h = self.instance_embeddings(bag)
        h_bag, _ = attention_pool(h, self.pool)
        return classify(h_bag, self.classifier)

    def forward_with_attention(self, bag: WsiGraph) -> tuple[Tensor, Tensor]:
        """Bag logits plus the pooling weights (N x 1)."""
        h = self.instance_embeddings(bag)
        h_bag, alpha = attention_pool(h, self.pool)
        return classify(h_bag, self.classifier), alpha

    def loss(self, bag: WsiGraph) -> Tensor:
        return cross_entropy(self.forward(bag), bag.label)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values (for best-epoch snapshots)."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            p.data[...] = state[name]
