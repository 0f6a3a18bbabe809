"""Attention kernel benchmark: wall-clock and peak intermediate buffers.

The naive kernel materializes an N x N score matrix per head; the tiled
kernel's auxiliary buffers depend only on the block size, the head count
and the head dimension.  Rows report both, plus the max absolute output
deviation between kernels, which must stay within the per-precision
equivalence tolerance (1e-12 in f64, 1e-5 in f32).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .layers import AttentionParams, KernelStats, attention_naive, attention_tiled, glorot_uniform
from .seeding import rng_for
from .tensor import DTYPES, Tensor, no_grad

EQUIV_TOL = {"f32": 1e-5, "f64": 1e-12}


@dataclass
class BenchRow:
    n: int
    d: int
    block: int
    naive_seconds: float
    tiled_seconds: float
    naive_buffer_elements: int
    tiled_aux_elements: int
    max_abs_deviation: float


def run_bench(n_list, d: int = 256, block_list=(128,), n_heads: int = 8,
              precision: str = "f32", seed: int = 0) -> list[BenchRow]:
    dtype = np.dtype(DTYPES[precision])
    rows: list[BenchRow] = []
    for n in n_list:
        rng = rng_for(seed, "bench", n)
        h = Tensor(rng.standard_normal((n, d)).astype(dtype))
        params = AttentionParams(
            wq=glorot_uniform(d, d, rng_for(seed, "bench", "wq"), dtype=dtype),
            wk=glorot_uniform(d, d, rng_for(seed, "bench", "wk"), dtype=dtype),
            wv=glorot_uniform(d, d, rng_for(seed, "bench", "wv"), dtype=dtype),
            wo=glorot_uniform(d, d, rng_for(seed, "bench", "wo"), dtype=dtype),
            n_heads=n_heads)
        with no_grad():
            t0 = time.perf_counter()
            naive_out = attention_naive(h, params).data
            naive_seconds = time.perf_counter() - t0
            for block in block_list:
                t0 = time.perf_counter()
                tiled_out = attention_tiled(h, params, block=block).data
                tiled_seconds = time.perf_counter() - t0
                rows.append(BenchRow(
                    n=n, d=d, block=block,
                    naive_seconds=naive_seconds, tiled_seconds=tiled_seconds,
                    naive_buffer_elements=n * n,
                    tiled_aux_elements=KernelStats.last_aux_elements,
                    max_abs_deviation=float(np.abs(naive_out - tiled_out).max())))
    return rows


def check_rows(rows: list[BenchRow], precision: str) -> list[str]:
    """Assertion failures (empty when the benchmark contract holds)."""
    tol = EQUIV_TOL[precision]
    failures = []
    for r in rows:
        if r.max_abs_deviation > tol:
            failures.append(f"N={r.n} block={r.block}: deviation {r.max_abs_deviation:.3e} "
                            f"exceeds {tol:.0e}")
        if r.naive_buffer_elements != r.n * r.n:
            failures.append(f"N={r.n}: naive buffer {r.naive_buffer_elements} != N^2")
    # fixed (block, d): tiled auxiliary footprint must not scale with N
    by_block: dict[int, set[int]] = {}
    for r in rows:
        if r.n >= r.block:
            by_block.setdefault(r.block, set()).add(r.tiled_aux_elements)
    for block, sizes in by_block.items():
        if len(sizes) > 1:
            failures.append(f"block={block}: tiled aux elements vary with N: {sorted(sizes)}")
    return failures


def render_table(rows: list[BenchRow]) -> str:
    header = (f"{'N':>6} {'block':>6} {'naive_s':>10} {'tiled_s':>10} "
              f"{'naive_buf':>12} {'tiled_aux':>10} {'max_dev':>10}")
    lines = [header]
    for r in rows:
        lines.append(f"{r.n:>6} {r.block:>6} {r.naive_seconds:>10.4f} {r.tiled_seconds:>10.4f} "
                     f"{r.naive_buffer_elements:>12} {r.tiled_aux_elements:>10} "
                     f"{r.max_abs_deviation:>10.2e}")
    return "\n".join(lines)
