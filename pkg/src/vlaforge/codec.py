"""Action-space transforms.

Statistics, quantile min-max (un)normalization, unified 32-dim padding,
delta->absolute conversion, and the discrete action tokenizer:
orthonormal DCT-II over the horizon, scalar quantization, zig-zag mapping
to a base alphabet, and byte-pair encoding. Everything here is a pure,
deterministic function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import ActionChunk, DatasetStatistics, DimStats, EmbodimentTag, UNIFIED_DIMS
from .errors import CodecError, EmptyDataset, ShapeError


# ---------------------------------------------------------------------------
# statistics + normalization


def compute_statistics(chunks: Iterable[ActionChunk], dims: int) -> DatasetStatistics:
    """Empirical per-dimension stats over a stream of unnormalized chunks.

    Percentiles use linear interpolation between closest ranks; mean/std/min/max
    are exact over the stream. sample_count counts action rows.
    """
    rows = []
    for chunk in chunks:
        if chunk.normalized:
            raise ShapeError("compute_statistics expects unnormalized chunks")
        if chunk.dims != dims:
            raise ShapeError(f"chunk dims {chunk.dims} != {dims}")
        rows.append(chunk.values)
    if not rows:
        raise EmptyDataset("no chunks in statistics stream")
    data = np.concatenate(rows, axis=0)  # (N, dims)
    q01 = np.percentile(data, 1.0, axis=0, method="linear")
    q99 = np.percentile(data, 99.0, axis=0, method="linear")
    per_dim = tuple(
        DimStats(
            q01=float(q01[d]),
            q99=float(q99[d]),
            mean=float(data[:, d].mean()),
            std=float(data[:, d].std()),
            min=float(data[:, d].min()),
            max=float(data[:, d].max()),
        )
        for d in range(dims)
    )
    return DatasetStatistics(per_dim=per_dim, sample_count=data.shape[0])


def normalize(chunk: ActionChunk, stats: DatasetStatistics) -> ActionChunk:
    """Quantile min-max to [-1, 1] with clipping; degenerate spread maps to 0."""
    if chunk.normalized:
        raise ShapeError("chunk already normalized")
    if chunk.dims != stats.dims:
        raise ShapeError(f"chunk dims {chunk.dims} != stats dims {stats.dims}")
    lo = stats.column("q01")
    hi = stats.column("q99")
    span = hi - lo
    v = chunk.values.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.clip(2.0 * (v - lo) / span - 1.0, -1.0, 1.0)
    out[:, span == 0.0] = 0.0
    out[:, ~chunk.dof_mask] = 0.0
    return ActionChunk(values=out, normalized=True, dof_mask=chunk.dof_mask)


def unnormalize(chunk: ActionChunk, stats: DatasetStatistics) -> ActionChunk:
    """Exact inverse of normalize on the non-clipped range."""
    if not chunk.normalized:
        raise ShapeError("chunk is not normalized")
    if chunk.dims != stats.dims:
        raise ShapeError(f"chunk dims {chunk.dims} != stats dims {stats.dims}")
    lo = stats.column("q01")
    hi = stats.column("q99")
    span = hi - lo
    out = (chunk.values + 1.0) / 2.0 * span + lo
    degenerate = span == 0.0
    out[:, degenerate] = lo[degenerate]
    out[:, ~chunk.dof_mask] = 0.0
    return ActionChunk(values=out, normalized=False, dof_mask=chunk.dof_mask)


def pad_to_unified(chunk: ActionChunk, tag: EmbodimentTag) -> ActionChunk:
    """Zero-extend a native-width chunk to the unified 32-dim layout."""
    if chunk.dims > UNIFIED_DIMS:
        raise ShapeError(f"chunk dims {chunk.dims} > {UNIFIED_DIMS}")
    if chunk.dims != tag.native_dof:
        raise ShapeError(
            f"chunk dims {chunk.dims} != embodiment native_dof {tag.native_dof}"
        )
    if chunk.dims == UNIFIED_DIMS:
        return chunk
    k = chunk.horizon
    values = np.zeros((k, UNIFIED_DIMS), dtype=np.float64)
    values[:, : chunk.dims] = chunk.values
    mask = np.zeros(UNIFIED_DIMS, dtype=bool)
    mask[: chunk.dims] = chunk.dof_mask
    return ActionChunk(values=values, normalized=chunk.normalized, dof_mask=mask)


def unpad_from_unified(chunk: ActionChunk, tag: EmbodimentTag) -> ActionChunk:
    """Inverse of pad_to_unified: keep the first native_dof columns."""
    d = tag.native_dof
    if chunk.dims < d:
        raise ShapeError(f"chunk dims {chunk.dims} < native_dof {d}")
    return ActionChunk(
        values=chunk.values[:, :d].copy(),
        normalized=chunk.normalized,
        dof_mask=chunk.dof_mask[:d].copy(),
    )


def delta_to_absolute(
    initial_state: np.ndarray, chunk: ActionChunk, gripper_dims: Sequence[int] = ()
) -> ActionChunk:
    """Cumulative-sum deltas seeded at initial_state; gripper dims pass through."""
    if chunk.normalized:
        raise ShapeError("delta_to_absolute expects an unnormalized chunk")
    init = np.asarray(initial_state, dtype=np.float64)
    if init.shape != (chunk.dims,):
        raise ShapeError(f"state length {init.shape} != chunk dims {chunk.dims}")
    for g in gripper_dims:
        if not (0 <= g < chunk.dims):
            raise ShapeError(f"gripper dim {g} out of range 0..{chunk.dims - 1}")
    out = init[None, :] + np.cumsum(chunk.values, axis=0)
    gripper = list(gripper_dims)
    if gripper:
        out[:, gripper] = chunk.values[:, gripper]
    return ActionChunk(values=out, normalized=False, dof_mask=chunk.dof_mask)


# ---------------------------------------------------------------------------
# discrete action tokenizer: DCT-II + quantization + zig-zag + BPE


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        for t in self.tokens:
            if not (0 <= t < self.vocab_size):
                raise CodecError(f"token {t} outside vocab of size {self.vocab_size}")


@dataclass(frozen=True)
class FastCodecConfig:
    horizon: int = 8
    dims: int = UNIFIED_DIMS
    quant_scale: float = 0.02
    alphabet_size: int = 1024  # zig-zag symbols 0..alphabet_size-1
    bpe_vocab_size: int = 1024  # >= alphabet_size; surplus = merge budget
    bpe_merges: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.quant_scale <= 0:
            raise CodecError("quant_scale must be positive")
        if self.bpe_vocab_size < self.alphabet_size:
            raise CodecError("bpe_vocab_size smaller than base alphabet")
        # every merge may only reference already-defined tokens
        for i, (a, b) in enumerate(self.bpe_merges):
            limit = self.alphabet_size + i
            if not (0 <= a < limit and 0 <= b < limit):
                raise CodecError(f"merge {i} references undefined token ({a},{b})")
        if self.alphabet_size + len(self.bpe_merges) > self.bpe_vocab_size:
            raise CodecError("merge list exceeds bpe_vocab_size")

    @property
    def vocab_size(self) -> int:
        return self.alphabet_size + len(self.bpe_merges)


def dct_matrix(k: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; rows are frequencies. C @ C.T = I."""
    n = np.arange(k)
    f = np.arange(k)[:, None]
    c = np.cos(np.pi * (2 * n[None, :] + 1) * f / (2 * k))
    c[0, :] *= math.sqrt(1.0 / k)
    c[1:, :] *= math.sqrt(2.0 / k)
    return c


def zigzag(n: int) -> int:
    return 2 * n if n >= 0 else -2 * n - 1


def unzigzag(z: int) -> int:
    return z // 2 if z % 2 == 0 else -(z + 1) // 2


def quantize_chunk(chunk: ActionChunk, cfg: FastCodecConfig) -> np.ndarray:
    """Per-dimension DCT over the horizon, scalar-quantized. Returns (k, D) ints."""
    if chunk.horizon != cfg.horizon or chunk.dims != cfg.dims:
        raise ShapeError(
            f"chunk {chunk.horizon}x{chunk.dims} != codec {cfg.horizon}x{cfg.dims}"
        )
    coeffs = dct_matrix(cfg.horizon) @ chunk.values  # (k frequencies, D dims)
    return np.rint(coeffs / cfg.quant_scale).astype(np.int64)


def base_symbols(chunk: ActionChunk, cfg: FastCodecConfig) -> list[int]:
    """Quantize and serialize to the base alphabet, frequency-major interleave."""
    q = quantize_chunk(chunk, cfg)
    flat = q.reshape(-1)  # frequency-major: (f0,d0), (f0,d1), ..., (f1,d0), ...
    symbols = []
    for idx, coeff in enumerate(flat):
        z = zigzag(int(coeff))
        if z >= cfg.alphabet_size:
            raise CodecError(
                f"coefficient at interleave index {idx} exceeds alphabet "
                f"(value {coeff}, zig-zag {z} >= {cfg.alphabet_size})"
            )
        symbols.append(z)
    return symbols


def symbols_to_chunk(symbols: Sequence[int], cfg: FastCodecConfig) -> ActionChunk:
    expected = cfg.horizon * cfg.dims
    if len(symbols) != expected:
        raise CodecError(f"expected {expected} symbols, got {len(symbols)}")
    q = np.array([unzigzag(int(z)) for z in symbols], dtype=np.float64)
    coeffs = q.reshape(cfg.horizon, cfg.dims) * cfg.quant_scale
    values = dct_matrix(cfg.horizon).T @ coeffs
    return ActionChunk(
        values=values, normalized=True, dof_mask=np.ones(cfg.dims, dtype=bool)
    )


def apply_merges(symbols: Sequence[int], cfg: FastCodecConfig) -> list[int]:
    """Apply BPE merges in training order."""
    seq = list(symbols)
    for i, pair in enumerate(cfg.bpe_merges):
        seq = _merge_pair(seq, pair, cfg.alphabet_size + i)
    return seq


def expand_merges(tokens: Sequence[int], cfg: FastCodecConfig) -> list[int]:
    """Exact inverse of apply_merges for any trained merge list."""
    table = {cfg.alphabet_size + i: pair for i, pair in enumerate(cfg.bpe_merges)}
    out: list[int] = []
    stack = list(reversed(list(tokens)))
    while stack:
        t = stack.pop()
        if t < cfg.alphabet_size:
            out.append(t)
        elif t in table:
            a, b = table[t]
            stack.append(b)
            stack.append(a)
        else:
            raise CodecError(f"unknown token {t}")
    return out


def fast_encode(chunk: ActionChunk, cfg: FastCodecConfig) -> TokenSequence:
    if not chunk.normalized:
        raise ShapeError("fast_encode expects a normalized chunk")
    tokens = apply_merges(base_symbols(chunk, cfg), cfg)
    return TokenSequence(tokens=tuple(tokens), vocab_size=cfg.vocab_size)


def fast_decode(tokens: TokenSequence | Sequence[int], cfg: FastCodecConfig) -> ActionChunk:
    ids = tokens.tokens if isinstance(tokens, TokenSequence) else tuple(tokens)
    for t in ids:
        if not (0 <= t < cfg.vocab_size):
            raise CodecError(f"unknown token {t}")
    return symbols_to_chunk(expand_merges(ids, cfg), cfg)


def decode_error_bound(cfg: FastCodecConfig) -> float:
    """Worst-case |decode(encode(x)) - x| per value from +-gamma/2 rounding.

    Each quantized coefficient is off by at most gamma/2; the inverse DCT of a
    worst-case perturbation vector bounds the per-value error by
    (gamma/2) * sum_f |alpha(f)| = (gamma/2) * (sqrt(1/k) + (k-1) sqrt(2/k)).
    """
    k = cfg.horizon
    half = cfg.quant_scale / 2.0
    return half * (math.sqrt(1.0 / k) + (k - 1) * math.sqrt(2.0 / k))


# ---------------------------------------------------------------------------
# byte-pair encoding training


def _merge_pair(ids: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    n = len(ids)
    while i < n:
        if i < n - 1 and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def bpe_train(
    corpus: Sequence[Sequence[int]], vocab_size: int, alphabet_size: int
) -> tuple[tuple[int, int], ...]:
    """Greedy most-frequent-pair merging; ties go to the lexicographically
    smallest pair. Stops at the vocab budget or when no pair occurs twice."""
    if vocab_size < alphabet_size:
        raise CodecError("vocab_size smaller than alphabet")
    seqs = [list(s) for s in corpus]
    if not seqs or all(len(s) == 0 for s in seqs):
        raise EmptyDataset("empty BPE corpus")
    merges: list[tuple[int, int]] = []
    next_id = alphabet_size
    while next_id < vocab_size:
        counts: dict[tuple[int, int], int] = {}
        for s in seqs:
            for pair in zip(s, s[1:]):
                counts[pair] = counts.get(pair, 0) + 1
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in counts.items() if c == best_count)
        seqs = [_merge_pair(s, best, next_id) for s in seqs]
        merges.append(best)
        next_id += 1
    return tuple(merges)


# ---------------------------------------------------------------------------
# dataset_statistics.json


def stats_to_json_dict(stats: DatasetStatistics) -> dict:
    return {
        "dims": stats.dims,
        "sample_count": stats.sample_count,
        "per_dim": [
            {
                "q01": d.q01,
                "q99": d.q99,
                "mean": d.mean,
                "std": d.std,
                "min": d.min,
                "max": d.max,
            }
            for d in stats.per_dim
        ],
    }


def stats_from_json_dict(doc: dict) -> DatasetStatistics:
    per_dim = tuple(
        DimStats(
            q01=float(r["q01"]),
            q99=float(r["q99"]),
            mean=float(r["mean"]),
            std=float(r["std"]),
            min=float(r["min"]),
            max=float(r["max"]),
        )
        for r in doc["per_dim"]
    )
    if len(per_dim) != int(doc["dims"]):
        raise CodecError("dims field does not match per_dim record count")
    return DatasetStatistics(per_dim=per_dim, sample_count=int(doc["sample_count"]))


def write_statistics_json(path, stats_by_name: dict[str, DatasetStatistics]) -> None:
    """Single dataset -> the bare stats object; mixtures -> name-keyed map."""
    if len(stats_by_name) == 1:
        doc = stats_to_json_dict(next(iter(stats_by_name.values())))
    else:
        doc = {name: stats_to_json_dict(s) for name, s in stats_by_name.items()}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def read_statistics_json(path) -> dict[str, DatasetStatistics]:
    """Returns name -> stats; a bare object maps from the empty name ''."""
    with open(path) as f:
        doc = json.load(f)
    if "per_dim" in doc:
        return {"": stats_from_json_dict(doc)}
    return {name: stats_from_json_dict(sub) for name, sub in doc.items()}
