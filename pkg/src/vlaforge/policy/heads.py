"""The four action-decoding paradigms.

fast  - autoregressive next-token prediction over the discrete action codec
oft   - parallel slot-wise regression with L1 loss
pi    - flow-matching denoising of the flattened chunk
groot - dual-system: flow head conditioned on a slow System-2 summary that
        refreshes every system2_period queries at inference time

Each head exposes init_params, loss_node (tape graph over a batch) and
predict (concrete, deterministic given seed).
"""

from __future__ import annotations

import numpy as np

from .. import codec, nnet
from ..codec import FastCodecConfig
from ..core import ActionChunk, UNIFIED_DIMS
from ..errors import ShapeError
from ..nnet import Node
from .registry import register_head


def _clip_chunk(values: np.ndarray) -> ActionChunk:
    return ActionChunk(
        values=np.clip(values, -1.0, 1.0),
        normalized=True,
        dof_mask=np.ones(values.shape[1], dtype=bool),
    )


@register_head("oft")
class OftHead:
    """Slot-wise parallel regression; the simplest pluggable head."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.sizes = (cfg.ctx_width + cfg.d, cfg.hidden, UNIFIED_DIMS)

    def init_params(self, rng):
        return nnet.mlp_init(rng, "head.reg", self.sizes)

    def _rows(self, ctx_mat: Node, slots: Node, batch: int, pt) -> Node:
        inputs = nnet.hstack(
            [nnet.repeat_rows(ctx_mat, self.cfg.k), nnet.tile_rows(slots, batch)]
        )
        return nnet.mlp_forward_node("head.reg", inputs, len(self.sizes) - 1, pt)

    def loss_node(self, ctx_mat, slots, targets, pt, sample_keys):
        batch = ctx_mat.data.shape[0]
        out = self._rows(ctx_mat, slots, batch, pt)  # (B*k, 32)
        flat_targets = targets.reshape(batch * self.cfg.k, UNIFIED_DIMS)
        return nnet.abs_mean(nnet.sub(out, Node(flat_targets)))

    def predict(self, params, ctx: np.ndarray, slots: np.ndarray, seed: int) -> ActionChunk:
        rows = np.concatenate(
            [np.repeat(ctx[None, :], self.cfg.k, axis=0), slots], axis=1
        )
        out = nnet.mlp_apply(params, "head.reg", rows)
        return _clip_chunk(out)


@register_head("fast")
class FastHead:
    """Autoregressive discrete-token head over the DCT+BPE action codec."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.codec_cfg = FastCodecConfig(
            horizon=cfg.k,
            dims=UNIFIED_DIMS,
            quant_scale=cfg.fast_gamma,
            alphabet_size=cfg.fast_alphabet,
            bpe_vocab_size=cfg.fast_alphabet + len(cfg.fast_merges),
            bpe_merges=tuple(tuple(m) for m in cfg.fast_merges),
        )
        self.vocab = self.codec_cfg.vocab_size
        self.bos_row = self.vocab  # embedding-only start row, never a class
        self.sizes = (cfg.ctx_width + cfg.fast_token_dim, cfg.hidden, self.vocab)

    def init_params(self, rng):
        params = nnet.mlp_init(rng, "head.lm", self.sizes)
        params["head.tok_emb"] = nnet.glorot_uniform(
            rng, self.vocab + 1, self.cfg.fast_token_dim,
            (self.vocab + 1, self.cfg.fast_token_dim),
        )
        return params

    def loss_node(self, ctx_mat, slots, targets, pt, sample_keys):
        batch = ctx_mat.data.shape[0]
        prev_ids: list[int] = []
        next_ids: list[int] = []
        row_sample: list[int] = []
        weights: list[float] = []
        for b in range(batch):
            chunk = ActionChunk(
                values=targets[b], normalized=True,
                dof_mask=np.ones(UNIFIED_DIMS, dtype=bool),
            )
            toks = list(codec.fast_encode(chunk, self.codec_cfg).tokens)
            prev_ids += [self.bos_row] + toks[:-1]
            next_ids += toks
            row_sample += [b] * len(toks)
            # mean of per-sample means, so accumulated micro-batches match one
            # large batch exactly even with variable-length token sequences
            weights += [1.0 / (batch * len(toks))] * len(toks)
        ctx_rows = nnet.gather_rows(ctx_mat, np.array(row_sample))
        emb_rows = nnet.gather_rows(pt("head.tok_emb"), np.array(prev_ids))
        logits = nnet.mlp_forward_node(
            "head.lm", nnet.hstack([ctx_rows, emb_rows]), len(self.sizes) - 1, pt
        )
        return nnet.softmax_cross_entropy(logits, np.array(next_ids), np.array(weights))

    def predict(self, params, ctx, slots, seed) -> ActionChunk:
        # greedy decoding; stops once the expanded symbol stream covers the
        # chunk (every token expands to >= 1 base symbol, so this terminates)
        emb = params["head.tok_emb"]
        want = self.cfg.k * UNIFIED_DIMS
        symbols: list[int] = []
        prev = self.bos_row
        while len(symbols) < want:
            x = np.concatenate([ctx, emb[prev]])
            logits = nnet.mlp_apply(params, "head.lm", x)
            nxt = int(np.argmax(logits))
            symbols += codec.expand_merges([nxt], self.codec_cfg)
            prev = nxt
        # a merged token may overshoot the boundary; keep the covered prefix
        chunk = codec.symbols_to_chunk(symbols[:want], self.codec_cfg)
        return _clip_chunk(chunk.values)


class _FlowHeadBase:
    """Shared flow-matching machinery: linear interpolant, velocity MLP,
    Euler sampling from seeded standard-normal noise."""

    extra_cond = 0

    def __init__(self, cfg):
        self.cfg = cfg
        self.flat = cfg.k * UNIFIED_DIMS
        self.sizes = (
            self.flat + 1 + cfg.ctx_width + self.extra_cond,
            cfg.hidden,
            self.flat,
        )

    def init_params(self, rng):
        return nnet.mlp_init(rng, "head.vel", self.sizes)

    def _cond_node(self, ctx_mat: Node, pt) -> Node:
        return ctx_mat

    def _cond_np(self, params, ctx: np.ndarray) -> np.ndarray:
        return ctx

    def loss_node(self, ctx_mat, slots, targets, pt, sample_keys):
        batch = ctx_mat.data.shape[0]
        x1 = targets.reshape(batch, self.flat)
        x_tau = np.empty_like(x1)
        taus = np.empty((batch, 1))
        v_target = np.empty_like(x1)
        for b in range(batch):
            rng = nnet.derive_rng(int(sample_keys[b]), 0x0F10)
            x0 = rng.standard_normal(self.flat)
            tau = float(rng.uniform(0.0, 1.0))
            x_tau[b] = nnet.flow_interpolant(x0, x1[b], tau)
            taus[b, 0] = tau
            v_target[b] = x1[b] - x0
        cond = self._cond_node(ctx_mat, pt)
        inputs = nnet.hstack([Node(x_tau), Node(taus), cond])
        v = nnet.mlp_forward_node("head.vel", inputs, len(self.sizes) - 1, pt)
        return nnet.square_mean(nnet.sub(v, Node(v_target)))

    def predict(self, params, ctx, slots, seed) -> ActionChunk:
        steps = self.cfg.denoise_steps
        cond = self._cond_np(params, ctx)
        rng = nnet.derive_rng(int(seed), 0x0E17)
        x = rng.standard_normal(self.flat)
        for i in range(steps):
            tau = i / steps
            inp = np.concatenate([x, [tau], cond])
            x = x + nnet.mlp_apply(params, "head.vel", inp) / steps
        return _clip_chunk(x.reshape(self.cfg.k, UNIFIED_DIMS))


@register_head("pi")
class PiHead(_FlowHeadBase):
    """Flow-matching denoising conditioned on the pooled hidden state."""


@register_head("groot")
class GrootHead(_FlowHeadBase):
    """Dual-system: a System-2 summary MLP runs every system2_period queries;
    the System-1 flow head runs every query on fresh features plus the cached
    summary."""

    def __init__(self, cfg):
        self.extra_cond = cfg.d  # summary width
        super().__init__(cfg)
        self.sys2_sizes = (cfg.ctx_width, cfg.d)
        self._cache: np.ndarray | None = None
        self._queries = 0
        self.recompute_count = 0

    def init_params(self, rng):
        params = super().init_params(rng)
        params.update(nnet.mlp_init(rng, "head.sys2", self.sys2_sizes))
        return params

    def _cond_node(self, ctx_mat, pt):
        # training always refreshes System 2 (cadence is an inference behavior)
        summary = nnet.mlp_forward_node(
            "head.sys2", ctx_mat, len(self.sys2_sizes) - 1, pt
        )
        return nnet.hstack([ctx_mat, summary])

    def _cond_np(self, params, ctx):
        if self._queries % self.cfg.system2_period == 0 or self._cache is None:
            self._cache = nnet.mlp_apply(params, "head.sys2", ctx)
            self.recompute_count += 1
        self._queries += 1
        return np.concatenate([ctx, self._cache])

    def reset_cache(self):
        self._cache = None
        self._queries = 0
        self.recompute_count = 0


def align_targets(targets: np.ndarray, k: int) -> np.ndarray:
    """Chunk-to-slot alignment: slot i supervises row i; surplus rows error."""
    if targets.ndim != 3 or targets.shape[2] != UNIFIED_DIMS:
        raise ShapeError(f"targets must be (B, k, {UNIFIED_DIMS}), got {targets.shape}")
    if targets.shape[1] != k:
        raise ShapeError(
            f"target horizon {targets.shape[1]} != slot count {k} (no silent truncation)"
        )
    return targets
