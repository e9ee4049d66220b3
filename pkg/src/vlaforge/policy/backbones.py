"""Vision-language backbones over raw observations.

Deterministic desk-scale featurization: each view is split into a 4x4 grid of
mean-RGB cells; every cell owns its own trainable 3->d linear projection so
mean pooling keeps position/content binding. Instruction words hash into a
64-bucket embedding table. k learned slot vectors are appended as action
queries.

Two flavors share the visual/text path and differ in the auxiliary output:
"vlm" emits per-bucket reconstruction logits of the instruction bag, "wm"
emits predicted next-frame pooled cell features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nnet
from ..core import AuxPrediction, ImageBuffer, Observation
from ..nnet import Node
from .registry import register_backbone

GRID = 4
CELLS = GRID * GRID
CELL_FEATURES = CELLS * 3  # 48 reals per view
INSTR_BUCKETS = 64


def cell_means(view: ImageBuffer) -> np.ndarray:
    """4x4 grid of mean RGB values in [0, 1]; shape (16, 3)."""
    img = view.to_array().astype(np.float64) / 255.0
    h, w = img.shape[:2]
    ys = [h * i // GRID for i in range(GRID + 1)]
    xs = [w * i // GRID for i in range(GRID + 1)]
    out = np.empty((CELLS, 3))
    for r in range(GRID):
        for c in range(GRID):
            block = img[ys[r] : ys[r + 1], xs[c] : xs[c + 1]]
            out[r * GRID + c] = block.mean(axis=(0, 1))
    return out


def pooled_cells(obs: Observation) -> np.ndarray:
    """Mean over views of the flattened 48-dim cell features."""
    feats = [cell_means(v).reshape(-1) for v in obs.views.values()]
    return np.mean(feats, axis=0)


def word_bucket(word: str) -> int:
    # FNV-1a so the hash is stable across runs and languages
    h = 0xCBF29CE484222325
    for byte in word.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h % INSTR_BUCKETS


def instruction_buckets(instruction: str) -> np.ndarray:
    words = instruction.split()
    return np.array([word_bucket(w) for w in words], dtype=np.int64)


@dataclass
class EncodeGraph:
    """Live tape handles of one encoded observation."""

    patch_tokens: Node  # (n_views*16, d)
    instr_tokens: Node | None  # (n_words, d) or None when instruction empty
    ctx: Node  # (2d,) pooled patch mean ++ pooled instruction mean
    patch_ctx: Node  # (d,) mean over patch tokens only
    slots: Node  # (k, d)
    cells48: np.ndarray  # constant pooled cell features


class _ToyBackbone:
    aux_kind = "none"

    def __init__(self, cfg):
        self.cfg = cfg

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        d = self.cfg.d
        params = {
            "backbone.patch_w": np.stack(
                [nnet.glorot_uniform(rng, 3, d, (3, d)) for _ in range(CELLS)]
            ),
            "backbone.patch_b": np.zeros((CELLS, d)),
            "backbone.instr_emb": nnet.glorot_uniform(
                rng, INSTR_BUCKETS, d, (INSTR_BUCKETS, d)
            ),
            "backbone.slots": nnet.glorot_uniform(rng, self.cfg.k, d, (self.cfg.k, d)),
        }
        return params

    def encode_graph(self, obs: Observation, pt) -> EncodeGraph:
        per_view = [
            nnet.per_cell_linear(
                cell_means(v), pt("backbone.patch_w"), pt("backbone.patch_b")
            )
            for v in obs.views.values()
        ]
        patch = per_view[0] if len(per_view) == 1 else nnet.vstack(per_view)
        buckets = instruction_buckets(obs.instruction)
        instr = (
            nnet.gather_rows(pt("backbone.instr_emb"), buckets)
            if buckets.size
            else None
        )
        patch_ctx = nnet.mean_rows(patch)
        # the instruction pools into its own half of the context so language
        # never gets drowned by the (much more numerous) patch tokens
        instr_ctx = (
            nnet.mean_rows(instr) if instr is not None
            else Node(np.zeros(self.cfg.d))
        )
        return EncodeGraph(
            patch_tokens=patch,
            instr_tokens=instr,
            ctx=nnet.concat_vec([patch_ctx, instr_ctx]),
            patch_ctx=patch_ctx,
            slots=pt("backbone.slots"),
            cells48=pooled_cells(obs),
        )

    def aux_prediction(self, graph: EncodeGraph, params) -> AuxPrediction:
        return AuxPrediction.none()

    def aux_loss_node(self, graph: EncodeGraph, obs, next_obs, pt) -> Node | None:
        return None


@register_backbone("vlm")
class VlmBackbone(_ToyBackbone):
    """Language-flavored: reconstructs the instruction's hash-bucket bag from
    pooled visual features (stand-in for language-aligned auxiliary losses)."""

    aux_kind = "language_logits"

    def init_params(self, rng):
        params = super().init_params(rng)
        params.update(nnet.mlp_init(rng, "backbone.lang", (self.cfg.d, INSTR_BUCKETS)))
        return params

    def _logits_node(self, graph: EncodeGraph, pt) -> Node:
        return nnet.mlp_forward_node("backbone.lang", _as_row(graph.patch_ctx), 1, pt)

    def aux_prediction(self, graph, params):
        logits = nnet.mlp_apply(params, "backbone.lang", graph.patch_ctx.data)
        return AuxPrediction(kind="language_logits", payload=logits)

    def aux_loss_node(self, graph, obs, next_obs, pt):
        buckets = instruction_buckets(obs.instruction)
        if buckets.size == 0:
            return None
        logits = self._logits_node(graph, pt)
        rows = nnet.tile_rows(logits, buckets.size)
        return nnet.softmax_cross_entropy(rows, buckets)


@register_backbone("wm")
class WorldModelBackbone(_ToyBackbone):
    """World-model-flavored: predicts the next frame's pooled cell features.
    The predictor starts at identity, so identical consecutive frames give
    zero auxiliary loss at initialization."""

    aux_kind = "future_features"

    def init_params(self, rng):
        params = super().init_params(rng)
        params["backbone.wm.w0"] = np.eye(CELL_FEATURES)
        params["backbone.wm.b0"] = np.zeros(CELL_FEATURES)
        return params

    def aux_prediction(self, graph, params):
        pred = nnet.mlp_apply(params, "backbone.wm", graph.cells48)
        return AuxPrediction(kind="future_features", payload=pred)

    def aux_loss_node(self, graph, obs, next_obs, pt):
        target = pooled_cells(next_obs) if next_obs is not None else graph.cells48
        pred = nnet.mlp_forward_node(
            "backbone.wm", Node(graph.cells48[None, :]), 1, pt
        )
        return nnet.square_mean(nnet.sub(pred, Node(target[None, :])))


def _as_row(vec: Node) -> Node:
    """(d,) node -> (1, d) node, differentiable."""
    return Node(
        vec.data[None, :], (vec,), lambda up: (up[0],)
    )
