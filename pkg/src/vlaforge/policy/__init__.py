"""Backbone + action-head composition with unified forward/predict entry points.

A Policy owns one ParamSet shared by both components; either component can be
swapped through the registry without touching the other. `policy_forward`
returns a loss record; `policy_predict_action` consumes the same raw
observation format (minus actions) and returns normalized unified-width
actions only — unnormalization belongs to the benchmark adapter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import nnet
from ..core import (
    ActionChunk,
    AuxPrediction,
    LossReport,
    Observation,
    TrainSample,
    UNIFIED_DIMS,
    validate_example,
)
from ..errors import ShapeError, ValidationError
from ..nnet import Node, ParamSet
from . import backbones as _backbones  # noqa: F401  (registers)
from . import heads as _heads  # noqa: F401  (registers)
from .backbones import EncodeGraph
from .heads import align_targets
from .registry import BACKBONES, HEADS, lookup_backbone, lookup_head

EPS_TOTAL = 1e-9


@dataclass(frozen=True)
class PolicyConfig:
    backbone_id: str = "vlm"
    head_id: str = "oft"
    k: int = 8
    d: int = 32
    hidden: int = 64
    aux_scale: float = 0.0
    seed: int = 0
    denoise_steps: int = 10
    system2_period: int = 2
    fast_gamma: float = 0.1
    fast_alphabet: int = 256
    fast_token_dim: int = 32
    fast_merges: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.denoise_steps < 1:
            raise ValueError("denoise_steps must be >= 1")
        if self.system2_period < 1:
            raise ValueError("system2_period must be >= 1")
        if self.aux_scale < 0:
            raise ValueError("aux_scale must be non-negative")

    @property
    def ctx_width(self) -> int:
        return 2 * self.d

    def to_dict(self) -> dict:
        return {
            "backbone_id": self.backbone_id,
            "head_id": self.head_id,
            "k": self.k,
            "d": self.d,
            "hidden": self.hidden,
            "aux_scale": self.aux_scale,
            "seed": self.seed,
            "denoise_steps": self.denoise_steps,
            "system2_period": self.system2_period,
            "fast_gamma": self.fast_gamma,
            "fast_alphabet": self.fast_alphabet,
            "fast_token_dim": self.fast_token_dim,
            "fast_merges": [list(m) for m in self.fast_merges],
        }

    @staticmethod
    def from_dict(doc: dict) -> "PolicyConfig":
        doc = dict(doc)
        doc["fast_merges"] = tuple(tuple(m) for m in doc.get("fast_merges", ()))
        return PolicyConfig(**doc)


@dataclass(frozen=True)
class HiddenStates:
    """Concrete backbone output: token sequence partitioned into patch,
    instruction and action-query slots."""

    tokens: np.ndarray  # (n_patch + n_instr + k, d)
    n_patch: int
    n_instr: int
    slot_count: int
    cells48: np.ndarray  # pooled raw features (world-model aux path)

    @property
    def d(self) -> int:
        return self.tokens.shape[1]

    @property
    def ctx(self) -> np.ndarray:
        patch = self.tokens[: self.n_patch].mean(axis=0)
        if self.n_instr:
            instr = self.tokens[self.n_patch : self.n_patch + self.n_instr].mean(axis=0)
        else:
            instr = np.zeros_like(patch)
        return np.concatenate([patch, instr])

    @property
    def slots(self) -> np.ndarray:
        return self.tokens[self.n_patch + self.n_instr :]


class ParamTape:
    """Wraps each named parameter into a single shared tape node."""

    def __init__(self, params: ParamSet):
        self.params = params
        self.nodes: dict[str, Node] = {}

    def __call__(self, name: str) -> Node:
        if name not in self.nodes:
            self.nodes[name] = Node(self.params[name])
        return self.nodes[name]

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: node.grad for n, node in self.nodes.items() if node.grad is not None
        }


class Policy:
    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg
        self.backbone = lookup_backbone(cfg.backbone_id)(cfg)
        self.head = lookup_head(cfg.head_id)(cfg)
        rng = nnet.derive_rng(cfg.seed, 0xB0)
        params = self.backbone.init_params(rng)
        params.update(self.head.init_params(rng))
        self.params = ParamSet(params)

    def group_names(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for n in self.params.names():
            groups.setdefault(n.split(".", 1)[0], []).append(n)
        return groups


def registry_compose(cfg: PolicyConfig) -> Policy:
    """Any registered (backbone, head) pair composes; unknown ids raise
    RegistryError naming the available ids."""
    lookup_backbone(cfg.backbone_id)
    lookup_head(cfg.head_id)
    return Policy(cfg)


def available_components() -> dict[str, list[str]]:
    return {"backbones": sorted(BACKBONES), "heads": sorted(HEADS)}


# ---------------------------------------------------------------------------
# public ops


def backbone_encode(policy: Policy, obs: Observation) -> tuple[HiddenStates, AuxPrediction]:
    problems = validate_example(obs)
    if problems:
        raise ValidationError("; ".join(problems))
    pt = ParamTape(policy.params)
    graph = policy.backbone.encode_graph(obs, pt)
    instr = graph.instr_tokens.data if graph.instr_tokens is not None else np.zeros((0, policy.cfg.d))
    tokens = np.concatenate([graph.patch_tokens.data, instr, graph.slots.data], axis=0)
    hidden = HiddenStates(
        tokens=tokens,
        n_patch=graph.patch_tokens.data.shape[0],
        n_instr=instr.shape[0],
        slot_count=policy.cfg.k,
        cells48=graph.cells48,
    )
    return hidden, policy.backbone.aux_prediction(graph, policy.params)


def head_loss(policy: Policy, hidden: HiddenStates, target: ActionChunk) -> LossReport:
    """Action loss of one sample from concrete hidden states (no aux term)."""
    _check_target(target, policy.cfg.k)
    if hidden.slot_count != target.horizon:
        raise ShapeError(
            f"slot count {hidden.slot_count} != target horizon {target.horizon}"
        )
    pt = ParamTape(policy.params)
    targets = align_targets(target.values[None, :, :], policy.cfg.k)
    node = policy.head.loss_node(
        Node(hidden.ctx[None, :]), Node(hidden.slots), targets, pt, sample_keys=[0]
    )
    return LossReport({"action_loss": float(node.data)})


def head_predict(policy: Policy, hidden: HiddenStates, seed: int = 0) -> ActionChunk:
    return policy.head.predict(policy.params, hidden.ctx, hidden.slots, seed)


def policy_predict_action(policy: Policy, obs: Observation, seed: int = 0) -> dict:
    hidden, _ = backbone_encode(policy, obs)
    chunk = head_predict(policy, hidden, seed)
    return {"normalized_actions": chunk}


def _check_target(chunk: ActionChunk, k: int) -> None:
    if not chunk.normalized:
        raise ShapeError("target chunk must be normalized")
    if chunk.dims != UNIFIED_DIMS:
        raise ShapeError(f"target dims {chunk.dims} != {UNIFIED_DIMS}")
    if chunk.horizon != k:
        raise ShapeError(f"target horizon {chunk.horizon} != configured k {k}")


def _as_samples(batch) -> list[TrainSample]:
    out = []
    for item in batch:
        if isinstance(item, TrainSample):
            out.append(item)
        else:
            obs, chunk = item[0], item[1]
            out.append(TrainSample(obs=obs, chunk=chunk))
    return out


def build_loss_graph(policy: Policy, batch, noise_key: int = 0, key_offset: int = 0):
    """Full differentiable graph over a batch; returns (report, total node, tape)."""
    samples = _as_samples(batch)
    if not samples:
        raise ValidationError("empty batch")
    for s in samples:
        problems = validate_example(s.obs)
        if problems:
            raise ValidationError("; ".join(problems))
        _check_target(s.chunk, policy.cfg.k)

    pt = ParamTape(policy.params)
    graphs = [policy.backbone.encode_graph(s.obs, pt) for s in samples]
    ctx_mat = nnet.vstack([_row(g.ctx) for g in graphs])
    slots = pt("backbone.slots")
    targets = align_targets(
        np.stack([s.chunk.values for s in samples]), policy.cfg.k
    )
    sample_keys = [
        _mix_key(noise_key, key_offset + i) for i in range(len(samples))
    ]
    action_node = policy.head.loss_node(ctx_mat, slots, targets, pt, sample_keys)

    entries = {"action_loss": float(action_node.data)}
    total_node = action_node
    if policy.cfg.aux_scale > 0:
        aux_nodes = []
        for s, g in zip(samples, graphs):
            node = policy.backbone.aux_loss_node(g, s.obs, s.next_obs, pt)
            if node is not None:
                aux_nodes.append(node)
        if aux_nodes:
            aux_node = aux_nodes[0]
            for extra in aux_nodes[1:]:
                aux_node = nnet.add(aux_node, extra)
            aux_node = nnet.scale(aux_node, 1.0 / len(aux_nodes))
        else:
            aux_node = Node(0.0)
        total_node = nnet.add(action_node, nnet.scale(aux_node, policy.cfg.aux_scale))
        entries["aux_loss"] = float(aux_node.data)
        entries["aux_scale"] = policy.cfg.aux_scale
        entries["total_loss"] = float(total_node.data)
    else:
        entries["total_loss"] = entries["action_loss"]
    return LossReport(entries), total_node, pt


def policy_forward(policy: Policy, batch, noise_key: int = 0, key_offset: int = 0) -> LossReport:
    report, _, _ = build_loss_graph(policy, batch, noise_key, key_offset)
    return report


def forward_backward(policy: Policy, batch, noise_key: int = 0, key_offset: int = 0):
    """(LossReport, gradient dict) of the total loss over the batch."""
    report, total, pt = build_loss_graph(policy, batch, noise_key, key_offset)
    nnet.backward(total)
    return report, pt.grads()


def aux_loss_graph(policy: Policy, observations: Sequence, next_obs: Optional[Sequence] = None):
    """Auxiliary objective alone (co-training pass 2); returns (loss, node, tape)."""
    pt = ParamTape(policy.params)
    nodes = []
    for i, obs in enumerate(observations):
        graph = policy.backbone.encode_graph(obs, pt)
        nxt = next_obs[i] if next_obs is not None else None
        node = policy.backbone.aux_loss_node(graph, obs, nxt, pt)
        if node is not None:
            nodes.append(node)
    if not nodes:
        return 0.0, None, pt
    total = nodes[0]
    for extra in nodes[1:]:
        total = nnet.add(total, extra)
    total = nnet.scale(total, 1.0 / len(nodes))
    return float(total.data), total, pt


def _row(vec: Node) -> Node:
    return Node(vec.data[None, :], (vec,), lambda up: (up[0],))


def _mix_key(noise_key: int, index: int) -> int:
    return (int(noise_key) * 1_000_003 + index) & 0x7FFFFFFFFFFFFFFF
