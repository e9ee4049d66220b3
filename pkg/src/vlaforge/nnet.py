"""Minimal differentiable-network kit (numpy, float64).

A small reverse-mode tape drives the composed backbone+head graphs; on top of
it live the MLP, the loss functions, the cosine-with-minimum LR schedule, and
a decoupled-weight-decay adaptive-moment optimizer with global-norm clipping.
Everything is deterministic given seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericsError, ShapeError


# ---------------------------------------------------------------------------
# parameters


class ParamSet:
    """Named float64 arrays. Shapes are frozen after construction."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        for name, a in self.arrays.items():
            if not np.all(np.isfinite(a)):
                raise NumericsError(f"non-finite initial value in {name}")
        self.shapes = {k: v.shape for k, v in self.arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.shapes[name]:
            raise ShapeError(f"shape {value.shape} != declared {self.shapes[name]} for {name}")
        self.arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.arrays.items()})

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].reshape(-1) for n in self.names()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for n in self.names():
            size = int(np.prod(self.shapes[n], dtype=np.int64)) if self.shapes[n] else 1
            self.arrays[n] = flat[pos : pos + size].reshape(self.shapes[n]).copy()
            pos += size
        if pos != flat.size:
            raise ShapeError(f"flat vector length {flat.size} != parameter count {pos}")

    def save(self, directory: Path, stem: str = "weights") -> None:
        directory = Path(directory)
        manifest = {n: list(self.shapes[n]) for n in self.names()}
        (directory / f"{stem}_manifest.json").write_text(json.dumps(manifest, indent=2))
        self.to_flat().astype("<f8").tofile(directory / f"{stem}.bin")

    @staticmethod
    def load(directory: Path, stem: str = "weights") -> "ParamSet":
        directory = Path(directory)
        manifest = json.loads((directory / f"{stem}_manifest.json").read_text())
        arrays = {n: np.zeros(tuple(shape)) for n, shape in manifest.items()}
        ps = ParamSet(arrays)
        flat = np.fromfile(directory / f"{stem}.bin", dtype="<f8")
        ps.load_flat(flat)
        return ps


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# reverse-mode tape


class Node:
    """One value in the computation graph. data is a float64 ndarray."""

    __slots__ = ("data", "grad", "parents", "vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp  # upstream -> tuple of parent grads

    @property
    def shape(self):
        return self.data.shape


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def backward(root: Node) -> None:
    """Accumulate gradients of a scalar root into every reachable node."""
    if root.data.shape != ():
        raise ShapeError("backward() expects a scalar root")
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones(())
    for node in reversed(order):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad = parent.grad + g


def add(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes {a.data.shape} vs {b.data.shape}")
    return Node(a.data + b.data, (a, b), lambda up: (up, up))


def add_row(mat: Node, row: Node) -> Node:
    """(M, N) + (N,) broadcast; gradient of the row sums over rows."""
    mat, row = as_node(mat), as_node(row)
    return Node(
        mat.data + row.data[None, :],
        (mat, row),
        lambda up: (up, up.sum(axis=0)),
    )


def sub(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(a.data - b.data, (a, b), lambda up: (up, -up))


def scale(a: Node, s: float) -> Node:
    a = as_node(a)
    return Node(a.data * s, (a,), lambda up: (up * s,))


def matmul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.data @ b.data,
        (a, b),
        lambda up: (up @ b.data.T, a.data.T @ up),
    )


def tanh(a: Node) -> Node:
    a = as_node(a)
    t = np.tanh(a.data)
    return Node(t, (a,), lambda up: (up * (1.0 - t * t),))


def mean_all(a: Node) -> Node:
    a = as_node(a)
    n = a.data.size
    return Node(a.data.mean(), (a,), lambda up: (np.full(a.data.shape, up / n),))


def mean_rows(a: Node) -> Node:
    """(M, N) -> (N,) mean over rows."""
    a = as_node(a)
    m = a.data.shape[0]
    return Node(
        a.data.mean(axis=0),
        (a,),
        lambda up: (np.broadcast_to(up[None, :] / m, a.data.shape).copy(),),
    )


def abs_mean(a: Node) -> Node:
    a = as_node(a)
    n = a.data.size
    return Node(
        np.abs(a.data).mean(),
        (a,),
        lambda up: (up * np.sign(a.data) / n,),
    )


def square_mean(a: Node) -> Node:
    a = as_node(a)
    n = a.data.size
    return Node(
        (a.data * a.data).mean(),
        (a,),
        lambda up: (up * 2.0 * a.data / n,),
    )


def concat_vec(parts: Sequence[Node]) -> Node:
    """Concatenate 1-D nodes."""
    parts = [as_node(p) for p in parts]
    widths = [p.data.shape[0] for p in parts]
    cuts = np.cumsum([0] + widths)

    def vjp(up):
        return tuple(up[cuts[i] : cuts[i + 1]] for i in range(len(parts)))

    return Node(np.concatenate([p.data for p in parts]), tuple(parts), vjp)


def hstack(parts: Sequence[Node]) -> Node:
    parts = [as_node(p) for p in parts]
    widths = [p.data.shape[1] for p in parts]
    cuts = np.cumsum([0] + widths)

    def vjp(up):
        return tuple(up[:, cuts[i] : cuts[i + 1]] for i in range(len(parts)))

    return Node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def vstack(parts: Sequence[Node]) -> Node:
    parts = [as_node(p) for p in parts]
    heights = [p.data.shape[0] for p in parts]
    cuts = np.cumsum([0] + heights)

    def vjp(up):
        return tuple(up[cuts[i] : cuts[i + 1]] for i in range(len(parts)))

    return Node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def gather_rows(table: Node, idx: np.ndarray) -> Node:
    """Embedding lookup; gradient scatter-adds into the table."""
    table = as_node(table)
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(up):
        g = np.zeros_like(table.data)
        np.add.at(g, idx, up)
        return (g,)

    return Node(table.data[idx], (table,), vjp)


def repeat_rows(a: Node, times: int) -> Node:
    """Each row repeated `times` consecutive times: [r0,r0,..,r1,r1,..]."""
    a = as_node(a)
    m, n = a.data.shape

    def vjp(up):
        return (up.reshape(m, times, n).sum(axis=1),)

    return Node(np.repeat(a.data, times, axis=0), (a,), vjp)


def tile_rows(a: Node, times: int) -> Node:
    """Whole matrix stacked `times` times: [A;A;...]."""
    a = as_node(a)
    m, n = a.data.shape

    def vjp(up):
        return (up.reshape(times, m, n).sum(axis=0),)

    return Node(np.tile(a.data, (times, 1)), (a,), vjp)


def per_cell_linear(cells: np.ndarray, w: Node, b: Node) -> Node:
    """token_i = cells[i] @ w[i] + b[i], one linear map per grid cell.

    cells (C, F) is constant input; w (C, F, D); b (C, D); output (C, D).
    """
    w, b = as_node(w), as_node(b)
    out = np.einsum("cf,cfd->cd", cells, w.data) + b.data

    def vjp(up):
        return (np.einsum("cf,cd->cfd", cells, up), up)

    return Node(out, (w, b), vjp)


def softmax_cross_entropy(
    logits: Node, targets: np.ndarray, row_weights: np.ndarray | None = None
) -> Node:
    """Weighted CE of integer targets under row-wise softmax (stable).

    row_weights defaults to uniform 1/n; pass weights summing to 1 to change
    how rows contribute (e.g. per-sample means over variable-length sequences).
    """
    logits = as_node(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = targets.shape[0]
    w = np.full(n, 1.0 / n) if row_weights is None else np.asarray(row_weights)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), targets] - np.log(expz.sum(axis=1)))

    def vjp(up):
        g = probs.copy()
        g[np.arange(n), targets] -= 1.0
        return (up * g * w[:, None],)

    return Node(float(nll @ w), (logits,), vjp)


# ---------------------------------------------------------------------------
# MLP


def mlp_param_names(prefix: str, layer_sizes: Sequence[int]) -> list[str]:
    names = []
    for i in range(len(layer_sizes) - 1):
        names += [f"{prefix}.w{i}", f"{prefix}.b{i}"]
    return names


def mlp_init(
    rng: np.random.Generator, prefix: str, layer_sizes: Sequence[int]
) -> dict[str, np.ndarray]:
    """Affine -> tanh stacks ending affine; Glorot-uniform weights, zero biases."""
    params = {}
    for i in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        params[f"{prefix}.w{i}"] = glorot_uniform(rng, fan_in, fan_out, (fan_in, fan_out))
        params[f"{prefix}.b{i}"] = np.zeros(fan_out)
    return params


def mlp_forward_node(prefix: str, x: Node, n_layers: int, param_node) -> Node:
    """Tape forward through the named MLP. param_node wraps a parameter once
    per tape so gradients accumulate on shared nodes."""
    h = x
    for i in range(n_layers):
        h = add_row(matmul(h, param_node(f"{prefix}.w{i}")), param_node(f"{prefix}.b{i}"))
        if i < n_layers - 1:
            h = tanh(h)
    return h


def mlp_layer_count(params: ParamSet, prefix: str) -> int:
    i = 0
    while f"{prefix}.w{i}" in params:
        i += 1
    return i


def mlp_apply(params: ParamSet, prefix: str, x: np.ndarray) -> np.ndarray:
    """Plain forward pass; accepts a vector or a row matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    n = mlp_layer_count(params, prefix)
    if n == 0:
        raise ShapeError(f"no MLP parameters under prefix {prefix!r}")
    for i in range(n):
        w, b = params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"]
        if h.shape[1] != w.shape[0]:
            raise ShapeError(f"input width {h.shape[1]} != {w.shape[0]} at layer {i}")
        h = h @ w + b
        if i < n - 1:
            h = np.tanh(h)
    return h[0] if single else h


def mlp_backward(
    params: ParamSet, prefix: str, x: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Exact reverse-mode gradients of mlp_apply; returns (dx, dparams)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    up = np.asarray(upstream, dtype=np.float64)
    up = up[None, :] if single else up
    n = mlp_layer_count(params, prefix)
    acts = [h]
    pre = []
    for i in range(n):
        z = acts[-1] @ params[f"{prefix}.w{i}"] + params[f"{prefix}.b{i}"]
        pre.append(z)
        acts.append(np.tanh(z) if i < n - 1 else z)
    grads: dict[str, np.ndarray] = {}
    g = up
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * (1.0 - np.tanh(pre[i]) ** 2)
        grads[f"{prefix}.w{i}"] = acts[i].T @ g
        grads[f"{prefix}.b{i}"] = g.sum(axis=0)
        g = g @ params[f"{prefix}.w{i}"].T
    return (g[0] if single else g), grads


# ---------------------------------------------------------------------------
# losses


def loss_and_grad(kind: str, prediction: np.ndarray, target, extras=None):
    """Returns (scalar loss, gradient wrt prediction)."""
    pred = np.asarray(prediction, dtype=np.float64)
    if kind == "l1":
        t = np.asarray(target, dtype=np.float64)
        if t.shape != pred.shape:
            raise ShapeError(f"l1 shapes {pred.shape} vs {t.shape}")
        diff = pred - t
        return float(np.abs(diff).mean()), np.sign(diff) / diff.size
    if kind == "mse":
        t = np.asarray(target, dtype=np.float64)
        if t.shape != pred.shape:
            raise ShapeError(f"mse shapes {pred.shape} vs {t.shape}")
        diff = pred - t
        return float((diff * diff).mean()), 2.0 * diff / diff.size
    if kind == "cross_entropy":
        idx = np.asarray(target, dtype=np.int64)
        logits = pred if pred.ndim == 2 else pred[None, :]
        idx = idx if idx.ndim == 1 else idx[None]
        z = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(z)
        probs = expz / expz.sum(axis=1, keepdims=True)
        n = idx.shape[0]
        loss = float(-(z[np.arange(n), idx] - np.log(expz.sum(axis=1))).mean())
        g = probs.copy()
        g[np.arange(n), idx] -= 1.0
        g /= n
        return loss, g.reshape(pred.shape)
    if kind == "flow_matching":
        x0, x1, tau = extras
        if not (0.0 <= float(tau) <= 1.0):
            raise DomainError(f"tau {tau} outside [0,1]")
        v_target = np.asarray(x1, dtype=np.float64) - np.asarray(x0, dtype=np.float64)
        if v_target.shape != pred.shape:
            raise ShapeError(f"flow shapes {pred.shape} vs {v_target.shape}")
        diff = pred - v_target
        return float((diff * diff).mean()), 2.0 * diff / diff.size
    raise DomainError(f"unknown loss kind {kind!r}")


def flow_interpolant(x0: np.ndarray, x1: np.ndarray, tau: float) -> np.ndarray:
    if not (0.0 <= tau <= 1.0):
        raise DomainError(f"tau {tau} outside [0,1]")
    return (1.0 - tau) * x0 + tau * x1


# ---------------------------------------------------------------------------
# schedule + optimizer


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    total_steps: int = 1000
    grad_clip_norm: float = 1.0
    accumulation_steps: int = 1
    seed: int = 0
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr_min > self.lr_max:
            raise DomainError("lr_min must be <= lr_max")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Cosine from lr_max to lr_min over total_steps; clamps past the end."""
    if step >= cfg.total_steps:
        return cfg.lr_min
    if step < 0:
        raise DomainError("negative step")
    frac = step / cfg.total_steps
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * frac)) / 2.0


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale the whole gradient when its global L2 norm exceeds max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        grads = {k: g * factor for k, g in grads.items()}
    return grads, total


class Optimizer:
    """Adaptive moments with decoupled weight decay; beta = (0.9, 0.999)."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: ParamSet, cfg: TrainConfig, lr_scale: dict[str, float] | None = None):
        self.params = params
        self.cfg = cfg
        self.m = {n: np.zeros_like(params[n]) for n in params.names()}
        self.v = {n: np.zeros_like(params[n]) for n in params.names()}
        self.t = 0
        # per-parameter LR multiplier keyed by the first path component
        self.lr_scale = lr_scale or {}

    def step(self, grads: dict[str, np.ndarray], lr: float, frozen: set[str] | None = None) -> float:
        """One clipped update. Returns the pre-clip global gradient norm."""
        frozen = frozen or set()
        active = {n: g for n, g in grads.items() if n not in frozen}
        for n, g in active.items():
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for {n}")
        active, norm = clip_global_norm(active, self.cfg.grad_clip_norm)
        self.t += 1
        b1, b2 = self.BETA1, self.BETA2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for n, g in active.items():
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            m_hat = self.m[n] / bias1
            v_hat = self.v[n] / bias2
            group = n.split(".", 1)[0]
            eff_lr = lr * self.lr_scale.get(group, 1.0)
            update = m_hat / (np.sqrt(v_hat) + self.EPS)
            if self.cfg.weight_decay != 0.0:
                update = update + self.cfg.weight_decay * self.params[n]
            self.params[n] = self.params[n] - eff_lr * update
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.params.names():
            out[f"m::{n}"] = self.m[n]
            out[f"v::{n}"] = self.v[n]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for n in self.params.names():
            self.m[n] = np.asarray(arrays[f"m::{n}"], dtype=np.float64)
            self.v[n] = np.asarray(arrays[f"v::{n}"], dtype=np.float64)
        self.t = t


# ---------------------------------------------------------------------------
# seeding helpers (counter-based, stable across runs and machines)


def derive_rng(*keys: int) -> np.random.Generator:
    """Philox generator keyed by a tuple of integers; no shared mutable state."""
    mixed = 0
    for k in keys:
        mixed = (mixed * 0x9E3779B97F4A7C15 + (int(k) & 0xFFFFFFFFFFFFFFFF) + 1) & (
            (1 << 128) - 1
        )
    return np.random.Generator(np.random.Philox(key=mixed))
