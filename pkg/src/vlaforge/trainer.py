"""Behavior-cloning and dual-loader co-training loops plus checkpoint packages.

The loop per optimization step: accumulate gradients over accumulation_steps
micro-batches (draw ranges partition one logical batch, so accumulation is
numerically equivalent to a single large batch), clip the global norm, apply
the adaptive-moment update at the cosine-scheduled learning rate, skipping
frozen parameter groups. Checkpoints keep the full resolved config and the
per-dataset statistics file.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import yaml

from . import codec, nnet
from .core import DatasetStatistics
from .errors import ConfigError, FormatError, IntegrityError, NumericsError
from .nnet import Optimizer, ParamSet, TrainConfig
from .policy import Policy, PolicyConfig, aux_loss_graph, forward_backward


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: dict[str, float] = field(
        default_factory=lambda: {"backbone": 1e-3, "head": 1e-3}
    )
    lr_min: float = 1e-5
    max_steps: int = 1000
    batch_size: int = 16  # micro-batch size per accumulation pass
    accumulation_steps: int = 1
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.01
    checkpoint_every: int = 10_000
    freeze_modules: str = ""
    loss_scale_vlm: float = 0.0
    aux_batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.accumulation_steps < 1 or self.batch_size < 1:
            raise ConfigError("batch_size and accumulation_steps must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.loss_scale_vlm < 0:
            raise ConfigError("loss_scale.vlm must be non-negative")

    @property
    def global_batch(self) -> int:
        return self.batch_size * self.accumulation_steps

    def schedule(self) -> TrainConfig:
        lrs = list(self.learning_rate.values())
        lr_max = max(lrs) if lrs else 0.0
        return TrainConfig(
            lr_max=lr_max,
            lr_min=min(self.lr_min, lr_max),
            total_steps=self.max_steps,
            grad_clip_norm=self.grad_clip_norm,
            accumulation_steps=self.accumulation_steps,
            seed=self.seed,
            weight_decay=self.weight_decay,
        )

    def lr_scales(self) -> dict[str, float]:
        lr_max = max(self.learning_rate.values()) if self.learning_rate else 0.0
        if lr_max == 0.0:
            return {g: 1.0 for g in self.learning_rate}
        return {g: v / lr_max for g, v in self.learning_rate.items()}


def frozen_param_names(policy: Policy, freeze_modules: str) -> set[str]:
    """Resolve comma-separated module paths to parameter names; every path
    must match at least one parameter."""
    frozen: set[str] = set()
    for raw in freeze_modules.split(","):
        prefix = raw.strip()
        if not prefix:
            continue
        matches = {
            n for n in policy.params.names()
            if n == prefix or n.startswith(prefix + ".")
        }
        if not matches:
            raise ConfigError(
                f"freeze_modules path {prefix!r} matches no parameters"
            )
        frozen |= matches
    return frozen


class EventLog:
    """Append-only JSON-lines event sink (consumed by the profiler)."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a")
        else:
            self._fh = None

    def emit(self, record: dict) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------
# checkpoint packages


@dataclass(frozen=True)
class CheckpointPackage:
    path: Path
    step: int


def save_checkpoint(
    policy: Policy,
    config_doc: dict,
    stats_by_name: dict[str, DatasetStatistics],
    step: int,
    path,
    optimizer: Optional[Optimizer] = None,
) -> CheckpointPackage:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.yaml").write_text(
        yaml.safe_dump(config_doc, sort_keys=False, default_flow_style=False)
    )
    codec.write_statistics_json(path / "dataset_statistics.json", stats_by_name)
    policy.params.save(path, stem="weights")
    state = {"step": int(step), "optimizer_t": optimizer.t if optimizer else 0}
    (path / "state.json").write_text(json.dumps(state, indent=2))
    if optimizer is not None:
        ParamSet(optimizer.state_arrays()).save(path, stem="moments")
    return CheckpointPackage(path=path, step=step)


@dataclass
class LoadedCheckpoint:
    policy: Policy
    config_doc: dict
    stats_by_name: dict[str, DatasetStatistics]
    step: int
    optimizer_t: int
    moments: Optional[ParamSet]


def load_checkpoint(path) -> LoadedCheckpoint:
    path = Path(path)
    for required in ("config.yaml", "dataset_statistics.json", "weights.bin",
                     "weights_manifest.json", "state.json"):
        if not (path / required).exists():
            raise FormatError(f"checkpoint missing {required}")
    config_doc = yaml.safe_load((path / "config.yaml").read_text())
    model_doc = config_doc.get("model")
    if not isinstance(model_doc, dict):
        raise FormatError("config.yaml has no model section")
    # the embedded config may be a full resolved run config whose model
    # section carries schema-only keys (e.g. the merge-fitting budget)
    known = {f.name for f in dataclasses.fields(PolicyConfig)}
    policy = Policy(PolicyConfig.from_dict(
        {k: v for k, v in model_doc.items() if k in known}
    ))
    loaded = ParamSet.load(path, stem="weights")
    if loaded.shapes != policy.params.shapes:
        raise IntegrityError("weights manifest does not match the model config")
    for name in policy.params.names():
        policy.params[name] = loaded[name]
    stats = codec.read_statistics_json(path / "dataset_statistics.json")
    state = json.loads((path / "state.json").read_text())
    moments = None
    if (path / "moments.bin").exists():
        moments = ParamSet.load(path, stem="moments")
    return LoadedCheckpoint(
        policy=policy,
        config_doc=config_doc,
        stats_by_name=stats,
        step=int(state["step"]),
        optimizer_t=int(state.get("optimizer_t", 0)),
        moments=moments,
    )


# ---------------------------------------------------------------------------
# training loops


def _accumulate(total: dict, grads: dict, scale: float) -> None:
    for name, g in grads.items():
        if name in total:
            total[name] = total[name] + scale * g
        else:
            total[name] = scale * g


def _run_loop(
    policy: Policy,
    cfg: TrainerConfig,
    config_doc: dict,
    stats_by_name: dict,
    run_dir,
    sink: Optional[EventLog],
    step_fn: Callable[[int], tuple[dict, dict]],
) -> CheckpointPackage:
    """Shared loop: step_fn(step) -> (grads, losses)."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    schedule = cfg.schedule()
    frozen = frozen_param_names(policy, cfg.freeze_modules)
    optimizer = Optimizer(policy.params, schedule, lr_scale=cfg.lr_scales())
    own_sink = sink is None
    sink = sink or EventLog(run_dir / "events.jsonl")
    last_good: Optional[CheckpointPackage] = None

    def checkpoint(step: int) -> CheckpointPackage:
        return save_checkpoint(
            policy, config_doc, stats_by_name, step,
            run_dir / "checkpoints" / f"step_{step:06d}", optimizer,
        )

    try:
        for step in range(cfg.max_steps):
            t0 = time.perf_counter()
            lr = nnet.lr_at(step, schedule)
            try:
                grads, losses = step_fn(step)
                optimizer.step(grads, lr=lr, frozen=frozen)
            except NumericsError:
                if last_good is None:
                    last_good = checkpoint(step)
                sink.emit({"step": step, "aborted": "numerics"})
                return last_good
            record = {
                "step": step,
                "lr": lr,
                **losses,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
                "global_batch": cfg.global_batch,
            }
            sink.emit(record)
            if (step + 1) % cfg.checkpoint_every == 0:
                last_good = checkpoint(step + 1)
        final = checkpoint(cfg.max_steps)
        return final
    finally:
        if own_sink:
            sink.close()


def train_sft(
    policy: Policy,
    sampler: Callable,
    cfg: TrainerConfig,
    config_doc: dict,
    stats_by_name: dict,
    run_dir,
    sink: Optional[EventLog] = None,
) -> CheckpointPackage:
    """Supervised behavior cloning on the action modeling loss.

    sampler(step, batch_size, draw_offset) must return a list of TrainSample.
    """

    def step_fn(step: int):
        grads: dict = {}
        action_sum = aux_sum = 0.0
        has_aux = False
        for micro in range(cfg.accumulation_steps):
            batch = sampler(step, cfg.batch_size, micro * cfg.batch_size)
            report, g = forward_backward(
                policy, batch, noise_key=step, key_offset=micro * cfg.batch_size
            )
            _accumulate(grads, g, 1.0 / cfg.accumulation_steps)
            action_sum += report["action_loss"]
            if "aux_loss" in report:
                aux_sum += report["aux_loss"]
                has_aux = True
        losses = {"action_loss": action_sum / cfg.accumulation_steps}
        if has_aux:
            losses["aux_loss"] = aux_sum / cfg.accumulation_steps
        return grads, losses

    return _run_loop(policy, cfg, config_doc, stats_by_name, run_dir, sink, step_fn)


def train_cotrain(
    policy: Policy,
    vla_sampler: Callable,
    aux_sampler: Callable,
    cfg: TrainerConfig,
    config_doc: dict,
    stats_by_name: dict,
    run_dir,
    sink: Optional[EventLog] = None,
) -> CheckpointPackage:
    """Dual-loader co-training: a VLA pass for the action loss plus an
    auxiliary pass through the backbone's language path, scaled by
    loss_scale_vlm, both accumulated into one optimizer step.

    aux_sampler(step, batch_size) must return a list of Observation.
    With loss_scale_vlm == 0 the second pass is skipped entirely, making the
    parameter trajectory bit-identical to train_sft on the same draws.
    """

    def step_fn(step: int):
        grads: dict = {}
        action_sum = 0.0
        for micro in range(cfg.accumulation_steps):
            batch = vla_sampler(step, cfg.batch_size, micro * cfg.batch_size)
            report, g = forward_backward(
                policy, batch, noise_key=step, key_offset=micro * cfg.batch_size
            )
            _accumulate(grads, g, 1.0 / cfg.accumulation_steps)
            action_sum += report["action_loss"]
        losses = {"action_loss": action_sum / cfg.accumulation_steps}
        if cfg.loss_scale_vlm > 0.0:
            observations = aux_sampler(step, cfg.aux_batch_size)
            aux_value, aux_node, pt = aux_loss_graph(policy, observations)
            if aux_node is not None:
                nnet.backward(aux_node)
                _accumulate(grads, pt.grads(), cfg.loss_scale_vlm)
            losses["aux_loss"] = aux_value
            losses["total_loss"] = (
                losses["action_loss"] + cfg.loss_scale_vlm * aux_value
            )
        return grads, losses

    return _run_loop(policy, cfg, config_doc, stats_by_name, run_dir, sink, step_fn)


def evaluate_aux_loss(policy: Policy, observations) -> float:
    """Held-out auxiliary loss (no gradients)."""
    value, _, _ = aux_loss_graph(policy, observations)
    return value


def fit_fast_merges(cfg: PolicyConfig, samples, budget: int = 64) -> PolicyConfig:
    """Fit BPE merges for the fast head on training chunks and bake them into
    the policy config (so checkpoints reproduce the tokenizer exactly).

    No-op for other heads or when merges are already present.
    """
    if cfg.head_id != "fast" or cfg.fast_merges or budget <= 0:
        return cfg
    from .codec import FastCodecConfig, base_symbols, bpe_train

    base = FastCodecConfig(
        horizon=cfg.k, dims=32, quant_scale=cfg.fast_gamma,
        alphabet_size=cfg.fast_alphabet, bpe_vocab_size=cfg.fast_alphabet,
    )
    corpus = [base_symbols(s.chunk, base) for s in samples]
    merges = bpe_train(corpus, vocab_size=cfg.fast_alphabet + budget,
                       alphabet_size=cfg.fast_alphabet)
    doc = cfg.to_dict()
    doc["fast_merges"] = [list(m) for m in merges]
    return PolicyConfig.from_dict(doc)
