"""Benchmark adapter pipeline and protocol-faithful success-rate aggregation.

The adapter owns everything between the wire and the environment: image
resizing, statistics-based unnormalization, unpadding to native dims,
delta->absolute conversion, temporal ensembling of overlapping chunk
predictions, and the sticky-gripper latch. Every stage is individually
bypassable; the pipeline is their composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import codec, nnet
from .core import ActionChunk, DatasetStatistics, DimStats, ImageBuffer, Observation
from .envs import ToyEnv, enumerate_tasks
from .errors import ConfigError, VlaForgeError
from .policy import Policy, policy_predict_action


@dataclass(frozen=True)
class AdapterConfig:
    resize_to: tuple[int, int] = (64, 64)
    open_loop_horizon: int = 4  # h <= k, steps executed between queries
    ensemble_m: Optional[float] = None  # None = off; exp(-m*age) weights
    sticky_latch: Optional[int] = None  # None = off; M consecutive flips
    delta_to_absolute: bool = False
    gripper_dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.open_loop_horizon < 1:
            raise ConfigError("open_loop_horizon must be >= 1")
        if self.sticky_latch is not None and self.sticky_latch < 1:
            raise ConfigError("sticky latch M must be >= 1")


@dataclass
class EvalReport:
    tasks: int
    episodes_per_task: int
    per_task: list[dict]
    mean_success_pct: float

    @property
    def trials(self) -> int:
        return self.tasks * self.episodes_per_task

    def to_json_dict(self) -> dict:
        return {
            "protocol": {
                "tasks": self.tasks,
                "episodes_per_task": self.episodes_per_task,
            },
            "per_task": self.per_task,
            "mean_success_pct": self.mean_success_pct,
        }


def resize_image(img: ImageBuffer, size: tuple[int, int]) -> ImageBuffer:
    """Nearest-neighbor resize (deterministic integer index map)."""
    h, w = size
    if (img.height, img.width) == (h, w):
        return img
    src = img.to_array()
    ys = (np.arange(h) * img.height) // h
    xs = (np.arange(w) * img.width) // w
    return ImageBuffer.from_array(src[ys][:, xs])


def resize_observation(obs: Observation, size: tuple[int, int]) -> Observation:
    return Observation(
        views={k: resize_image(v, size) for k, v in obs.views.items()},
        instruction=obs.instruction,
        state=obs.state,
        time_index=obs.time_index,
        episode_meta=obs.episode_meta,
    )


def ensemble_actions(covering: Sequence[tuple[int, np.ndarray]], m: float) -> np.ndarray:
    """Weighted mean of rows from overlapping predictions.

    covering: (age, action_row) pairs, age = steps since that chunk was
    predicted. Weights are exp(-m * age); a single prediction is the identity.
    """
    weights = np.array([math.exp(-m * age) for age, _ in covering])
    rows = np.stack([row for _, row in covering])
    return (weights[:, None] * rows).sum(axis=0) / weights.sum()


class StickyGripper:
    """Latched command: flips only after M consecutive opposite raw commands.
    Raw commands threshold at 0 (>= 0 maps to +1)."""

    def __init__(self, latch: int):
        self.latch = latch
        self.state: Optional[int] = None
        self.opposite_run = 0

    def apply(self, raw: float) -> float:
        cmd = 1 if raw >= 0.0 else -1
        if self.state is None:
            self.state = cmd
            return float(self.state)
        if cmd != self.state:
            self.opposite_run += 1
            if self.opposite_run >= self.latch:
                self.state = cmd
                self.opposite_run = 0
        else:
            self.opposite_run = 0
        return float(self.state)


def pad_statistics(stats: DatasetStatistics, dims: int) -> DatasetStatistics:
    """Zero records for padded dims so unnormalizing a unified-width chunk
    leaves masked dimensions at exactly 0."""
    if stats.dims > dims:
        raise ConfigError(f"statistics dims {stats.dims} > target {dims}")
    zero = DimStats(q01=0.0, q99=0.0, mean=0.0, std=0.0, min=0.0, max=0.0)
    return DatasetStatistics(
        per_dim=stats.per_dim + (zero,) * (dims - stats.dims),
        sample_count=stats.sample_count,
    )


class PolicyPredictor:
    """In-process predictor sharing the client interface."""

    def __init__(self, policy: Policy):
        self.policy = policy

    def predict(self, obs: Observation, seed: int) -> ActionChunk:
        return policy_predict_action(self.policy, obs, seed)["normalized_actions"]


def run_episode(
    predictor,
    env: ToyEnv,
    adapter: AdapterConfig,
    stats: DatasetStatistics,
    episode_seed: int,
    recorder=None,
) -> tuple[bool, list[np.ndarray]]:
    """resize -> query -> unnormalize -> unpad -> (convert) -> schedule/ensemble
    -> sticky -> execute, re-querying every open_loop_horizon steps."""
    native = env.embodiment.native_dof
    if stats.dims != native:
        raise ConfigError(
            f"statistics dims {stats.dims} != embodiment native_dof {native}"
        )
    padded_stats = pad_statistics(stats, 32)
    sticky = StickyGripper(adapter.sticky_latch) if adapter.sticky_latch else None
    history: list[tuple[int, np.ndarray]] = []  # (birth step, k x native values)
    trace: list[np.ndarray] = []
    obs = env.reset(episode_seed)
    step = 0
    query = 0
    while not env.done:
        if step % adapter.open_loop_horizon == 0:
            query_obs = resize_observation(obs, adapter.resize_to)
            seed = _episode_query_seed(episode_seed, query)
            chunk = predictor.predict(query_obs, seed)
            if recorder is not None:
                recorder(query_obs, seed, chunk)
            raw = codec.unnormalize(chunk, padded_stats)
            native_chunk = codec.unpad_from_unified(raw, env.embodiment)
            if adapter.delta_to_absolute:
                init = np.zeros(native)
                if obs.state is not None:
                    n = min(len(obs.state), native)
                    init[:n] = np.asarray(obs.state)[:n]
                native_chunk = codec.delta_to_absolute(
                    init, native_chunk, adapter.gripper_dims
                )
            history.append((step, native_chunk.values))
            query += 1
        covering = [
            (step - birth, values[step - birth])
            for birth, values in history
            if 0 <= step - birth < values.shape[0]
        ]
        if adapter.ensemble_m is not None and len(covering) > 1:
            row = ensemble_actions(covering, adapter.ensemble_m)
        else:
            row = covering[-1][1].copy()
        if sticky is not None:
            for g in adapter.gripper_dims:
                row[g] = sticky.apply(row[g])
        obs, done, success = env.step(row)
        trace.append(row)
        step += 1
    return env.success, trace


def _episode_query_seed(episode_seed: int, query: int) -> int:
    return (int(episode_seed) * 65_537 + query) & 0x7FFFFFFF


@dataclass(frozen=True)
class SuiteEntry:
    env_id: str
    tasks: int
    episodes_per_task: int
    max_steps: int = 60
    success_epsilon: float = 0.1
    task_seed: int = 0  # fixes the benchmark's task placements; episode
    #                     randomness comes from evaluate()'s seed argument


def evaluate(
    predictor,
    suite: Sequence[SuiteEntry],
    adapter: AdapterConfig,
    stats: DatasetStatistics,
    seed: int = 0,
    recorder=None,
) -> EvalReport:
    """tasks x episodes protocol; per-episode seeds derive from
    (seed, task index, episode index). Episodes run sequentially so results
    are independent of scheduling."""
    if not suite:
        raise ConfigError("empty evaluation suite")
    episodes_set = {entry.episodes_per_task for entry in suite}
    if len(episodes_set) != 1:
        raise ConfigError("all suite entries must share episodes_per_task")
    per_task = []
    total_tasks = 0
    total_eps = episodes_set.pop()
    for entry in suite:
        tasks = enumerate_tasks(entry.env_id, entry.tasks, entry.task_seed)
        total_tasks += entry.tasks
        for t_idx, task in enumerate(tasks):
            successes = 0
            for ep in range(entry.episodes_per_task):
                env = ToyEnv(task, max_steps=entry.max_steps,
                             success_epsilon=entry.success_epsilon)
                episode_seed = _derive_episode_seed(seed, t_idx, ep)
                try:
                    ok, _ = run_episode(predictor, env, adapter, stats,
                                        episode_seed, recorder=recorder)
                except VlaForgeError as e:
                    raise type(e)(f"task {task.task_id} episode {ep}: {e}") from e
                successes += int(ok)
            per_task.append(
                {
                    "task_id": task.task_id,
                    "successes": successes,
                    "trials": entry.episodes_per_task,
                }
            )
    total_successes = sum(r["successes"] for r in per_task)
    total_trials = sum(r["trials"] for r in per_task)
    return EvalReport(
        tasks=total_tasks,
        episodes_per_task=total_eps,
        per_task=per_task,
        mean_success_pct=100.0 * total_successes / total_trials,
    )


def _derive_episode_seed(seed: int, task_idx: int, episode: int) -> int:
    rng = nnet.derive_rng(seed, task_idx, episode, 0x5EED)
    return int(rng.integers(0, 2**31 - 1))


class OraclePolicy:
    """Scripted-controller baseline exposed through the predictor interface.

    Peeks at the live environment state (test/data scaffolding, not a learned
    policy): simulates the oracle k steps ahead, then normalizes and pads so
    the full adapter pipeline is exercised end to end.
    """

    def __init__(self, env: ToyEnv, stats: DatasetStatistics, k: int = 8):
        self.env = env
        self.stats = stats
        self.k = k

    def predict(self, obs: Observation, seed: int) -> ActionChunk:
        from .envs import oracle_action
        import copy

        sim = copy.deepcopy(self.env)
        rows = []
        for _ in range(self.k):
            action = oracle_action(sim)
            rows.append(action)
            if not sim.done:
                sim.step(action)
        native = ActionChunk.unnormalized(np.stack(rows))
        normalized = codec.normalize(native, self.stats)
        return codec.pad_to_unified(normalized, self.env.embodiment)
