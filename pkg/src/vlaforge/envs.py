"""Deterministic blob-world benchmarks: point_reach and pick_place.

Both render 64x64 RGB frames with 5x5 colored blobs on a black background
and move in the unit square with per-axis step clamping. Transitions are
pure functions of (state, action); the only randomness is in seeded resets
and task placement, so evaluation is exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nnet
from .core import EmbodimentTag, ImageBuffer, Observation
from .errors import ProtocolError, SpecError

IMAGE_SIZE = 64
BLOB = 5
STEP_MAX = 0.08
GRASP_EPSILON = 0.07

POINT_TAG = EmbodimentTag(name="point2d", native_dof=3, control_mode="delta")
ARM_TAG = EmbodimentTag(name="arm7", native_dof=7, control_mode="delta")

# color words chosen so their 64-bucket instruction hashes are pairwise
# distinct (a collision makes two tasks indistinguishable in the language
# channel and measurably degrades success on the colliding pair)
PALETTE = [
    ("red", (220, 40, 40)),
    ("green", (40, 220, 40)),
    ("blue", (60, 60, 235)),
    ("yellow", (230, 230, 40)),
    ("magenta", (220, 40, 220)),
    ("cyan", (40, 220, 220)),
    ("orange", (240, 150, 40)),
    ("purple", (150, 60, 220)),
    ("gold", (200, 170, 60)),
    ("rose", (240, 120, 150)),
]
AGENT_COLOR = (255, 255, 255)

# goals sit on a coarse lattice so pooled 4x4-cell features identify them
LATTICE = [0.15, 0.325, 0.5, 0.675, 0.85]


@dataclass(frozen=True)
class TaskSpec:
    env_id: str
    task_id: str
    goal: tuple[float, float]
    goal_color: str
    object_pos: Optional[tuple[float, float]] = None
    object_color: Optional[str] = None

    @property
    def instruction(self) -> str:
        if self.env_id == "point_reach":
            return f"reach {self.goal_color}"
        return f"put {self.object_color} on {self.goal_color}"


def embodiment_for(env_id: str) -> EmbodimentTag:
    if env_id == "point_reach":
        return POINT_TAG
    if env_id == "pick_place":
        return ARM_TAG
    raise SpecError(f"unknown env_id {env_id!r}")


def enumerate_tasks(env_id: str, n_tasks: int, seed: int) -> list[TaskSpec]:
    """Seeded-grid placement: distinct lattice points, one palette color each."""
    rng = nnet.derive_rng(seed, 0x7A5C)
    points = [(x, y) for x in LATTICE for y in LATTICE]
    order = rng.permutation(len(points))
    tasks = []
    for t in range(n_tasks):
        goal = points[order[t % len(points)]]
        color = PALETTE[t % len(PALETTE)][0]
        if env_id == "point_reach":
            tasks.append(TaskSpec(env_id, f"point_reach/{t:02d}", goal, color))
        elif env_id == "pick_place":
            obj = points[order[(t + n_tasks) % len(points)]]
            obj_color = PALETTE[(t + 3) % len(PALETTE)][0]
            tasks.append(
                TaskSpec(env_id, f"pick_place/{t:02d}", goal, color, obj, obj_color)
            )
        else:
            raise SpecError(f"unknown env_id {env_id!r}")
    return tasks


def _color_rgb(name: str) -> tuple[int, int, int]:
    for n, rgb in PALETTE:
        if n == name:
            return rgb
    raise SpecError(f"unknown color {name!r}")


DEFOCUS_RADIUS = 7  # tent-kernel half-width; footprint 5 + 2*7 = 19 px


def _soft_profile(frac: float) -> np.ndarray:
    """1-D intensity profile of a 5-px box at a fractional offset, seen
    through a tent defocus kernel. Mass stays exactly 5; the footprint is
    wider than one 16-px feature cell, so sub-cell motion always shows up in
    the cell means."""
    box = np.concatenate([[1.0 - frac], np.ones(BLOB - 1), [frac]])
    r = DEFOCUS_RADIUS
    tent = (r + 1.0 - np.abs(np.arange(-r, r + 1))) / (r + 1) ** 2
    return np.convolve(box, tent)


def _draw_blob(img: np.ndarray, pos, rgb) -> None:
    """Additively blend a defocused 5x5 blob at a fractional pixel position."""
    fy = pos[1] * (IMAGE_SIZE - BLOB)
    fx = pos[0] * (IMAGE_SIZE - BLOB)
    ty, tx = int(np.floor(fy)) - DEFOCUS_RADIUS, int(np.floor(fx)) - DEFOCUS_RADIUS
    wy = _soft_profile(fy - np.floor(fy))
    wx = _soft_profile(fx - np.floor(fx))
    footprint = np.outer(wy, wx)[:, :, None] * np.asarray(rgb, dtype=np.float64)
    # crop to the image (blobs near borders lose off-screen mass)
    y0, x0 = max(ty, 0), max(tx, 0)
    y1 = min(ty + footprint.shape[0], IMAGE_SIZE)
    x1 = min(tx + footprint.shape[1], IMAGE_SIZE)
    piece = footprint[y0 - ty : y1 - ty, x0 - tx : x1 - tx]
    region = img[y0:y1, x0:x1].astype(np.float64)
    img[y0:y1, x0:x1] = np.clip(np.rint(region + piece), 0, 255).astype(np.uint8)


class ToyEnv:
    """One episode-at-a-time environment over a fixed task."""

    def __init__(self, task: TaskSpec, max_steps: int = 60,
                 success_epsilon: float = 0.1):
        self.task = task
        self.embodiment = embodiment_for(task.env_id)
        self.max_steps = max_steps
        self.success_epsilon = success_epsilon
        self.goal = np.array(task.goal)
        self._started = False

    def reset(self, episode_seed: int) -> Observation:
        rng = nnet.derive_rng(episode_seed, 0xE9)
        self.agent = rng.uniform(0.05, 0.95, size=2)
        if self.task.env_id == "pick_place":
            self.object = np.array(self.task.object_pos)
            self.holding = False
            self.placed = False
        self.steps = 0
        self.done = False
        self.success = False
        self._started = True
        return self._observe()

    def step(self, action: np.ndarray) -> tuple[Observation, bool, bool]:
        if not self._started:
            raise ProtocolError("step() before reset()")
        if self.done:
            raise ProtocolError("step() after episode finished")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.embodiment.native_dof,):
            raise ProtocolError(
                f"action dims {action.shape} != native {self.embodiment.native_dof}"
            )
        delta = np.clip(action[:2], -STEP_MAX, STEP_MAX)
        self.agent = np.clip(self.agent + delta, 0.0, 1.0)

        if self.task.env_id == "point_reach":
            # success is a closed ball: distance exactly epsilon counts
            self.success = float(np.linalg.norm(self.agent - self.goal)) <= self.success_epsilon
        else:
            grip_closed = action[6] < 0.0
            if self.holding:
                self.object = self.agent.copy()
                if not grip_closed:  # release
                    self.holding = False
                    if float(np.linalg.norm(self.object - self.goal)) <= self.success_epsilon:
                        self.placed = True
            elif grip_closed and float(np.linalg.norm(self.agent - self.object)) <= GRASP_EPSILON:
                self.holding = True
                self.object = self.agent.copy()
            self.success = self.placed

        self.steps += 1
        self.done = self.success or self.steps >= self.max_steps
        return self._observe(), self.done, self.success

    def _observe(self) -> Observation:
        img = np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
        _draw_blob(img, self.goal, _color_rgb(self.task.goal_color))
        if self.task.env_id == "pick_place":
            _draw_blob(img, self.object, _color_rgb(self.task.object_color))
            state = np.array([*self.agent, *self.object, 1.0 if self.holding else 0.0])
        else:
            state = self.agent.copy()
        _draw_blob(img, self.agent, AGENT_COLOR)
        return Observation(
            views={"main": ImageBuffer.from_array(img)},
            instruction=self.task.instruction,
            state=state,
            time_index=getattr(self, "steps", 0),
        )


# ---------------------------------------------------------------------------
# scripted oracles (analytic controllers built before any learner)


def oracle_action(env: ToyEnv) -> np.ndarray:
    """Straight-line controller; for pick_place a reach/grasp/transport/release
    phase machine. Returns a native-dof action row."""
    if env.task.env_id == "point_reach":
        delta = np.clip(env.goal - env.agent, -STEP_MAX, STEP_MAX)
        return np.array([delta[0], delta[1], 1.0])
    act = np.zeros(7)
    if env.placed:
        act[6] = 1.0
        return act
    if not env.holding:
        to_obj = env.object - env.agent
        if float(np.linalg.norm(to_obj)) <= GRASP_EPSILON:
            act[6] = -1.0  # close
        else:
            act[:2] = np.clip(to_obj, -STEP_MAX, STEP_MAX)
            act[6] = 1.0
    else:
        to_goal = env.goal - env.agent
        if float(np.linalg.norm(to_goal)) <= env.success_epsilon * 0.5:
            act[6] = 1.0  # release over the goal
        else:
            act[:2] = np.clip(to_goal, -STEP_MAX, STEP_MAX)
            act[6] = -1.0  # stay closed while transporting
    return act


def rollout_oracle(env: ToyEnv, episode_seed: int, record=None) -> bool:
    """Run the oracle to termination; optionally record (obs, action) frames."""
    obs = env.reset(episode_seed)
    while not env.done:
        action = oracle_action(env)
        if record is not None:
            record.append((obs, action.copy()))
        obs, done, success = env.step(action)
    return env.success


def generate_oracle_store(root, env_id: str, n_tasks: int, episodes_per_task: int,
                          seed: int, max_steps: int = 60,
                          noise_scale: float = 0.0) -> int:
    """Write a synthetic demonstration store of scripted-oracle episodes.

    Rollouts execute the oracle action plus small exploration noise on the
    motion dims while the *recorded label stays the exact oracle action*, so
    recovery states appear in training without corrupting supervision.
    Episode seeds are keyed apart from evaluation seeds. Returns episode count.
    """
    from .data import Frame, write_store  # local import to avoid a cycle

    tasks = enumerate_tasks(env_id, n_tasks, seed)
    episodes = []
    for t_idx, task in enumerate(tasks):
        for ep in range(episodes_per_task):
            env = ToyEnv(task, max_steps=max_steps)
            rng = nnet.derive_rng(seed, t_idx, ep, 0xDA7A6E)
            obs = env.reset(int(rng.integers(0, 2**31 - 1)))
            frames: list[Frame] = []
            while not env.done:
                label = oracle_action(env)
                frames.append(Frame(obs=obs, action=label.copy()))
                executed = label.copy()
                if noise_scale > 0:
                    executed[:2] = executed[:2] + rng.normal(0, noise_scale, size=2)
                obs, _, _ = env.step(executed)
            episodes.append(frames)
    write_store(root, name=env_id, tag=embodiment_for(env_id), fps=10.0,
                episodes=episodes)
    return len(episodes)
