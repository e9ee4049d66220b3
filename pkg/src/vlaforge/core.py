"""Shared domain types: observations, action chunks, statistics, loss records.

All types are immutable after construction and safe to share across tasks.
Actions are float64 throughout; images stay uint8. The unified action width
is a runtime constant (UNIFIED_DIMS = 32); native per-robot widths live in
EmbodimentTag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

UNIFIED_DIMS = 32

CONTROL_MODES = ("delta", "absolute")


@dataclass(frozen=True)
class ImageBuffer:
    """Row-major RGB image, 8-bit per channel."""

    height: int
    width: int
    pixels: bytes  # height * width * 3 bytes, row-major RGB

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, 3
        )

    @staticmethod
    def from_array(arr: np.ndarray) -> "ImageBuffer":
        a = np.ascontiguousarray(arr, dtype=np.uint8)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) array, got {a.shape}")
        return ImageBuffer(height=a.shape[0], width=a.shape[1], pixels=a.tobytes())


@dataclass(frozen=True)
class Observation:
    """One raw deployment-time sample: multi-view RGB + instruction + optional state."""

    views: dict[str, ImageBuffer]  # insertion order is the view order
    instruction: str = ""
    state: Optional[np.ndarray] = None  # passed through unnormalized
    time_index: int = 0
    episode_meta: Optional[dict[str, str]] = None


@dataclass(frozen=True)
class ActionChunk:
    """k x D action matrix with a normalization flag and per-dimension liveness mask."""

    values: np.ndarray  # (horizon, dims) float64
    normalized: bool
    dof_mask: np.ndarray  # (dims,) bool, True = live dimension

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64)
        )
        object.__setattr__(self, "dof_mask", np.asarray(self.dof_mask, dtype=bool))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def unnormalized(values: np.ndarray, dof_mask=None) -> "ActionChunk":
        values = np.asarray(values, dtype=np.float64)
        if dof_mask is None:
            dof_mask = np.ones(values.shape[1], dtype=bool)
        return ActionChunk(values=values, normalized=False, dof_mask=dof_mask)


@dataclass(frozen=True)
class DimStats:
    q01: float
    q99: float
    mean: float
    std: float
    min: float
    max: float


@dataclass(frozen=True)
class DatasetStatistics:
    """Per-dimension quantiles/moments used for (un)normalization."""

    per_dim: tuple[DimStats, ...]
    sample_count: int

    @property
    def dims(self) -> int:
        return len(self.per_dim)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(d, name) for d in self.per_dim], dtype=np.float64)


@dataclass(frozen=True)
class EmbodimentTag:
    name: str
    native_dof: int
    control_mode: str  # "delta" or "absolute"

    def __post_init__(self):
        if not (0 < self.native_dof <= UNIFIED_DIMS):
            raise ValueError(f"native_dof must be in 1..{UNIFIED_DIMS}, got {self.native_dof}")
        if self.control_mode not in CONTROL_MODES:
            raise ValueError(f"control_mode must be one of {CONTROL_MODES}")


@dataclass(frozen=True)
class LossReport:
    """Named non-negative loss entries; always contains "action_loss".

    When "total_loss" is present it equals
    action_loss + aux_scale * aux_loss (the scale is recorded as "aux_scale").
    """

    entries: dict[str, float]

    def __post_init__(self):
        if "action_loss" not in self.entries:
            raise ValueError('LossReport must contain "action_loss"')

    def __getitem__(self, key: str) -> float:
        return self.entries[key]

    def __contains__(self, key: str) -> bool:
        return key in self.entries


@dataclass(frozen=True)
class AuxPrediction:
    """Optional auxiliary backbone output (language logits or future features)."""

    kind: str  # "language_logits" | "future_features" | "none"
    payload: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @staticmethod
    def none() -> "AuxPrediction":
        return AuxPrediction(kind="none", payload=np.zeros(0))


@dataclass(frozen=True)
class TrainSample:
    """One training example: observation, normalized unified-width target chunk,
    source embodiment, and (when the episode provides it) the next observation
    used by the world-model auxiliary objective."""

    obs: Observation
    chunk: ActionChunk
    tag: Optional[EmbodimentTag] = None
    next_obs: Optional[Observation] = None


def validate_example(obs: Observation, chunk: Optional[ActionChunk] = None) -> list[str]:
    """Check the raw-sample contract; returns a list of violations (empty = ok).

    Violations are data, not faults: callers decide whether to raise.
    """
    violations: list[str] = []
    if not isinstance(obs.views, dict) or len(obs.views) == 0:
        violations.append("views: empty")
    else:
        for name, img in obs.views.items():
            if img.height <= 0 or img.width <= 0:
                violations.append(f"views[{name}]: non-positive size")
                continue
            if len(img.pixels) != img.height * img.width * 3:
                violations.append(
                    f"views[{name}]: pixel count {len(img.pixels)} != h*w*3"
                )
    if not isinstance(obs.instruction, str):
        violations.append("instruction: not a string")
    if obs.time_index < 0:
        violations.append("time_index: negative")
    if obs.state is not None:
        state = np.asarray(obs.state)
        if state.ndim != 1:
            violations.append("state: not a vector")

    if chunk is not None:
        v = chunk.values
        if v.ndim != 2:
            violations.append("values: not a matrix")
            return violations
        k, d = v.shape
        if k <= 0 or d <= 0:
            violations.append("values: empty matrix")
        if d > UNIFIED_DIMS:
            violations.append(f"dims: {d} > {UNIFIED_DIMS}")
        if chunk.dof_mask.shape != (d,):
            violations.append("dof_mask: length != dims")
            return violations
        if not np.all(np.isfinite(v)):
            violations.append("values: non-finite")
        dead = ~chunk.dof_mask
        if np.any(v[:, dead] != 0.0):
            violations.append("values: masked dims not exactly 0")
        if chunk.normalized:
            live = v[:, chunk.dof_mask]
            if live.size and (live.min() < -1.0 or live.max() > 1.0):
                violations.append("values out of [-1,1]")
    return violations


def canonical_observation() -> Observation:
    """The fixed 64x64 observation used by fixtures and contract tests."""
    h = w = 64
    img = np.zeros((h, w, 3), dtype=np.uint8)
    # deterministic gradient + two blobs so features are non-degenerate
    yy, xx = np.mgrid[0:h, 0:w]
    img[:, :, 0] = (xx * 4) % 256
    img[:, :, 1] = (yy * 4) % 256
    img[10:15, 20:25] = (255, 40, 40)
    img[40:45, 50:55] = (255, 255, 255)
    return Observation(
        views={"main": ImageBuffer.from_array(img)},
        instruction="reach red",
        state=np.array([0.25, 0.75], dtype=np.float64),
        time_index=0,
    )
