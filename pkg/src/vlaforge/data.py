"""Episode storage and the weighted cross-embodiment mixture sampler.

On-disk layout per store:
    <root>/manifest.json              name, robot_type, native_dof, control_mode,
                                      fps, episode_count
    <root>/episodes/ep_%06d.bin       MessagePack {"frames": [...]}

Each frame: {"views": {name: {"h", "w", "rgb"}}, "instruction": str,
"state": [f64...], "action": [f64...]}.

Sampling is counter-based: every draw owns a Philox stream keyed by
(seed, step, draw index), so parallel loader workers stay deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import codec, mpack, nnet
from .core import (
    ActionChunk,
    DatasetStatistics,
    EmbodimentTag,
    ImageBuffer,
    Observation,
    TrainSample,
)
from .errors import FormatError, IntegrityError, SpecError


@dataclass(frozen=True)
class Frame:
    obs: Observation
    action: np.ndarray  # native dims


@dataclass(frozen=True)
class MixtureEntry:
    name: str
    weight: float
    robot_type: str


@dataclass(frozen=True)
class MixtureSpec:
    entries: tuple[MixtureEntry, ...]
    seed: int = 0

    def __post_init__(self):
        if not any(e.weight > 0 for e in self.entries):
            raise SpecError("mixture needs at least one positive weight")
        if any(e.weight < 0 for e in self.entries):
            raise SpecError("negative mixture weight")

    @staticmethod
    def from_lists(rows: Sequence, seed: int = 0) -> "MixtureSpec":
        entries = tuple(
            MixtureEntry(name=str(r[0]), weight=float(r[1]), robot_type=str(r[2]))
            for r in rows
        )
        return MixtureSpec(entries=entries, seed=seed)


class EpisodeStore:
    """Read-only episode access; manifest validated against on-disk files."""

    def __init__(self, root: Path, manifest: dict):
        self.root = Path(root)
        self.name = manifest["name"]
        self.tag = EmbodimentTag(
            name=manifest["robot_type"],
            native_dof=int(manifest["native_dof"]),
            control_mode=manifest["control_mode"],
        )
        self.fps = manifest["fps"]
        self.episode_count = int(manifest["episode_count"])
        self._cache: dict[int, list[Frame]] = {}

    def episode(self, index: int) -> list[Frame]:
        if index not in self._cache:
            path = self.root / "episodes" / f"ep_{index:06d}.bin"
            try:
                doc = mpack.unpackb(path.read_bytes())
            except FileNotFoundError as e:
                raise IntegrityError(f"missing episode file {path}") from e
            self._cache[index] = [_decode_frame(f) for f in doc["frames"]]
            if not self._cache[index]:
                raise IntegrityError(f"empty episode {path}")
        return self._cache[index]

    def all_chunks(self) -> list[ActionChunk]:
        """Every episode's actions as one unnormalized chunk (for statistics)."""
        out = []
        for i in range(self.episode_count):
            actions = np.stack([f.action for f in self.episode(i)])
            out.append(ActionChunk.unnormalized(actions))
        return out


def _decode_frame(doc: dict) -> Frame:
    views = {}
    for name, rec in doc["views"].items():
        views[name] = ImageBuffer(height=rec["h"], width=rec["w"], pixels=rec["rgb"])
    state = np.array(doc.get("state") or [], dtype=np.float64)
    obs = Observation(
        views=views,
        instruction=doc.get("instruction", ""),
        state=state if state.size else None,
    )
    return Frame(obs=obs, action=np.array(doc["action"], dtype=np.float64))


def _encode_frame(frame: Frame) -> dict:
    views = {
        name: {"h": img.height, "w": img.width, "rgb": img.pixels}
        for name, img in frame.obs.views.items()
    }
    doc = {
        "views": views,
        "instruction": frame.obs.instruction,
        "state": [float(x) for x in (frame.obs.state if frame.obs.state is not None else [])],
        "action": [float(x) for x in frame.action],
    }
    return doc


def open_store(root) -> EpisodeStore:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"missing manifest.json under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
        required = {"name", "robot_type", "native_dof", "control_mode", "fps",
                    "episode_count"}
        missing = required - manifest.keys()
        if missing:
            raise FormatError(f"manifest missing fields: {sorted(missing)}")
    except json.JSONDecodeError as e:
        raise FormatError(f"corrupt manifest.json: {e}") from e
    on_disk = len(list((root / "episodes").glob("ep_*.bin"))) if (root / "episodes").exists() else 0
    if on_disk != int(manifest["episode_count"]):
        raise IntegrityError(
            f"manifest says {manifest['episode_count']} episodes, disk has {on_disk}"
        )
    return EpisodeStore(root, manifest)


def write_store(root, name: str, tag: EmbodimentTag, fps: float,
                episodes: Sequence[Sequence[Frame]]) -> None:
    root = Path(root)
    (root / "episodes").mkdir(parents=True, exist_ok=True)
    for i, frames in enumerate(episodes):
        doc = {"frames": [_encode_frame(f) for f in frames]}
        (root / "episodes" / f"ep_{i:06d}.bin").write_bytes(mpack.packb(doc))
    manifest = {
        "name": name,
        "robot_type": tag.name,
        "native_dof": tag.native_dof,
        "control_mode": tag.control_mode,
        "fps": fps,
        "episode_count": len(episodes),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))


def store_statistics(store: EpisodeStore) -> DatasetStatistics:
    """Per-dataset statistics over native dims; persisted next to checkpoints."""
    return codec.compute_statistics(store.all_chunks(), dims=store.tag.native_dof)


# ---------------------------------------------------------------------------
# mixture sampling


def _chunk_from_episode(frames: list[Frame], start: int, k: int) -> np.ndarray:
    rows = []
    for i in range(start, start + k):
        rows.append(frames[min(i, len(frames) - 1)].action)  # repeat-last padding
    return np.stack(rows)


def sample_batch(
    stores: dict[str, EpisodeStore],
    stats: dict[str, DatasetStatistics],
    spec: MixtureSpec,
    batch_size: int,
    k: int,
    step: int,
    draw_offset: int = 0,
) -> list[TrainSample]:
    """Deterministic batch at (spec.seed, step): dataset per draw by weight,
    episode/start uniform, actions normalized with the source dataset's stats
    and padded to the unified width."""
    entries = [e for e in spec.entries]
    for e in entries:
        if e.name not in stores:
            raise SpecError(f"mixture references unknown dataset {e.name!r}")
    weights = np.array([e.weight for e in entries], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise SpecError("mixture weights sum to zero")
    cumulative = np.cumsum(weights / total)

    batch: list[TrainSample] = []
    for draw in range(batch_size):
        rng = nnet.derive_rng(spec.seed, step, draw_offset + draw, 0xDA7A)
        u = rng.random()
        idx = int(np.searchsorted(cumulative, u, side="right"))
        idx = min(idx, len(entries) - 1)
        store = stores[entries[idx].name]
        ep = int(rng.integers(store.episode_count))
        frames = store.episode(ep)
        start = int(rng.integers(len(frames)))
        native = ActionChunk.unnormalized(_chunk_from_episode(frames, start, k))
        norm = codec.normalize(native, stats[entries[idx].name])
        unified = codec.pad_to_unified(norm, store.tag)
        nxt = frames[min(start + 1, len(frames) - 1)].obs
        batch.append(
            TrainSample(obs=frames[start].obs, chunk=unified, tag=store.tag,
                        next_obs=nxt)
        )
    return batch
