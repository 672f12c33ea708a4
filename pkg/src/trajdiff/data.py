"""Trajectory windows: synthetic generation, ETH/UCY text ingestion, checkpoints."""

from __future__ import annotations

import io
import json
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FRAME_INTERVAL_S = 0.4
DEFAULT_T_INIT = 8
DEFAULT_T_PRED = 12


class DataFormatError(ValueError):
    """Raised for malformed scene files."""


class CheckpointError(ValueError):
    """Raised for unreadable, truncated or incompatible checkpoint files."""


@dataclass(frozen=True)
class TrajectoryWindow:
    """Observed path ``x`` and future ``y``, both relative to ``origin``.

    ``origin`` is the last observed position in scene units, so ``x[-1]`` is
    the zero vector.
    """

    x: np.ndarray
    y: np.ndarray
    origin: np.ndarray
    scene: str = ""
    agent: int = -1
    start_frame: int = -1
    meta: dict = field(default_factory=dict, compare=False)

    def scene_x(self) -> np.ndarray:
        return self.x + self.origin

    def scene_y(self) -> np.ndarray:
        return self.y + self.origin


def normalize(x: np.ndarray, y: np.ndarray):
    """Translate a (history, future) pair so the last observed point is the origin."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    origin = x[-1].copy()
    return x - origin, y - origin, origin


def denormalize(points: np.ndarray, origin: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) + origin


def make_window(x, y, scene: str = "", agent: int = -1, start_frame: int = -1,
                meta: dict | None = None) -> TrajectoryWindow:
    xn, yn, origin = normalize(x, y)
    return TrajectoryWindow(xn, yn, origin, scene, agent, start_frame, dict(meta or {}))


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(X, Y, origins)`` arrays of shapes (n, T_init, 2), (n, T_pred, 2), (n, 2)."""
    windows = list(windows)
    if not windows:
        raise ValueError("no windows to stack")
    return (np.stack([w.x for w in windows]), np.stack([w.y for w in windows]),
            np.stack([w.origin for w in windows]))


# ---------------------------------------------------------------------------
# synthetic multi-modal data


@dataclass(frozen=True)
class SyntheticSpec:
    """Agents walk straight along +x, then follow one of ``modes`` constant-turn arcs.

    Turn rates are evenly spaced in ``[-turn_rate, turn_rate]`` (a single mode
    walks straight). Walking speed is drawn per agent from
    ``speed * [1 - speed_jitter, 1 + speed_jitter]``; every position then gets
    isotropic Gaussian jitter of std ``noise``.
    """

    modes: int = 3
    noise: float = 0.02
    speed: float = 0.3
    speed_jitter: float = 0.2
    turn_rate: float = 0.15
    T_init: int = DEFAULT_T_INIT
    T_pred: int = DEFAULT_T_PRED

    def turn_rates(self) -> np.ndarray:
        if self.modes == 1:
            return np.zeros(1)
        return np.linspace(-self.turn_rate, self.turn_rate, self.modes)


def _arc(speed: float, turn: float, steps: int) -> np.ndarray:
    """Positions after 1..steps frames starting at the origin heading +x."""
    headings = turn * np.arange(1, steps + 1)
    steps_xy = speed * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    return np.cumsum(steps_xy, axis=0)


def mode_centerlines(spec: SyntheticSpec, speed: float) -> np.ndarray:
    """Noise-free futures of every mode, ``(modes, T_pred, 2)``, relative to the last observation."""
    return np.stack([_arc(speed, w, spec.T_pred) for w in spec.turn_rates()])


def mode_half_width(spec: SyntheticSpec, speed: float) -> float:
    """Half the smallest ADE between two mode centerlines (inf for a single mode)."""
    lines = mode_centerlines(spec, speed)
    if len(lines) < 2:
        return float("inf")
    best = np.inf
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            best = min(best, float(np.linalg.norm(lines[i] - lines[j], axis=-1).mean()))
    return 0.5 * best


def generate_synthetic(spec: SyntheticSpec, count: int, seed: int) -> list[TrajectoryWindow]:
    """``count`` windows with ``meta = {"mode", "speed"}`` for multi-modality checks."""
    if spec.modes < 1 or count < 0 or spec.noise < 0:
        raise ValueError("modes must be >= 1, count and noise non-negative")
    rng = np.random.default_rng(seed)
    turns = spec.turn_rates()
    windows = []
    for i in range(count):
        speed = spec.speed * (1.0 + spec.speed_jitter * rng.uniform(-1.0, 1.0))
        mode = int(rng.integers(spec.modes))
        history = speed * np.stack([np.arange(-spec.T_init + 1, 1), np.zeros(spec.T_init)], axis=1)
        future = _arc(speed, turns[mode], spec.T_pred)
        x = history + spec.noise * rng.standard_normal(history.shape)
        y = future + spec.noise * rng.standard_normal(future.shape)
        windows.append(make_window(x, y, scene="synthetic", agent=i, start_frame=0,
                                   meta={"mode": mode, "speed": speed}))
    return windows


# ---------------------------------------------------------------------------
# ETH/UCY text scenes


@dataclass(frozen=True)
class RawScene:
    """Rows of ``(frame_id, agent_id, x, y)`` in file order."""

    frames: np.ndarray
    agents: np.ndarray
    xy: np.ndarray
    name: str = ""

    def __len__(self):
        return len(self.frames)


def load_scene(path, format: str = "ethucy-txt") -> RawScene:
    """Parse whitespace-separated ``frame_id agent_id x y`` lines.

    Blank lines and lines starting with ``#`` are skipped. Frame and agent ids
    may be written as floats (``10.0``) but must be integral.
    """
    if format != "ethucy-txt":
        raise ValueError(f"unsupported scene format {format!r}")
    path = Path(path)
    frames, agents, xy = [], [], []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(values)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            frame, agent = values[0], values[1]
            if frame != int(frame) or agent != int(agent):
                raise DataFormatError(f"{path}:{lineno}: frame and agent ids must be integers")
            key = (int(frame), int(agent))
            if key in seen:
                raise DataFormatError(f"{path}:{lineno}: duplicate (frame, agent) {key}")
            seen.add(key)
            frames.append(key[0])
            agents.append(key[1])
            xy.append(values[2:])
    return RawScene(np.array(frames, dtype=np.int64), np.array(agents, dtype=np.int64),
                    np.array(xy, dtype=np.float64).reshape(-1, 2), path.stem)


def save_scene(scene: RawScene, path) -> None:
    with open(path, "w") as fh:
        for f, a, (x, y) in zip(scene.frames, scene.agents, scene.xy):
            fh.write(f"{int(f)}\t{int(a)}\t{float(x)!r}\t{float(y)!r}\n")


def infer_frame_step(scene: RawScene) -> int:
    """Smallest positive frame increment seen along any agent's track."""
    best = None
    for idx in _agent_rows(scene).values():
        d = np.diff(scene.frames[idx])
        d = d[d > 0]
        if d.size:
            m = int(d.min())
            best = m if best is None else min(best, m)
    return best if best is not None else 1


def _agent_rows(scene: RawScene) -> dict[int, list[int]]:
    rows: dict[int, list[int]] = defaultdict(list)
    for i, a in enumerate(scene.agents):
        rows[int(a)].append(i)
    return rows


def agent_segments(scene: RawScene, frame_step: int | None = None) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Contiguous per-agent tracks as ``(agent, frames, xy)``.

    A track is split wherever the frame id does not advance by exactly
    ``frame_step`` (gaps and non-monotone jumps).
    """
    step = frame_step or infer_frame_step(scene)
    segments = []
    for agent, idx in sorted(_agent_rows(scene).items()):
        idx = np.asarray(idx)
        frames = scene.frames[idx]
        breaks = np.flatnonzero(np.diff(frames) != step) + 1
        for part in np.split(np.arange(len(idx)), breaks):
            segments.append((agent, frames[part], scene.xy[idx[part]]))
    return segments


def make_windows(scene: RawScene, T_init: int = DEFAULT_T_INIT, T_pred: int = DEFAULT_T_PRED,
                 stride: int = 1, frame_step: int | None = None) -> list[TrajectoryWindow]:
    """Sliding ``T_init + T_pred`` windows over every contiguous agent segment."""
    if stride < 1:
        raise ValueError("stride must be positive")
    total = T_init + T_pred
    windows = []
    for agent, frames, xy in agent_segments(scene, frame_step):
        for start in range(0, len(frames) - total + 1, stride):
            chunk = xy[start:start + total]
            windows.append(make_window(chunk[:T_init], chunk[T_init:], scene=scene.name,
                                       agent=agent, start_frame=int(frames[start])))
    return windows


def leave_one_out_splits(paths):
    """Yield ``(held_out, train_paths, test_paths)`` with each named scene held out once."""
    paths = [Path(p) for p in paths]
    for i, held in enumerate(paths):
        yield held.stem, paths[:i] + paths[i + 1:], [held]


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; each epoch is a fresh permutation, tail dropped."""
    if n < batch_size:
        raise ValueError(f"dataset of {n} windows is smaller than one batch ({batch_size})")
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian):
#   bytes 0..7    magic b"TRAJDIFF"
#   bytes 8..11   uint32 format version
#   bytes 12..19  uint64 header length H
#   next H bytes  UTF-8 JSON header, keys sorted, compact separators
#   remainder     parameter payload, float64 little-endian, concatenated in
#                 header["params"] order, each C-ordered with its "shape"
# The header also carries "model", "schedule", "seed", "step" and "extra".

CHECKPOINT_MAGIC = b"TRAJDIFF"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    model: dict
    schedule: dict
    params: dict[str, np.ndarray]
    seed: int = 0
    step: int = 0
    extra: dict = field(default_factory=dict)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    entries = []
    payload = io.BytesIO()
    for name, value in ckpt.params.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        payload.write(arr.tobytes())
    header = {
        "model": ckpt.model,
        "schedule": ckpt.schedule,
        "seed": int(ckpt.seed),
        "step": int(ckpt.step),
        "extra": ckpt.extra,
        "params": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return (CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head))
            + head + payload.getvalue())


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    prefix = len(CHECKPOINT_MAGIC) + 12
    if len(raw) < prefix or raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<IQ", raw[len(CHECKPOINT_MAGIC):prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported "
                              f"(expected {CHECKPOINT_VERSION})")
    if len(raw) < prefix + head_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[prefix:prefix + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    body = memoryview(raw)[prefix + head_len:]
    params = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(body):
            raise CheckpointError(f"{path}: truncated payload at parameter {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(body[offset:offset + nbytes], dtype="<f8") \
            .reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes after payload")
    return Checkpoint(header["model"], header["schedule"], params, header["seed"],
                      header["step"], header.get("extra", {}))
