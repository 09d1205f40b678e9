"""Online and expert replay stores with constant-reward relabeling.

Rewards handed to the learner are *training* rewards: 0 for anything drawn
from the online buffer and 1 for anything drawn from the expert buffer. The
environment reward is stored alongside for logging and never overwritten.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from silcr.nn import ConfigurationError

ONLINE_REWARD = 0.0
EXPERT_REWARD = 1.0


class NotReadyError(RuntimeError):
    """Sampling from a buffer that holds no data."""


class DemoFileError(ValueError):
    """A demonstration file is missing or malformed."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward_env: float
    next_state: np.ndarray
    terminated: bool = False
    truncated: bool = False


@dataclass
class Trajectory:
    transitions: list[Transition]
    episodic_return: float | None = None

    def __post_init__(self) -> None:
        if not self.transitions:
            raise ValueError("a trajectory needs at least one transition")
        total = sum(t.reward_env for t in self.transitions)
        if self.episodic_return is None:
            self.episodic_return = total
        elif self.episodic_return != total:
            raise ValueError(f"episodic_return {self.episodic_return} != reward sum {total}")
        self._arrays: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.transitions)

    def arrays(self) -> dict[str, np.ndarray]:
        if self._arrays is None:
            ts = self.transitions
            self._arrays = {
                "states": np.array([t.state for t in ts], dtype=np.float64),
                "actions": np.array([t.action for t in ts], dtype=np.float64),
                "reward_env": np.array([t.reward_env for t in ts], dtype=np.float64),
                "next_states": np.array([t.next_state for t in ts], dtype=np.float64),
                "terminated": np.array([t.terminated for t in ts], dtype=bool),
                "truncated": np.array([t.truncated for t in ts], dtype=bool),
            }
        return self._arrays


@dataclass
class Batch:
    """Column-wise transitions; ``rewards`` are the rewards used for training."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    reward_env: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    @classmethod
    def concat(cls, parts: Sequence["Batch"]) -> "Batch":
        return cls(**{
            name: np.concatenate([getattr(p, name) for p in parts])
            for name in cls.__dataclass_fields__
        })


_FIELDS = ("states", "actions", "reward_env", "next_states", "terminated", "truncated")


def _gather(arrays: dict[str, np.ndarray], idx: np.ndarray, reward: float | None) -> Batch:
    env_r = arrays["reward_env"][idx]
    rewards = env_r.copy() if reward is None else np.full(len(idx), reward)
    return Batch(
        states=arrays["states"][idx],
        actions=arrays["actions"][idx],
        rewards=rewards,
        next_states=arrays["next_states"][idx],
        terminated=arrays["terminated"][idx],
        truncated=arrays["truncated"][idx],
        reward_env=env_r,
    )


class OnlineBuffer:
    """FIFO ring of transitions; the oldest transition is evicted first."""

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigurationError(f"online capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self._data: dict[str, np.ndarray] | None = None
        self._next = 0
        self._size = 0
        self.total_stored = 0

    def __len__(self) -> int:
        return self._size

    def _allocate(self, sample: dict[str, np.ndarray]) -> None:
        self._data = {
            name: np.empty((self.capacity,) + sample[name].shape[1:], dtype=sample[name].dtype)
            for name in _FIELDS
        }

    def store(self, traj: Trajectory) -> None:
        arrays = traj.arrays()
        if self._data is None:
            self._allocate(arrays)
        n = len(traj)
        # only the last `capacity` rows can survive
        start = max(0, n - self.capacity)
        pos = (self._next + start) % self.capacity
        idx = (pos + np.arange(n - start)) % self.capacity
        for name in _FIELDS:
            self._data[name][idx] = arrays[name][start:]
        self._next = (self._next + n) % self.capacity
        self._size = min(self.capacity, self._size + n)
        self.total_stored += n

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        if self._data is None:
            return []
        first = (self._next - self._size) % self.capacity
        order = (first + np.arange(self._size)) % self.capacity
        d = self._data
        return [
            Transition(d["states"][i].copy(), d["actions"][i].copy(), float(d["reward_env"][i]),
                       d["next_states"][i].copy(), bool(d["terminated"][i]), bool(d["truncated"][i]))
            for i in order
        ]

    def sample(self, n: int, rng: np.random.Generator, relabel: bool = True) -> Batch:
        """Uniform sample with replacement.

        With ``relabel`` the training reward is 0; otherwise it is the stored
        environment reward (plain SAC).
        """
        if self._size == 0:
            raise NotReadyError("online buffer is empty")
        idx = rng.integers(0, self._size, size=n)
        return _gather(self._data, idx, ONLINE_REWARD if relabel else None)


class ExpertBuffer:
    """Keeps the highest-return trajectories seen so far, up to ``capacity`` transitions.

    Priority is ``(episodic_return, arrival order)``, so on equal returns the
    older trajectory goes first. After each offer the lowest-priority
    trajectories are dropped until the transition count fits; a lone
    trajectory longer than ``capacity`` is kept. Once a trajectory has been
    dropped, later offers ranked below it are refused, which makes the
    retained set equal to the longest fitting prefix of all offers sorted by
    priority.
    """

    def __init__(self, capacity: int = 50_000, frozen: bool = False):
        if capacity < 1:
            raise ConfigurationError(f"expert capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.frozen = frozen
        self._heap: list[tuple[float, int, Trajectory]] = []
        self._counter = itertools.count()
        self._barrier: tuple[float, int] | None = None
        self._total = 0
        self._arrays: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return self._total

    @property
    def num_trajectories(self) -> int:
        return len(self._heap)

    @property
    def min_return(self) -> float:
        return self._heap[0][0] if self._heap else float("nan")

    @property
    def max_return(self) -> float:
        return max(e[0] for e in self._heap) if self._heap else float("nan")

    def trajectories(self) -> list[Trajectory]:
        """Retained trajectories, best first."""
        return [e[2] for e in sorted(self._heap, reverse=True, key=lambda e: (e[0], e[1]))]

    def offer(self, traj: Trajectory) -> bool:
        """Insert ``traj`` if it ranks high enough; return whether it is retained."""
        if self.frozen:
            raise RuntimeError("expert buffer is frozen")
        key = (traj.episodic_return, next(self._counter))
        if self._barrier is not None and key < self._barrier:
            return False
        heapq.heappush(self._heap, (key[0], key[1], traj))
        self._total += len(traj)
        accepted = True
        while self._total > self.capacity and len(self._heap) > 1:
            ret, order, dropped = heapq.heappop(self._heap)
            self._total -= len(dropped)
            self._barrier = (ret, order)
            if order == key[1]:
                accepted = False
        self._arrays = None
        return accepted

    def _sample_arrays(self) -> dict[str, np.ndarray]:
        if self._arrays is None:
            parts = [e[2].arrays() for e in self._heap]
            self._arrays = {name: np.concatenate([p[name] for p in parts]) for name in _FIELDS}
        return self._arrays

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sample with replacement over stored transitions, training reward 1."""
        if self._total == 0:
            raise NotReadyError("expert buffer is empty")
        arrays = self._sample_arrays()
        idx = rng.integers(0, self._total, size=n)
        return _gather(arrays, idx, EXPERT_REWARD)

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory], capacity: int | None = None,
                          frozen: bool = True) -> "ExpertBuffer":
        trajectories = list(trajectories)
        if capacity is None:
            capacity = max(1, sum(len(t) for t in trajectories))
        buf = cls(capacity)
        for t in trajectories:
            buf.offer(t)
        buf.frozen = frozen
        return buf


def make_training_batch(online: OnlineBuffer, expert: ExpertBuffer, batch_size: int,
                        rng: np.random.Generator) -> Batch:
    """Half online transitions (reward 0) followed by half expert transitions (reward 1)."""
    if batch_size % 2 != 0 or batch_size < 0:
        raise ConfigurationError("batch size must be even")
    if len(expert) == 0:
        raise NotReadyError("expert buffer is empty")
    half = batch_size // 2
    return Batch.concat([online.sample(half, rng), expert.sample(half, rng)])


# -- demonstration files ----------------------------------------------------
#
# One JSON object per line. A trajectory starts with a header line
#   {"trajectory": i, "length": n, "episodic_return": R}
# followed by n transition lines with the fields of `Transition`.


def _floats(x: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(x).ravel()]


def write_demos(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    lines = []
    for i, traj in enumerate(trajectories):
        lines.append(json.dumps({"trajectory": i, "length": len(traj),
                                 "episodic_return": float(traj.episodic_return)}))
        for t in traj.transitions:
            lines.append(json.dumps({
                "state": _floats(t.state),
                "action": _floats(t.action),
                "reward_env": float(t.reward_env),
                "next_state": _floats(t.next_state),
                "terminated": bool(t.terminated),
                "truncated": bool(t.truncated),
            }))
    Path(path).write_text("\n".join(lines) + "\n")


def read_demos(path: str | Path) -> list[Trajectory]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DemoFileError(f"cannot read demo file {path}: {exc.strerror}") from None
    trajectories: list[Trajectory] = []
    it = iter(enumerate(lines, 1))
    try:
        for lineno, line in it:
            if not line.strip():
                continue
            header = json.loads(line)
            n = int(header["length"])
            transitions = []
            for _ in range(n):
                lineno, line = next(it)
                rec = json.loads(line)
                transitions.append(Transition(
                    np.asarray(rec["state"], dtype=np.float64),
                    np.asarray(rec["action"], dtype=np.float64),
                    float(rec["reward_env"]),
                    np.asarray(rec["next_state"], dtype=np.float64),
                    bool(rec["terminated"]),
                    bool(rec["truncated"]),
                ))
            trajectories.append(Trajectory(transitions, float(header["episodic_return"])))
    except StopIteration:
        raise DemoFileError(f"{path}: truncated trajectory at end of file") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise DemoFileError(f"{path}:{lineno}: malformed record ({exc})") from None
    if not trajectories:
        raise DemoFileError(f"{path}: no trajectories")
    return trajectories
