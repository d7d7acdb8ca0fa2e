"""Trajectory containers and their CSV/JSONL serialization.

``Path`` is the cadlag step function produced by the discrete engines:
ordered breakpoints, state constant between them, first breakpoint at time 0.
``ContinuousPath`` is a time-grid trajectory from the continuous integrators
(with optional jump flags).  The CSV schema is fixed to header
``t,z_1,...,z_d`` with one row per breakpoint, UTF-8, LF line endings; when a
file holds several paths their blocks are concatenated and a row with t = 0
starts a new path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Path:
    """Piecewise-constant trajectory with integer states."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.atleast_2d(np.asarray(self.states, dtype=np.int64))
        if t.shape[0] != s.shape[0]:
            raise ValueError("times and states length mismatch")
        if t.shape[0] == 0 or t[0] != 0.0:
            raise ValueError("first breakpoint must be at time 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoint times must be strictly increasing")
        if np.any(s < 0):
            raise ValueError("states must be componentwise nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        """State at time t (right-continuous lookup)."""
        if t < 0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[k]

    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class ContinuousPath:
    """Grid trajectory with nonnegative real states.

    ``jump_flags[k]`` marks steps on which at least one jump fired;
    ``clamped_fraction`` is the share of (step, coordinate) pairs the
    integrator clamped back to zero.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float
    jump_flags: np.ndarray | None = None
    clamped_fraction: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        if t.shape[0] != s.shape[0]:
            raise ValueError("times and states length mismatch")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def value_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(k, 0)]

    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class Event:
    """One engine event: a reproduction replaces a type-i individual by the
    offspring vector; an interaction adds or removes one type-j individual."""

    time: float
    kind: str  # "reproduction" | "interaction"
    i: int
    pre_state: np.ndarray
    offspring: np.ndarray | None = None  # reproduction only
    j: int | None = None  # interaction only
    sign: int | None = None  # interaction only


@dataclass
class EventLog:
    events: list[Event] = field(default_factory=list)

    def append(self, event: Event) -> None:
        self.events.append(event)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


def replay_event_log(z, log: EventLog, horizon: float) -> Path:
    """Rebuild the trajectory by applying the log's events to z."""
    d = len(z)
    state = np.asarray(z, dtype=np.int64).copy()
    times = [0.0]
    states = [state.copy()]
    for ev in log:
        if not np.array_equal(ev.pre_state, state):
            raise ValueError(f"event at t={ev.time} does not chain from current state")
        if ev.kind == "reproduction":
            state[ev.i] -= 1
            state += ev.offspring
        elif ev.kind == "interaction":
            state[ev.j] += ev.sign
            if state[ev.j] < 0:
                state[ev.j] = 0
        else:
            raise ValueError(f"unknown event kind {ev.kind!r}")
        times.append(ev.time)
        states.append(state.copy())
    return Path(np.array(times), np.array(states), horizon)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _format_value(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_header(d: int) -> str:
    return "t," + ",".join(f"z_{j + 1}" for j in range(d))


def write_paths_csv(paths: Iterable[Path | ContinuousPath], fh: IO[str]) -> None:
    """Fixed schema: header ``t,z_1,...,z_d``, one row per breakpoint."""
    first = True
    for path in paths:
        if first:
            fh.write(csv_header(path.d) + "\n")
            first = False
        for t, row in zip(path.times, path.states):
            fh.write(_format_value(t) + "," + ",".join(_format_value(v) for v in row) + "\n")


def write_paths_jsonl(paths: Iterable[Path | ContinuousPath], fh: IO[str]) -> None:
    for k, path in enumerate(paths):
        for t, row in zip(path.times, path.states):
            rec = {"path": k, "t": float(t), "z": [float(v) for v in row]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_events_jsonl(log: EventLog, fh: IO[str]) -> None:
    for ev in log:
        rec = {
            "t": float(ev.time),
            "kind": ev.kind,
            "i": ev.i,
            "pre_state": [int(v) for v in ev.pre_state],
        }
        if ev.kind == "reproduction":
            rec["offspring"] = [int(v) for v in ev.offspring]
        else:
            rec["j"] = ev.j
            rec["sign"] = ev.sign
        fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
