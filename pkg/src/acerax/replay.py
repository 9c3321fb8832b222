"""Fixed-capacity ring buffer of transitions and uniform n-step window sampling.

Storage is column-oriented (one preallocated array per field) so the training
loop can gather whole minibatches of windows with fancy indexing instead of
per-transition Python work. Absolute time indices are assigned contiguously at
push time; the oldest transitions are evicted first.

Windows run forward from a sampled start and are cut at episode boundaries:
after a true terminal the bootstrap value is zero, after a time-limit
truncation the stored successor state is kept for bootstrapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import CorruptBufferError

_DUMP_MAGIC = b"ACERAXB0"


@dataclass(frozen=True)
class Transition:
    """One stored experience tuple: state, action, reward, behavior mode and density.

    ``terminal`` marks a true episode end (failure/goal: no successor value);
    ``truncated`` marks a time-limit cut, in which case ``boot_state`` holds
    the real successor state for bootstrapping. ``time_index`` is assigned by
    the buffer.
    """

    s: np.ndarray
    a: np.ndarray
    r: float
    m: np.ndarray
    phi: float
    terminal: bool = False
    truncated: bool = False
    boot_state: np.ndarray | None = None
    time_index: int = -1


@dataclass(frozen=True)
class ReplayWindow:
    """Consecutive transitions i..i+L-1 plus the bootstrap state for step i+L.

    ``boot_state`` is None exactly when the window ends at a true terminal.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    modes: np.ndarray
    phis: np.ndarray
    ends_terminal: bool
    boot_state: np.ndarray | None
    start_index: int

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class WindowBatch:
    """Padded stack of windows; positions at or past ``lengths`` repeat the last valid entry."""

    states: np.ndarray  # (batch, n, state_dim)
    actions: np.ndarray  # (batch, n, action_dim)
    rewards: np.ndarray  # (batch, n)
    modes: np.ndarray  # (batch, n, action_dim)
    phis: np.ndarray  # (batch, n)
    lengths: np.ndarray  # (batch,)
    ends_terminal: np.ndarray  # (batch,) bool
    boot_states: np.ndarray  # (batch, state_dim); rows with ends_terminal are unused
    start_indices: np.ndarray  # (batch,)


class ReplayBuffer:
    """Ring of the most recent ``capacity`` transitions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self._pushes = 0
        c = self.capacity
        self._s = np.zeros((c, state_dim))
        self._a = np.zeros((c, action_dim))
        self._r = np.zeros(c)
        self._m = np.zeros((c, action_dim))
        self._phi = np.zeros(c)
        self._terminal = np.zeros(c, dtype=bool)
        self._truncated = np.zeros(c, dtype=bool)
        self._boot = np.zeros((c, state_dim))

    def __len__(self) -> int:
        return min(self._pushes, self.capacity)

    @property
    def next_time_index(self) -> int:
        return self._pushes

    @property
    def oldest_index(self) -> int:
        return self._pushes - len(self)

    @property
    def newest_index(self) -> int:
        return self._pushes - 1

    def push(self, t: Transition) -> int:
        """Store a transition, evicting the oldest if full. Returns its time index."""
        s = np.asarray(t.s, dtype=np.float64)
        a = np.asarray(t.a, dtype=np.float64)
        m = np.asarray(t.m, dtype=np.float64)
        if s.shape != (self.state_dim,):
            raise ValueError(f"state shape {s.shape}, expected ({self.state_dim},)")
        if a.shape != (self.action_dim,) or m.shape != (self.action_dim,):
            raise ValueError(f"action/mode shape {a.shape}/{m.shape}, expected ({self.action_dim},)")
        if not (np.isfinite(t.phi) and t.phi > 0.0):
            raise CorruptBufferError(f"behavior density must be positive and finite, got {t.phi}")
        if t.terminal and t.truncated:
            raise ValueError("a transition cannot be both terminal and truncated")
        if t.truncated and t.boot_state is None:
            raise ValueError("a truncated transition must carry its successor state")
        idx = self._pushes
        slot = idx % self.capacity
        self._s[slot] = s
        self._a[slot] = a
        self._r[slot] = float(t.r)
        self._m[slot] = m
        self._phi[slot] = float(t.phi)
        self._terminal[slot] = t.terminal
        self._truncated[slot] = t.truncated
        self._boot[slot] = (
            np.asarray(t.boot_state, dtype=np.float64) if t.truncated else 0.0
        )
        self._pushes += 1
        return idx

    def get(self, time_index: int) -> Transition:
        """Retrieve a stored transition by absolute time index."""
        if not self.oldest_index <= time_index < self._pushes:
            raise ValueError(
                f"time index {time_index} outside stored range "
                f"[{self.oldest_index}, {self._pushes})"
            )
        slot = time_index % self.capacity
        truncated = bool(self._truncated[slot])
        return Transition(
            s=self._s[slot].copy(),
            a=self._a[slot].copy(),
            r=float(self._r[slot]),
            m=self._m[slot].copy(),
            phi=float(self._phi[slot]),
            terminal=bool(self._terminal[slot]),
            truncated=truncated,
            boot_state=self._boot[slot].copy() if truncated else None,
            time_index=time_index,
        )

    def ready(self, n: int, minibatch: int = 1) -> bool:
        """Replay is enabled once the buffer can serve full windows and a minibatch."""
        return len(self) >= max(n + 1, minibatch)

    # -- window sampling ---------------------------------------------------

    def _window_shape(self, starts: np.ndarray, n: int):
        """Vectorized admissibility and effective length for candidate start indices.

        A start is admissible when an episode boundary falls inside its first n
        transitions (the window truncates there) or when the transition at
        start+n is stored (it supplies the bootstrap state).
        """
        newest = self.newest_index
        grid = starts[:, None] + np.arange(n)[None, :]
        valid = grid <= newest
        slots = np.minimum(grid, newest) % self.capacity
        ends = (self._terminal[slots] | self._truncated[slots]) & valid
        has_end = ends.any(axis=1)
        first_end = ends.argmax(axis=1)
        lengths = np.where(has_end, first_end + 1, n)
        admissible = has_end | (starts + n <= newest)
        return admissible, lengths

    def admissible_starts(self, n: int) -> np.ndarray:
        """All absolute start indices currently admissible for n-step windows."""
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        if len(self) == 0:
            return np.empty(0, dtype=np.int64)
        starts = np.arange(self.oldest_index, self._pushes, dtype=np.int64)
        admissible, _ = self._window_shape(starts, n)
        return starts[admissible]

    def sample_starts(self, n: int, batch: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``batch`` start indices i.i.d. uniform over the admissible set.

        Rejection sampling over the stored range keeps the draw exactly
        uniform. Returns None when the buffer is not ready yet.
        """
        count = len(self)
        if count < n + 1:
            return None
        oldest = self.oldest_index
        out = np.empty(batch, dtype=np.int64)
        filled = 0
        while filled < batch:
            cand = oldest + rng.integers(0, count, size=batch - filled)
            admissible, _ = self._window_shape(cand, n)
            good = cand[admissible]
            out[filled : filled + good.size] = good
            filled += good.size
        return out

    def sample_window(self, n: int, rng: np.random.Generator) -> ReplayWindow | None:
        """One uniformly sampled n-step window, or None while the buffer is not ready."""
        starts = self.sample_starts(n, 1, rng)
        if starts is None:
            return None
        batch = self.gather(starts, n)
        length = int(batch.lengths[0])
        terminal = bool(batch.ends_terminal[0])
        return ReplayWindow(
            states=batch.states[0, :length].copy(),
            actions=batch.actions[0, :length].copy(),
            rewards=batch.rewards[0, :length].copy(),
            modes=batch.modes[0, :length].copy(),
            phis=batch.phis[0, :length].copy(),
            ends_terminal=terminal,
            boot_state=None if terminal else batch.boot_states[0].copy(),
            start_index=int(starts[0]),
        )

    def gather(self, starts: np.ndarray, n: int) -> WindowBatch:
        """Stack the windows at ``starts`` into padded arrays for batched math."""
        starts = np.asarray(starts, dtype=np.int64)
        admissible, lengths = self._window_shape(starts, n)
        if not admissible.all():
            bad = starts[~admissible][0]
            raise ValueError(f"start index {bad} has no admissible window")
        # Clamp the index grid at each window's last valid transition so padded
        # positions hold real (masked-out later) data.
        grid = starts[:, None] + np.minimum(np.arange(n)[None, :], lengths[:, None] - 1)
        slots = grid % self.capacity
        last_slot = (starts + lengths - 1) % self.capacity
        ends_terminal = self._terminal[last_slot]
        truncated = self._truncated[last_slot]
        # Bootstrap state: successor transition's state for full windows, the
        # stored successor for time-limit cuts, unused for true terminals.
        boot = self._s[(starts + lengths) % self.capacity].copy()
        if truncated.any():
            boot[truncated] = self._boot[last_slot[truncated]]
        return WindowBatch(
            states=self._s[slots],
            actions=self._a[slots],
            rewards=self._r[slots],
            modes=self._m[slots],
            phis=self._phi[slots],
            lengths=lengths,
            ends_terminal=ends_terminal,
            boot_states=boot,
            start_indices=starts.copy(),
        )

    # -- debugging ----------------------------------------------------------

    def dump(self, path) -> None:
        """Write raw buffer contents (little-endian f64 arrays) for offline inspection.

        Debug aid only; the layout is not a stability-guaranteed format.
        """
        import struct

        with open(path, "wb") as f:
            f.write(_DUMP_MAGIC)
            f.write(
                struct.pack(
                    "<4q", self._pushes, self.capacity, self.state_dim, self.action_dim
                )
            )
            for arr in (self._s, self._a, self._r, self._m, self._phi, self._boot):
                f.write(arr.astype("<f8").tobytes())
            f.write(self._terminal.astype("<u1").tobytes())
            f.write(self._truncated.astype("<u1").tobytes())
