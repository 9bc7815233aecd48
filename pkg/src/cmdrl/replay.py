"""Episode store plus segment enumeration and mixed relabel sampling.

Training draws (episode, k, j) triples uniformly by default; exhaustive pair
enumeration is kept for small-T exactness checks and verification, since the
full set grows as T(T+1)/2.
"""

from __future__ import annotations

import threading

import numpy as np

from .core import (
    MORETHAN_FRACTIONS,
    Episode,
    HorizonScheme,
    SegmentSample,
    load_episodes,
    relabel_goal,
    relabel_morethan,
    relabel_segment,
    save_episodes,
)

SELECTION_POLICIES = ("all", "top_k_by_return", "recent_w")


class NoDataError(RuntimeError):
    """Sampling was asked for but the buffer holds no episodes."""


class ReplayBuffer:
    """Ordered episode store with an eviction policy.

    all: keep everything (capacity must be None).
    top_k_by_return: evict the lowest-return episode first (oldest among ties),
        biasing retention toward the most rewarding trials.
    recent_w: plain FIFO window of the last ``capacity`` episodes.

    Thread contract: one writer, any number of readers; ``snapshot()`` hands
    readers a consistent view.
    """

    def __init__(self, capacity: int | None = None, selection: str = "all"):
        if selection not in SELECTION_POLICIES:
            raise ValueError(f"unknown selection policy {selection!r}")
        if selection == "all" and capacity is not None:
            raise ValueError("selection 'all' never evicts; leave capacity unset")
        if selection != "all" and (capacity is None or capacity < 1):
            raise ValueError(f"selection {selection!r} needs a positive capacity")
        self.capacity = capacity
        self.selection = selection
        self._episodes: list[Episode] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._episodes)

    def add_episode(self, episode: Episode) -> None:
        with self._lock:
            self._episodes.append(episode)
            if self.capacity is not None and len(self._episodes) > self.capacity:
                if self.selection == "recent_w":
                    self._episodes.pop(0)
                else:  # top_k_by_return
                    worst = min(range(len(self._episodes)),
                                key=lambda i: (self._episodes[i].scalar_return(), -i))
                    self._episodes.pop(worst)

    def snapshot(self) -> tuple[Episode, ...]:
        """Consistent read view; safe to iterate while the writer appends."""
        with self._lock:
            return tuple(self._episodes)

    def returns(self) -> list[float]:
        return [ep.scalar_return() for ep in self.snapshot()]

    def min_return(self) -> float:
        rs = self.returns()
        if not rs:
            raise NoDataError("buffer is empty")
        return min(rs)

    def best_return(self) -> float:
        rs = self.returns()
        if not rs:
            raise NoDataError("buffer is empty")
        return max(rs)

    def save(self, path) -> None:
        save_episodes(path, self.snapshot())

    def load(self, path) -> None:
        for ep in load_episodes(path):
            self.add_episode(ep)


def enumerate_pairs(T: int) -> list[tuple[int, int]]:
    """All segment index pairs (k, j), 1 <= k <= j <= T, lexicographic.

    Exactly T(T+1)/2 of them.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    return [(k, j) for k in range(1, T + 1) for j in range(k, T + 1)]


def sample_batch(
    buffer: ReplayBuffer,
    batch_size: int,
    mix: tuple[float, float, float],
    scheme: HorizonScheme,
    rng: np.random.Generator,
    morethan_fractions: tuple[float, ...] = MORETHAN_FRACTIONS,
    exact_relabeler=None,
    episodes: tuple[Episode, ...] | None = None,
) -> list[SegmentSample]:
    """Draw relabeled training samples from the buffer.

    mix gives the (exact, morethan, goal) relabeler fractions and must sum
    to 1. Each draw picks an episode uniformly, then k uniform in 1..T, then
    j uniform in k..T. ``exact_relabeler`` swaps the exact-reward relabeler
    for a drop-in alternative (e.g. an expected-reward one for stochastic
    worlds); it receives (episode, k, j, scheme). Callers that need the drawn
    refs to resolve against a consistent view may pass the snapshot to use.
    """
    if episodes is None:
        episodes = buffer.snapshot()
    if not episodes:
        raise NoDataError("cannot sample from an empty buffer")
    mix = tuple(float(f) for f in mix)
    if len(mix) != 3 or any(f < 0 for f in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise ValueError("mix must be three non-negative fractions summing to 1")
    if exact_relabeler is None:
        exact_relabeler = relabel_segment
    cut_exact = mix[0]
    cut_morethan = mix[0] + mix[1]
    out: list[SegmentSample] = []
    for _ in range(batch_size):
        ep = episodes[int(rng.integers(len(episodes)))]
        T = ep.length
        k = 1 + int(rng.integers(T))
        j = k + int(rng.integers(T - k + 1))
        u = rng.random()
        if u < cut_exact:
            out.append(exact_relabeler(ep, k, j, scheme))
        elif u < cut_morethan:
            frac = morethan_fractions[int(rng.integers(len(morethan_fractions)))]
            out.append(relabel_morethan(ep, k, j, frac, scheme))
        else:
            out.append(relabel_goal(ep, k, j, scheme))
    return out
