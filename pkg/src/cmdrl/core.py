"""Core domain types and hindsight relabeling arithmetic.

Conventions used throughout the package:

* Steps within an episode are 1-indexed: t = 1..T.
* ``Transition`` t stores the action taken at step t-1 (``prev_action``,
  zeros for t=1), the observation at step t, and the reward *caused by the
  action taken at step t*. Storing the consequence-reward with the step that
  caused it makes every segment sum an inclusive slice ``k..j`` with no
  off-by-one bookkeeping.
* The reward component of a network input at step t is the reward observed
  *entering* step t, i.e. the consequence of step t-1 (zeros at t=1). Use
  :meth:`Episode.reward_input_at`.
* A segment (k, j) with 1 <= k <= j <= T covers the actions taken at steps
  k..j. Its command horizon counts the steps remaining *after* the current
  action: ``raw_steps = j - k``, so a single-step segment has horizon 0.

The task-defining side channel of every network input is the concatenation
``[morethan, marker, goal_obs-or-zeros]``, width 2 + m.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

#: Fractions used when relabeling a segment as a lower-bound ("morethan") command.
MORETHAN_FRACTIONS = (0.5, 0.75, 0.875)

HORIZON_KINDS = ("identity", "harmonic", "discounted")


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Transition:
    """One interaction step.

    prev_action: action taken at the previous step (one-hot for discrete
        actions, raw values for continuous ones); zeros at the first step.
    observation: sensory input at this step.
    reward: reward received as a consequence of the action taken *at this
        step* (arrives one tick later in wall-clock terms).
    """

    prev_action: np.ndarray
    observation: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prev_action", _freeze(self.prev_action))
        object.__setattr__(self, "observation", _freeze(self.observation))
        object.__setattr__(self, "reward", _freeze(self.reward))


@dataclass(frozen=True)
class Episode:
    """A completed trial: an ordered sequence of transitions plus caches.

    ``final_observation`` is the observation that followed the last action
    (needed when a goal command points one step past a segment end) and
    ``final_action`` is the action taken at step T, which no transition's
    ``prev_action`` records.
    """

    transitions: tuple[Transition, ...]
    final_observation: np.ndarray
    final_action: np.ndarray
    total_reward: np.ndarray
    env_id: str
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "final_observation", _freeze(self.final_observation))
        object.__setattr__(self, "final_action", _freeze(self.final_action))
        object.__setattr__(self, "total_reward", _freeze(self.total_reward))
        if len(self.transitions) < 1:
            raise ValueError("episode must contain at least one transition")
        sum_r = np.sum([tr.reward for tr in self.transitions], axis=0)
        if not np.allclose(sum_r, self.total_reward, atol=1e-9):
            raise ValueError("total_reward does not match the sum of transition rewards")

    @property
    def length(self) -> int:
        return len(self.transitions)

    @property
    def ref(self) -> str:
        return f"{self.env_id}/{self.seed}"

    def scalar_return(self) -> float:
        """Episode return collapsed to a float (sum over reward components)."""
        return float(np.sum(self.total_reward))

    def action_at(self, k: int) -> np.ndarray:
        """Action taken at step k (1-indexed)."""
        self._check_step(k)
        if k < self.length:
            return self.transitions[k].prev_action
        return self.final_action

    def observation_at(self, k: int) -> np.ndarray:
        self._check_step(k)
        return self.transitions[k - 1].observation

    def observation_after(self, j: int) -> np.ndarray:
        """Observation following step j's action (episode-final for j = T)."""
        self._check_step(j)
        if j < self.length:
            return self.transitions[j].observation
        return self.final_observation

    def reward_input_at(self, k: int) -> np.ndarray:
        """Reward observed entering step k: consequence of step k-1, zeros at k=1."""
        self._check_step(k)
        if k == 1:
            return np.zeros_like(self.transitions[0].reward)
        return self.transitions[k - 2].reward

    def reward_sum(self, k: int, j: int) -> np.ndarray:
        """Componentwise reward sum over the segment's actions, steps k..j inclusive."""
        self._check_pair(k, j)
        out = np.zeros_like(np.asarray(self.transitions[0].reward))
        for tr in self.transitions[k - 1 : j]:
            out = out + tr.reward
        return out

    def _check_step(self, k: int) -> None:
        if not 1 <= k <= self.length:
            raise IndexError(f"step {k} out of range 1..{self.length}")

    def _check_pair(self, k: int, j: int) -> None:
        if not 1 <= k <= j <= self.length:
            raise IndexError(f"pair ({k}, {j}) out of range for T={self.length}")

    # -- array/JSON forms ---------------------------------------------------

    @staticmethod
    def from_arrays(
        observations: Sequence,
        actions: Sequence,
        rewards: Sequence,
        env_id: str,
        seed: int,
    ) -> "Episode":
        """Build an episode from step arrays.

        observations has length T+1 (includes the final observation),
        actions and rewards have length T; rewards[t] is the consequence of
        actions[t].
        """
        obs = [np.asarray(o, dtype=np.float64) for o in observations]
        acts = [np.asarray(a, dtype=np.float64) for a in actions]
        rews = [np.atleast_1d(np.asarray(r, dtype=np.float64)) for r in rewards]
        T = len(acts)
        if len(rews) != T or len(obs) != T + 1:
            raise ValueError("need T actions, T rewards and T+1 observations")
        zeros_a = np.zeros_like(acts[0])
        transitions = [
            Transition(
                prev_action=acts[t - 1] if t > 0 else zeros_a,
                observation=obs[t],
                reward=rews[t],
            )
            for t in range(T)
        ]
        return Episode(
            transitions=tuple(transitions),
            final_observation=obs[T],
            final_action=acts[T - 1],
            total_reward=np.sum(rews, axis=0),
            env_id=env_id,
            seed=seed,
        )

    def to_arrays(self) -> dict:
        observations = [tr.observation for tr in self.transitions] + [self.final_observation]
        actions = [self.transitions[t].prev_action for t in range(1, self.length)] + [
            self.final_action
        ]
        rewards = [tr.reward for tr in self.transitions]
        return {
            "env_id": self.env_id,
            "seed": self.seed,
            "observations": [o.tolist() for o in observations],
            "actions": [a.tolist() for a in actions],
            "rewards": [r.tolist() for r in rewards],
        }


def episode_to_json(episode: Episode) -> str:
    return json.dumps(episode.to_arrays())


def episode_from_json(line: str) -> Episode:
    rec = json.loads(line)
    return Episode.from_arrays(
        rec["observations"], rec["actions"], rec["rewards"], rec["env_id"], int(rec["seed"])
    )


def save_episodes(path, episodes: Iterable[Episode]) -> None:
    """Write episodes as line-delimited JSON, one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(episode_to_json(ep))
            fh.write("\n")


def load_episodes(path) -> list[Episode]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(episode_from_json(line))
    return out


# ---------------------------------------------------------------------------
# Horizon encodings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HorizonScheme:
    """How a raw look-ahead step count is encoded for the network.

    identity:   steps
    harmonic:   sum_{tau=1..steps} 1/tau        (grows like log steps)
    discounted: sum_{tau=1..steps} gamma^tau tau (bounded by gamma/(1-gamma)^2)

    The encoded value is divided by ``scale`` before it reaches the network;
    pick scale near the maximum episode length so inputs sit around [0, 1].
    """

    kind: str = "identity"
    gamma: float = 0.9
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in HORIZON_KINDS:
            raise ValueError(f"unknown horizon kind {self.kind!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")


#: Width of the encoded horizon vector. All shipped encodings are scalar.
HORIZON_WIDTH = 1


def encode_horizon(steps: int, scheme: HorizonScheme) -> np.ndarray:
    """Encode a non-negative step count under the given scheme. steps=0 -> [0.]."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return np.zeros(HORIZON_WIDTH)
    if scheme.kind == "identity":
        value = float(steps)
    elif scheme.kind == "harmonic":
        value = float(np.sum(1.0 / np.arange(1, steps + 1)))
    else:  # discounted
        tau = np.arange(1, steps + 1, dtype=np.float64)
        value = float(np.sum(scheme.gamma**tau * tau))
    return np.array([value / scheme.scale])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Command:
    """Task-defining input: look-ahead horizon, desired reward, extra flags.

    morethan=1 turns the desire into a lower bound ("achieve more than
    this"). marker=1 flags a step whose command fields are to be obeyed;
    in the default per-step feeding mode every live command carries
    marker=1, while retrospective history commands carry marker=0.
    raw_steps keeps the unencoded horizon for bookkeeping.
    """

    horizon: np.ndarray
    desire: np.ndarray
    morethan: int = 0
    goal_obs: np.ndarray | None = None
    marker: int = 1
    raw_steps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "horizon", _freeze(self.horizon))
        object.__setattr__(self, "desire", _freeze(np.atleast_1d(self.desire)))
        if self.goal_obs is not None:
            object.__setattr__(self, "goal_obs", _freeze(self.goal_obs))
        if self.morethan not in (0, 1):
            raise ValueError("morethan must be 0 or 1")
        if self.marker not in (0, 1):
            raise ValueError("marker must be 0 or 1")
        if self.raw_steps < 0:
            raise ValueError("raw_steps must be non-negative")

    def extra(self, m: int) -> np.ndarray:
        """The flag/goal side channel: [morethan, marker, goal_obs-or-zeros]."""
        goal = np.zeros(m) if self.goal_obs is None else np.asarray(self.goal_obs)
        if goal.shape != (m,):
            raise ValueError(f"goal_obs length {goal.shape} does not match m={m}")
        return np.concatenate([[float(self.morethan), float(self.marker)], goal])


def make_command(
    raw_steps: int,
    desire,
    scheme: HorizonScheme,
    morethan: int = 0,
    goal_obs=None,
    marker: int = 1,
) -> Command:
    return Command(
        horizon=encode_horizon(raw_steps, scheme),
        desire=np.atleast_1d(np.asarray(desire, dtype=np.float64)),
        morethan=morethan,
        goal_obs=goal_obs,
        marker=marker,
        raw_steps=raw_steps,
    )


def extra_width(m: int) -> int:
    return 2 + m


def command_width(m: int, n: int) -> int:
    return HORIZON_WIDTH + n + extra_width(m)


def step_input_width(m: int, n: int, o: int) -> int:
    """Width of a full per-step network input for a command-following policy."""
    return o + m + n + command_width(m, n)


def command_input(
    command: Command, m: int, desire_scale: float = 1.0, end_marker_mode: bool = False
) -> np.ndarray:
    """Command fields as fed to the network: [horizon, desire/scale, extra].

    In ``end_marker_mode`` the horizon slot is zeroed and the marker unit
    instead signals "the look-ahead window ends now" (raw_steps == 0), for
    setups that drop explicit horizons in favor of an end-of-window flag.
    """
    if end_marker_mode:
        horizon = np.zeros(HORIZON_WIDTH)
        cmd = replace(command, marker=1 if command.raw_steps == 0 else 0)
    else:
        horizon = command.horizon
        cmd = command
    return np.concatenate([horizon, cmd.desire / desire_scale, cmd.extra(m)])


def step_input(
    prev_action: np.ndarray,
    observation: np.ndarray,
    reward_in: np.ndarray,
    command: Command,
    m: int,
    desire_scale: float = 1.0,
    end_marker_mode: bool = False,
) -> np.ndarray:
    """Full network input for one step: previous action, observation, incoming
    reward, then the command block."""
    return np.concatenate(
        [
            np.asarray(prev_action, dtype=np.float64),
            np.asarray(observation, dtype=np.float64),
            np.atleast_1d(np.asarray(reward_in, dtype=np.float64)),
            command_input(command, m, desire_scale, end_marker_mode),
        ]
    )


# ---------------------------------------------------------------------------
# Hindsight relabeling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentSample:
    """One relabeled training example from segment (k, j) of an episode.

    The command is constructed *from the segment's own outcome*, so the pair
    (inputs at step k, command) -> target_action is true by construction.
    history_prefix_len = k - 1 is the number of steps a recurrent policy
    replays before the trained step.
    """

    episode_ref: str
    k: int
    j: int
    command: Command
    target_action: np.ndarray
    history_prefix_len: int

    def __post_init__(self):
        object.__setattr__(self, "target_action", _freeze(self.target_action))
        if not 1 <= self.k <= self.j:
            raise ValueError("need 1 <= k <= j")
        if self.command.raw_steps != self.j - self.k:
            raise ValueError("command horizon does not match segment length")
        if self.history_prefix_len != self.k - 1:
            raise ValueError("history_prefix_len must equal k - 1")


def relabel_segment(episode: Episode, k: int, j: int, scheme: HorizonScheme) -> SegmentSample:
    """Exact-reward relabel: desire is what the segment actually earned."""
    desire = episode.reward_sum(k, j)
    return SegmentSample(
        episode_ref=episode.ref,
        k=k,
        j=j,
        command=make_command(j - k, desire, scheme),
        target_action=episode.action_at(k),
        history_prefix_len=k - 1,
    )


def relabel_morethan(
    episode: Episode, k: int, j: int, fraction: float, scheme: HorizonScheme
) -> SegmentSample:
    """Lower-bound relabel with the morethan flag raised.

    The desire is the realized segment reward pulled down by (1 - fraction)
    of its magnitude: exactly ``fraction * sum`` when the sum is
    non-negative, and strictly below the sum when it is negative, so the
    trained command always reads "this segment achieved more than that".
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    total = episode.reward_sum(k, j)
    desire = total - (1.0 - fraction) * np.abs(total)
    return SegmentSample(
        episode_ref=episode.ref,
        k=k,
        j=j,
        command=make_command(j - k, desire, scheme, morethan=1),
        target_action=episode.action_at(k),
        history_prefix_len=k - 1,
    )


def relabel_goal(episode: Episode, k: int, j: int, scheme: HorizonScheme) -> SegmentSample:
    """Goal relabel: additionally command the observation the segment ended in."""
    desire = episode.reward_sum(k, j)
    return SegmentSample(
        episode_ref=episode.ref,
        k=k,
        j=j,
        command=make_command(j - k, desire, scheme, goal_obs=episode.observation_after(j)),
        target_action=episode.action_at(k),
        history_prefix_len=k - 1,
    )
