"""Environment contract and the shipped worlds.

Every world is tiny and exists to make one behavioral claim testable:

fork_world
    3x3 grid, wall in the center. Start mid-left, goal mid-right, so exactly
    two routes (over the top, under the bottom) exist, both 4 moves long and
    both worth 9.6 total. A policy trained on balanced experience of the two
    routes should split 50/50 at the fork and be confident afterwards.

grid_world
    width x height grid (default 5x5), one-hot cell observation. Actions
    up/down/left/right; bumping a wall or the boundary stays in place. Every
    move costs ``step_reward`` (-0.1); entering the goal additionally pays
    ``goal_reward`` (+10) and ends the episode. Cap 50 steps. Multiple start
    cells may be configured; reset picks one from the seed.

obstacle_line
    Single-step world with a continuous action a in [0, 1] (values outside
    are clipped) interpreted as a direction past an obstacle: 0.0 clears it
    one way, 1.0 the other, the middle collides. Reward shape, exactly:
    10.0 if a <= 0.1 or a >= 0.9, else 10 * max(0, 1 - 5 * min(a, 1 - a)),
    i.e. plateaus of 10 at both ends, a linear ramp, and 0 on [0.2, 0.8].
    The constant observation is [1.0].

tmaze
    A corridor of ``corridor_length`` cells ending in a junction. The side
    that pays off is drawn from the reset seed and is visible only in the
    very first observation (components [cue_left, cue_right, at_junction]).
    Actions forward/left/right; forward advances in the corridor, turning at
    the junction ends the episode with +1 on the cued side and -1 on the
    other. All other rewards are 0; cap 20 steps. No memoryless policy can
    beat 50% across both sides.

stochastic_grid
    grid_world movement, but every (state, action) execution draws its reward
    from a two-point distribution: ``hi`` with probability ``p_hi``, else
    ``lo``. The draw at step t is a pure function of (seed, t), so replays
    are bit-identical. No goal cell; episodes run to the cap.

World definitions can also be loaded from a plain-text map (rows of cell
characters: ``#`` wall, ``.`` floor, ``S`` start, ``G`` goal) plus a JSON
parameter block; see :func:`load_world_text` and :func:`load_env_file`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import STREAM_ENV, counter_rng


@dataclass(frozen=True)
class EnvSpec:
    """Static interface dims: observation m, reward n, action o."""

    m: int
    n: int
    o: int
    action_kind: str  # discrete | continuous | multi_binary
    max_steps: int
    markovian: bool = True

    def __post_init__(self):
        if min(self.m, self.n, self.o) < 1 or self.max_steps < 1:
            raise ValueError("dims and max_steps must be positive")
        if self.action_kind not in ("discrete", "continuous", "multi_binary"):
            raise ValueError(f"unknown action kind {self.action_kind!r}")


class Environment:
    """Base class enforcing the step/reset contract.

    Subclasses implement ``_reset(seed) -> obs`` and
    ``_step(action) -> (obs, reward, done)``; the base class rejects steps
    after termination and applies the episode cap.
    """

    spec: EnvSpec
    env_id: str

    def __init__(self):
        self._t = 0
        self._done = True
        self._seed = 0

    @property
    def steps_taken(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, seed: int) -> np.ndarray:
        self._t = 0
        self._done = False
        self._seed = int(seed)
        return self._reset(self._seed)

    def step(self, action):
        if self._done:
            raise RuntimeError("step() called on a finished episode; reset() first")
        action = self._coerce_action(action)
        self._t += 1
        obs, reward, done = self._step(action)
        if self._t >= self.spec.max_steps:
            done = True
        self._done = done
        return obs, np.atleast_1d(np.asarray(reward, dtype=np.float64)), done

    def _coerce_action(self, action):
        if self.spec.action_kind == "discrete":
            if np.ndim(action) > 0:
                arr = np.asarray(action, dtype=np.float64)
                if arr.shape != (self.spec.o,):
                    raise ValueError(f"action vector must have length {self.spec.o}")
                action = int(np.argmax(arr))
            else:
                action = int(action)
            if not 0 <= action < self.spec.o:
                raise ValueError(f"action index {action} out of range 0..{self.spec.o - 1}")
            return action
        if self.spec.action_kind == "multi_binary":
            arr = np.asarray(action, dtype=np.float64).reshape(-1)
            if arr.shape != (self.spec.o,):
                raise ValueError(f"action vector must have length {self.spec.o}")
            return arr
        arr = np.asarray(action, dtype=np.float64).reshape(-1)
        if arr.shape != (self.spec.o,):
            raise ValueError(f"action vector must have length {self.spec.o}")
        return arr

    def _reset(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError

    def action_vector(self, action) -> np.ndarray:
        """Canonical vector form of an action (one-hot for discrete)."""
        if self.spec.action_kind == "discrete" and np.ndim(action) == 0:
            return np.eye(self.spec.o)[int(action)]
        return np.asarray(action, dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------------------
# Grid family
# ---------------------------------------------------------------------------

# up, down, left, right as (row, col) deltas
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class GridWorld(Environment):
    def __init__(
        self,
        width: int = 5,
        height: int = 5,
        walls: tuple = (),
        starts: tuple = ((0, 0),),
        goal: tuple | None = (4, 4),
        step_reward: float = -0.1,
        goal_reward: float = 10.0,
        max_steps: int = 50,
        env_id: str = "grid_world",
    ):
        super().__init__()
        self.width = width
        self.height = height
        self.walls = frozenset(tuple(w) for w in walls)
        self.starts = tuple(tuple(s) for s in starts)
        self.goal = tuple(goal) if goal is not None else None
        self.step_reward = step_reward
        self.goal_reward = goal_reward
        self.env_id = env_id
        self.spec = EnvSpec(m=width * height, n=1, o=4, action_kind="discrete",
                            max_steps=max_steps, markovian=True)
        for cell in self.starts + ((self.goal,) if self.goal else ()):
            if not self._in_bounds(cell) or cell in self.walls:
                raise ValueError(f"cell {cell} is outside the grid or inside a wall")

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def cell_index(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    def _observe(self) -> np.ndarray:
        obs = np.zeros(self.n_states)
        obs[self.cell_index(self._pos)] = 1.0
        return obs

    def _in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def _reset(self, seed: int) -> np.ndarray:
        if len(self.starts) == 1:
            self._pos = self.starts[0]
        else:
            idx = int(counter_rng(seed, STREAM_ENV, 0).integers(len(self.starts)))
            self._pos = self.starts[idx]
        return self._observe()

    def _move(self, action: int) -> tuple:
        dr, dc = GRID_MOVES[action]
        nxt = (self._pos[0] + dr, self._pos[1] + dc)
        if not self._in_bounds(nxt) or nxt in self.walls:
            return self._pos
        return nxt

    def _step(self, action: int):
        prev = self._pos
        self._pos = self._move(action)
        reward = self.step_reward
        done = False
        if self.goal is not None and self._pos == self.goal:
            reward += self.goal_reward
            done = True
        self._last_state_action = (self.cell_index(prev), action)
        return self._observe(), reward, done


class StochasticGrid(GridWorld):
    """Grid movement with per-(state, action) two-point random rewards.

    p_hi may be a scalar or a (n_states, 4) array of probabilities; the true
    mean of pair (s, a) is lo + p_hi[s, a] * (hi - lo), exposed via
    :meth:`true_mean` for verification.
    """

    def __init__(self, width: int = 2, height: int = 2, lo: float = 0.0, hi: float = 2.0,
                 p_hi=0.5, max_steps: int = 50, env_id: str = "stochastic_grid", **kw):
        kw.setdefault("goal", None)
        kw.setdefault("step_reward", 0.0)
        super().__init__(width=width, height=height, max_steps=max_steps, env_id=env_id, **kw)
        self.lo = float(lo)
        self.hi = float(hi)
        p = np.asarray(p_hi, dtype=np.float64)
        if p.ndim == 0:
            p = np.full((self.n_states, 4), float(p))
        if p.shape != (self.n_states, 4):
            raise ValueError("p_hi must be scalar or (n_states, 4)")
        self.p_hi = p

    def true_mean(self, state: int, action: int) -> float:
        return self.lo + self.p_hi[state, action] * (self.hi - self.lo)

    def _step(self, action: int):
        state = self.cell_index(self._pos)
        self._pos = self._move(action)
        # reward at step t is a pure function of (seed, t): replayable
        u = counter_rng(self._seed, STREAM_ENV, self._t).random()
        reward = self.hi if u < self.p_hi[state, action] else self.lo
        self._last_state_action = (state, action)
        return self._observe(), reward, False


class ObstacleLine(Environment):
    def __init__(self, env_id: str = "obstacle_line"):
        super().__init__()
        self.env_id = env_id
        self.spec = EnvSpec(m=1, n=1, o=1, action_kind="continuous",
                            max_steps=1, markovian=True)

    @staticmethod
    def reward_for(a: float) -> float:
        a = min(1.0, max(0.0, float(a)))
        edge = min(a, 1.0 - a)
        if edge <= 0.1:
            return 10.0
        return 10.0 * max(0.0, 1.0 - 5.0 * edge)

    def _reset(self, seed: int) -> np.ndarray:
        return np.array([1.0])

    def _step(self, action):
        return np.array([1.0]), self.reward_for(action[0]), True


class TMaze(Environment):
    ACT_FORWARD, ACT_LEFT, ACT_RIGHT = 0, 1, 2

    def __init__(self, corridor_length: int = 3, success_reward: float = 1.0,
                 failure_reward: float = -1.0, max_steps: int = 20, env_id: str = "tmaze"):
        super().__init__()
        self.corridor_length = corridor_length
        self.success_reward = success_reward
        self.failure_reward = failure_reward
        self.env_id = env_id
        self.spec = EnvSpec(m=3, n=1, o=3, action_kind="discrete",
                            max_steps=max_steps, markovian=False)

    @property
    def goal_side(self) -> int:
        """0 = left pays off, 1 = right. Fixed by the reset seed."""
        return self._goal_side

    def _reset(self, seed: int) -> np.ndarray:
        self._goal_side = int(counter_rng(seed, STREAM_ENV, 0).integers(2))
        self._pos = 0
        obs = np.zeros(3)
        obs[self._goal_side] = 1.0  # cue appears only in this first observation
        return obs

    def _observe(self) -> np.ndarray:
        obs = np.zeros(3)
        if self._pos == self.corridor_length:
            obs[2] = 1.0
        return obs

    def _step(self, action: int):
        at_junction = self._pos == self.corridor_length
        if action == self.ACT_FORWARD:
            if not at_junction:
                self._pos += 1
            return self._observe(), 0.0, False
        if not at_junction:
            return self._observe(), 0.0, False
        chose_left = action == self.ACT_LEFT
        correct = chose_left == (self._goal_side == 0)
        reward = self.success_reward if correct else self.failure_reward
        return self._observe(), reward, True

    def reached_goal(self, episode_return: float) -> bool:
        return episode_return >= self.success_reward - 1e-9


# ---------------------------------------------------------------------------
# Factories, map format, registry
# ---------------------------------------------------------------------------


def fork_world(**kw) -> GridWorld:
    """Two equal routes around a central obstacle; see the module docstring."""
    kw.setdefault("env_id", "fork_world")
    return GridWorld(width=3, height=3, walls=((1, 1),), starts=((1, 0),), goal=(1, 2),
                     step_reward=-0.1, goal_reward=10.0, max_steps=20, **kw)


#: Scripted optimal fork_world routes (action index sequences), both worth 9.6.
FORK_ROUTE_UP = (0, 3, 3, 1)
FORK_ROUTE_DOWN = (1, 3, 3, 0)


def parse_map(text: str):
    """Parse rows of cell characters into (width, height, walls, starts, goal)."""
    rows = [line for line in text.splitlines() if line.strip()]
    height = len(rows)
    width = max(len(r) for r in rows)
    walls, starts, goal = [], [], None
    for r, line in enumerate(rows):
        for c, ch in enumerate(line.ljust(width, ".")):
            if ch == "#":
                walls.append((r, c))
            elif ch == "S":
                starts.append((r, c))
            elif ch == "G":
                if goal is not None:
                    raise ValueError("map has more than one goal cell")
                goal = (r, c)
            elif ch != ".":
                raise ValueError(f"unknown map character {ch!r} at row {r}, col {c}")
    if not starts:
        raise ValueError("map has no start cell")
    return width, height, tuple(walls), tuple(starts), goal


def load_world_text(map_text: str, params: dict | None = None) -> GridWorld:
    """Build a grid-family world from a character map plus a parameter block."""
    params = dict(params or {})
    width, height, walls, starts, goal = parse_map(map_text)
    kind = params.pop("kind", "grid")
    common = dict(width=width, height=height, walls=walls, starts=starts)
    if kind == "grid":
        return GridWorld(goal=goal, **common, **params)
    if kind == "stochastic":
        if goal is not None:
            raise ValueError("stochastic maps do not use goal cells")
        return StochasticGrid(**common, **params)
    raise ValueError(f"unknown map kind {kind!r}")


ENV_FACTORIES = {
    "grid_world": GridWorld,
    "fork_world": fork_world,
    "obstacle_line": ObstacleLine,
    "tmaze": TMaze,
    "stochastic_grid": StochasticGrid,
}


def make_env(name: str, params: dict | None = None) -> Environment:
    if name not in ENV_FACTORIES:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(ENV_FACTORIES)}")
    params = dict(params or {})
    params = {k: (tuple(map(tuple, v)) if k in ("walls", "starts") else v)
              for k, v in params.items()}
    return ENV_FACTORIES[name](**params)


def load_env_file(path) -> Environment:
    """JSON world definition: {"name": ..., "params": {...}} or
    {"map": "...", "params": {...}} for grid-family maps."""
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    if "map" in rec:
        return load_world_text(rec["map"], rec.get("params"))
    return make_env(rec["name"], rec.get("params"))


# ---------------------------------------------------------------------------
# Scripted play helpers
# ---------------------------------------------------------------------------


def play_script(env: Environment, seed: int, actions) -> "Episode":
    """Run a fixed action sequence from reset and package it as an Episode."""
    from .core import Episode

    obs = env.reset(seed)
    observations = [obs]
    acts, rewards = [], []
    for action in actions:
        obs, reward, done = env.step(action)
        observations.append(obs)
        acts.append(env.action_vector(action))
        rewards.append(reward)
        if done:
            break
    return Episode.from_arrays(observations, acts, rewards, env.env_id, seed)


def shortest_grid_script(world: GridWorld, start) -> list[int]:
    """Down-then-right style shortest action list from start to the goal."""
    if world.goal is None:
        raise ValueError("world has no goal")
    r, c = start
    gr, gc = world.goal
    script = []
    while r != gr:
        script.append(1 if gr > r else 0)
        r += 1 if gr > r else -1
    while c != gc:
        script.append(3 if gc > c else 2)
        c += 1 if gc > c else -1
    return script
