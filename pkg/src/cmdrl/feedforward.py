"""Feedforward command-following learner.

Two cooperating loops: an actor that runs trials, issuing itself commands
(desired cumulative reward within a remaining horizon) and occasionally
exploring, and a replay trainer that fits the policy network by supervised
regression on hindsight-relabeled segments of stored episodes. The shipped
loops assume scalar rewards (n = 1); the core types support wider reward
vectors, covered by unit tests only.

Also here: the tabular machinery for stochastic worlds, where commands carry
*expected* rather than realized rewards. A per-(state, action) running-mean
table estimates immediate rewards; an estimated transition model supports a
finite-horizon value recursion over it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Command,
    Episode,
    HorizonScheme,
    SegmentSample,
    make_command,
    step_input,
    step_input_width,
)
from .envs import Environment, EnvSpec
from .nn import (
    FLAG_COMMAND_FREE,
    FeedforwardNet,
    OutputHead,
    head_from_code,
    head_to_code,
    load_arrays,
    net_from_entries,
    net_to_entries,
    save_arrays,
    train_step,
)
from .replay import ReplayBuffer, sample_batch
from .rng import STREAM_ACTOR, counter_rng

EXPLOIT_RULES = ("max_seen_x2_floor_c", "upper_bound")
HORIZON_RULES = ("remaining_in_trial", "twice_lifetime")


@dataclass
class ActorConfig:
    """How the actor issues itself commands and explores.

    explore_fraction: probability per step of replacing the policy action
        with a uniform random one.
    exploit_rule: desired-reward rule; max_seen_x2_floor_c asks for
        max(desire_floor, 2 * best return seen), upper_bound asks for a
        fixed known bound.
    horizon_rule: remaining_in_trial counts steps left before the episode
        cap; twice_lifetime literally asks for twice the steps lived so far.
    select: "sample" draws from the policy distribution, "greedy" takes the
        most probable action (ties to the lowest index).
    """

    explore_fraction: float = 0.2
    exploit_rule: str = "max_seen_x2_floor_c"
    desire_floor: float = 1.0
    upper_bound: float | None = None
    horizon_rule: str = "remaining_in_trial"
    morethan_at_exploit: bool = False
    select: str = "sample"

    def __post_init__(self):
        if not 0.0 <= self.explore_fraction <= 1.0:
            raise ValueError("explore_fraction must lie in [0, 1]")
        if self.exploit_rule not in EXPLOIT_RULES:
            raise ValueError(f"unknown exploit rule {self.exploit_rule!r}")
        if self.exploit_rule == "upper_bound" and self.upper_bound is None:
            raise ValueError("upper_bound rule needs an upper_bound value")
        if self.desire_floor <= 0:
            raise ValueError("desire_floor must be positive")
        if self.horizon_rule not in HORIZON_RULES:
            raise ValueError(f"unknown horizon rule {self.horizon_rule!r}")
        if self.select not in ("sample", "greedy"):
            raise ValueError("select must be 'sample' or 'greedy'")


@dataclass
class TrainState:
    """Monotone run statistics shared by actor and trainer."""

    best_return: float = -np.inf
    best_length: int = 0
    desire_scale: float = 1.0
    lifetime_steps: int = 0
    trials: int = 0

    def observe_episode(self, episode: Episode) -> None:
        ret = episode.scalar_return()
        if ret > self.best_return:
            self.best_return = ret
            self.best_length = episode.length
        self.desire_scale = max(self.desire_scale, abs(ret))
        self.lifetime_steps += episode.length
        self.trials += 1


class CommandPolicy:
    """Feedforward policy mapping (step inputs, command) to an action
    distribution."""

    kind = "ffw"

    def __init__(self, env_spec: EnvSpec, scheme: HorizonScheme,
                 hidden: tuple[int, ...] = (64, 64), head: OutputHead | None = None,
                 seed: int = 0, desire_scale: float = 1.0, end_marker_mode: bool = False,
                 loss_kind: str | None = None):
        self.env_spec = env_spec
        self.scheme = scheme
        self.desire_scale = float(desire_scale)
        self.end_marker_mode = end_marker_mode
        if head is None:
            head = OutputHead({"discrete": "softmax", "continuous": "gaussian",
                               "multi_binary": "sigmoid"}[env_spec.action_kind])
        self.head = head
        if loss_kind is None:
            loss_kind = {"softmax": "mse", "sigmoid": "mse", "gaussian": "nll",
                         "identity": "mse"}[head.kind]
        self.loss_kind = loss_kind
        in_dim = step_input_width(env_spec.m, env_spec.n, env_spec.o)
        out_dim = 2 * env_spec.o if head.kind == "gaussian" else env_spec.o
        self.net = FeedforwardNet([in_dim, *hidden, out_dim], seed=seed)

    def build_input(self, prev_action, observation, reward_in, command: Command) -> np.ndarray:
        return step_input(prev_action, observation, reward_in, command,
                          self.env_spec.m, self.desire_scale, self.end_marker_mode)

    def input_for_sample(self, episode: Episode, sample: SegmentSample) -> np.ndarray:
        k = sample.k
        tr = episode.transitions[k - 1]
        return self.build_input(tr.prev_action, tr.observation,
                                episode.reward_input_at(k), sample.command)

    def output(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)

    def action_probabilities(self, prev_action, observation, reward_in, command) -> np.ndarray:
        """Distribution parameters for one step (probabilities for discrete)."""
        z = self.output(self.build_input(prev_action, observation, reward_in, command))
        return self.head.transform(z)

    def clone(self) -> "CommandPolicy":
        import copy

        return copy.deepcopy(self)

    # -- checkpointing ----------------------------------------------------

    def to_entries(self) -> dict:
        entries = net_to_entries(self.net)
        entries["policy/head"] = np.array([head_to_code(self.head)])
        entries["policy/scheme"] = np.array(
            [float(("identity", "harmonic", "discounted").index(self.scheme.kind)),
             self.scheme.gamma, self.scheme.scale])
        entries["policy/desire_scale"] = np.array([self.desire_scale])
        entries["policy/env_dims"] = np.array(
            [self.env_spec.m, self.env_spec.n, self.env_spec.o,
             ("discrete", "continuous", "multi_binary").index(self.env_spec.action_kind),
             self.env_spec.max_steps, 1.0 if self.env_spec.markovian else 0.0])
        entries["policy/end_marker"] = np.array([1.0 if self.end_marker_mode else 0.0])
        return entries

    def save(self, path, flags: int = 0) -> None:
        save_arrays(path, self.to_entries(), flags=flags)

    @classmethod
    def from_entries(cls, entries: dict) -> "CommandPolicy":
        spec = _env_spec_from_entry(entries["policy/env_dims"])
        scheme = _scheme_from_entry(entries["policy/scheme"])
        policy = cls.__new__(cls)
        policy.env_spec = spec
        policy.scheme = scheme
        policy.desire_scale = float(entries["policy/desire_scale"][0])
        policy.end_marker_mode = bool(entries["policy/end_marker"][0])
        policy.head = head_from_code(entries["policy/head"][0])
        policy.loss_kind = {"softmax": "mse", "sigmoid": "mse",
                            "gaussian": "nll", "identity": "mse"}[policy.head.kind]
        policy.net = net_from_entries(entries)
        return policy

    @classmethod
    def load(cls, path) -> "CommandPolicy":
        entries, flags = load_arrays(path)
        if flags & FLAG_COMMAND_FREE:
            raise ValueError("checkpoint is a command-free policy, not a command policy")
        return cls.from_entries(entries)


def _env_spec_from_entry(arr) -> EnvSpec:
    m, n, o, kind, max_steps, markovian = arr
    return EnvSpec(m=int(m), n=int(n), o=int(o),
                   action_kind=("discrete", "continuous", "multi_binary")[int(kind)],
                   max_steps=int(max_steps), markovian=bool(markovian))


def _scheme_from_entry(arr) -> HorizonScheme:
    return HorizonScheme(kind=("identity", "harmonic", "discounted")[int(arr[0])],
                         gamma=float(arr[1]), scale=float(arr[2]))


# ---------------------------------------------------------------------------
# Acting
# ---------------------------------------------------------------------------


def random_action(env_spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    if env_spec.action_kind == "discrete":
        return np.eye(env_spec.o)[int(rng.integers(env_spec.o))]
    if env_spec.action_kind == "multi_binary":
        return rng.integers(0, 2, size=env_spec.o).astype(np.float64)
    # continuous worlds here act on [0, 1]
    return rng.uniform(0.0, 1.0, size=env_spec.o)


def act(policy: CommandPolicy, observation, prev_action, prev_reward, command: Command,
        explore: bool, rng: np.random.Generator, explore_fraction: float = 0.2,
        select: str = "sample") -> np.ndarray:
    """Choose one action. In explore mode a uniform random action replaces the
    policy's with probability explore_fraction."""
    if explore and rng.random() < explore_fraction:
        return random_action(policy.env_spec, rng)
    z = policy.output(policy.build_input(prev_action, observation, prev_reward, command))
    return policy.head.greedy(z) if select == "greedy" else policy.head.sample(z, rng)


def exploit_desire(cfg: ActorConfig, state: TrainState) -> float:
    if cfg.exploit_rule == "upper_bound":
        return float(cfg.upper_bound)
    if not np.isfinite(state.best_return):
        return cfg.desire_floor
    return max(cfg.desire_floor, 2.0 * state.best_return)


def _actor_horizon(cfg: ActorConfig, env_spec: EnvSpec, state: TrainState, t: int) -> int:
    if cfg.horizon_rule == "twice_lifetime":
        return 2 * (state.lifetime_steps + t - 1)
    return max(0, env_spec.max_steps - t)


def run_trial(env: Environment, policy: CommandPolicy, cfg: ActorConfig,
              state: TrainState, buffer: ReplayBuffer | None, trial_seed: int,
              explore: bool = True) -> Episode:
    """One self-commanded trial. The desired reward starts from the exploit
    rule and is decremented by each observed reward, so the remaining command
    stays consistent with what is still wanted; the horizon tracks the steps
    remaining under the configured rule."""
    obs = env.reset(trial_seed)
    rng = counter_rng(trial_seed, STREAM_ACTOR)
    spec = policy.env_spec
    prev_action = np.zeros(spec.o)
    prev_reward = np.zeros(spec.n)
    desire = exploit_desire(cfg, state)
    observations = [obs]
    actions, rewards = [], []
    t = 1
    done = False
    while not done:
        cmd = make_command(_actor_horizon(cfg, spec, state, t), [desire] * spec.n,
                           policy.scheme, morethan=1 if cfg.morethan_at_exploit else 0)
        a = act(policy, obs, prev_action, prev_reward, cmd, explore, rng,
                cfg.explore_fraction, cfg.select)
        obs, reward, done = env.step(a)
        observations.append(obs)
        actions.append(env.action_vector(a))
        rewards.append(reward)
        desire -= float(np.sum(reward))
        prev_action = actions[-1]
        prev_reward = reward
        t += 1
    episode = Episode.from_arrays(observations, actions, rewards, env.env_id, trial_seed)
    if buffer is not None:
        buffer.add_episode(episode)
    state.observe_episode(episode)
    return episode


def run_commanded_trial(env: Environment, policy: CommandPolicy, desire: float,
                        raw_steps: int, morethan: bool, trial_seed: int,
                        select: str = "sample") -> Episode:
    """Evaluation trial under an externally issued command, no exploration.
    The desire decrements by observed rewards and the horizon counts down to
    zero (where it stays if the trial runs longer)."""
    obs = env.reset(trial_seed)
    rng = counter_rng(trial_seed, STREAM_ACTOR, 1)
    spec = policy.env_spec
    prev_action = np.zeros(spec.o)
    prev_reward = np.zeros(spec.n)
    remaining = float(desire)
    observations = [obs]
    actions, rewards = [], []
    t = 1
    done = False
    while not done:
        cmd = make_command(max(0, raw_steps - (t - 1)), [remaining] * spec.n,
                           policy.scheme, morethan=1 if morethan else 0)
        a = act(policy, obs, prev_action, prev_reward, cmd, explore=False, rng=rng,
                select=select)
        obs, reward, done = env.step(a)
        observations.append(obs)
        actions.append(env.action_vector(a))
        rewards.append(reward)
        remaining -= float(np.sum(reward))
        prev_action = actions[-1]
        prev_reward = reward
        t += 1
    return Episode.from_arrays(observations, actions, rewards, env.env_id, trial_seed)


# ---------------------------------------------------------------------------
# Replay training
# ---------------------------------------------------------------------------


@dataclass
class BatchConfig:
    batch_size: int = 128
    batches_per_epoch: int = 8
    mix: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.batch_size < 1 or self.batches_per_epoch < 1:
            raise ValueError("batch sizes must be positive")


def tally_samples(tally: dict | None, samples) -> None:
    """Count realized relabeler kinds into a {exact, morethan, goal} tally."""
    if tally is None:
        return
    for s in samples:
        if s.command.morethan:
            tally["morethan"] += 1
        elif s.command.goal_obs is not None:
            tally["goal"] += 1
        else:
            tally["exact"] += 1


def train_epoch(policy: CommandPolicy, buffer: ReplayBuffer, batch_cfg: BatchConfig,
                opt, rng: np.random.Generator, exact_relabeler=None,
                tally: dict | None = None) -> float:
    """One epoch of replay training; returns the mean batch loss."""
    snapshot = buffer.snapshot()
    episodes = {ep.ref: ep for ep in snapshot}
    losses = []
    for _ in range(batch_cfg.batches_per_epoch):
        samples = sample_batch(buffer, batch_cfg.batch_size, batch_cfg.mix,
                               policy.scheme, rng, exact_relabeler=exact_relabeler,
                               episodes=snapshot)
        tally_samples(tally, samples)
        inputs = np.stack([policy.input_for_sample(episodes[s.episode_ref], s)
                           for s in samples])
        targets = np.stack([s.target_action for s in samples])
        losses.append(train_step(policy.net, policy.head, inputs, targets,
                                 policy.loss_kind, opt))
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# Tabular estimators for stochastic worlds
# ---------------------------------------------------------------------------


class EstimateMissingError(RuntimeError):
    """A segment visited a (state, action) pair with no reward estimate yet."""


class RewardTable:
    """Running mean of immediate reward per (state, action) pair."""

    def __init__(self, n_states: int, n_actions: int):
        self.means = np.zeros((n_states, n_actions))
        self.counts = np.zeros((n_states, n_actions), dtype=np.int64)

    def update(self, state: int, action: int, reward: float) -> None:
        self.counts[state, action] += 1
        self.means[state, action] += (reward - self.means[state, action]) / self.counts[
            state, action
        ]

    def mean(self, state: int, action: int) -> float:
        if self.counts[state, action] == 0:
            raise EstimateMissingError(f"no observations for pair ({state}, {action})")
        return float(self.means[state, action])


def update_reward_table(table: RewardTable, state: int, action: int, reward: float) -> None:
    table.update(state, action, reward)


def one_hot_index(v: np.ndarray) -> int:
    """Index of a one-hot vector; tabular worlds expose states this way."""
    v = np.asarray(v)
    idx = int(np.argmax(v))
    if v[idx] != 1.0 or np.sum(v) != 1.0:
        raise ValueError("vector is not one-hot")
    return idx


def observe_episode_rewards(table: RewardTable, episode: Episode) -> None:
    """Feed every (state, action, reward) triple of an episode into the table."""
    for k in range(1, episode.length + 1):
        s = one_hot_index(episode.observation_at(k))
        a = one_hot_index(episode.action_at(k))
        table.update(s, a, float(np.sum(episode.transitions[k - 1].reward)))


def relabel_expected(episode: Episode, k: int, j: int, table: RewardTable,
                     scheme: HorizonScheme) -> SegmentSample:
    """Exact-style relabel whose desire sums *estimated expected* rewards of
    the visited (state, action) pairs instead of the realized ones."""
    episode._check_pair(k, j)
    total = 0.0
    for t in range(k, j + 1):
        s = one_hot_index(episode.observation_at(t))
        a = one_hot_index(episode.action_at(t))
        total += table.mean(s, a)
    return SegmentSample(
        episode_ref=episode.ref,
        k=k,
        j=j,
        command=make_command(j - k, [total], scheme),
        target_action=episode.action_at(k),
        history_prefix_len=k - 1,
    )


class TabularModel:
    """Visit counts, reward means and transition counts estimated from episodes."""

    def __init__(self, n_states: int, n_actions: int):
        self.rewards = RewardTable(n_states, n_actions)
        self.transitions = np.zeros((n_states, n_actions, n_states), dtype=np.int64)

    @classmethod
    def from_episodes(cls, episodes, n_states: int, n_actions: int) -> "TabularModel":
        model = cls(n_states, n_actions)
        for ep in episodes:
            for k in range(1, ep.length + 1):
                s = one_hot_index(ep.observation_at(k))
                a = one_hot_index(ep.action_at(k))
                s_next = one_hot_index(ep.observation_after(k))
                model.rewards.update(s, a, float(np.sum(ep.transitions[k - 1].reward)))
                model.transitions[s, a, s_next] += 1
        return model

    def set_pair(self, state: int, action: int, mean_reward: float,
                 next_probs: np.ndarray) -> None:
        """Hand-build a model entry (testing and worked examples)."""
        self.rewards.means[state, action] = mean_reward
        self.rewards.counts[state, action] = 1
        probs = np.asarray(next_probs, dtype=np.float64)
        scaled = np.round(probs * 10**6).astype(np.int64)
        self.transitions[state, action] = scaled


def dp_expected_return(model: TabularModel, horizon: int, policy: np.ndarray):
    """Finite-horizon expected return per state under a fixed policy.

    Backward recursion: V_0 = 0 and
    V_h(s) = sum_a policy(a|s) [ z(s, a) + sum_s' P(s'|s, a) V_{h-1}(s') ].
    States whose recursion touches an unobserved (state, action) pair come
    back as NaN with modeled=False.
    """
    u, o = model.rewards.means.shape
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (u, o):
        raise ValueError(f"policy must be shaped ({u}, {o})")
    z = np.where(model.rewards.counts > 0, model.rewards.means, np.nan)
    totals = model.transitions.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore"):
        P = np.where(totals > 0, model.transitions / np.maximum(totals, 1), np.nan)
    P0 = np.nan_to_num(P, nan=0.0)
    unknown_row = np.isnan(P).any(axis=2)
    V = np.zeros(u)
    for _ in range(horizon):
        # an unmodeled successor only matters where it has positive probability
        finite_V = np.where(np.isfinite(V), V, 0.0)
        cont = np.einsum("sat,t->sa", P0, finite_V)
        touches_nan = np.einsum("sat,t->sa", P0, (~np.isfinite(V)).astype(np.float64)) > 0
        term = z + np.where(unknown_row | touches_nan, np.nan, cont)
        V = np.sum(np.where(policy > 0, policy * term, 0.0), axis=1)
    modeled = np.isfinite(V)
    return V, modeled
