"""Recurrent command-following learner for non-Markovian worlds.

The policy's hidden state is what carries memory across steps, so training
and acting must agree on what the network saw before the step being decided.
The convention: every step already lived is re-fed with a *retroactively
consistent* command (zero horizon, desire equal to the reward that step
actually produced, flags zeroed), so the history the network conditions on
always reads as a sequence of commands it fulfilled. ``achieved_prefix_commands``
is the single source of that feeding pattern; acting replays and training
replays both call it, which keeps their hidden states bit-identical functions
of the episode. Other retrospectively consistent command choices exist (the
lower-bound flavor, goals); only the zero-horizon variant is implemented.

In sequential mode the actor re-runs the prefix every step (every step is a
sync point); the quadratic cost is accepted at this scale. A carry-forward
mode without replays exists for the parallel setting, and a reset-each-step
ablation deliberately destroys memory to show when it was load-bearing.

Two feeding modes:

per_step
    Commands are fed live at every step (marker 1); prefixes use the
    retroactive commands above (marker 0). Training draws (k, j) segments and
    trains the action at k only.

initial_only
    The command is fed once, at step 1, with the marker unit raised;
    every later step gets zeroed command fields with marker 0 and the network
    must remember what it was told. Training uses whole episodes (the step-1
    command relabeled from the episode's own outcome) with every step's
    action trained.

High-dimensional multi-binary actions are sampled one component per *micro
step*: the step input is repeated o times with an extra action-input unit
carrying the previously sampled component (0 before the first), so later
components can depend on earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Command,
    Episode,
    HorizonScheme,
    SegmentSample,
    encode_horizon,
    make_command,
    step_input,
    step_input_width,
)
from .envs import Environment, EnvSpec
from .feedforward import (
    ActorConfig,
    TrainState,
    _actor_horizon,
    _env_spec_from_entry,
    _scheme_from_entry,
    exploit_desire,
    random_action,
)
from .nn import (
    FLAG_COMMAND_FREE,
    OutputHead,
    RecurrentNet,
    bptt_step,
    head_from_code,
    head_to_code,
    load_arrays,
    net_from_entries,
    net_to_entries,
    save_arrays,
    sigmoid,
)
from .replay import ReplayBuffer, sample_batch
from .rng import STREAM_ACTOR, counter_rng

FEEDING_MODES = ("per_step", "initial_only")


@dataclass(frozen=True)
class HistoryStep:
    """One step as the recurrent policy saw it: the concatenated
    (prev_action, observation, reward) block, the command fed, and the action
    taken. Used for feeding-pattern audits."""

    all: np.ndarray
    command: Command
    action_taken: np.ndarray


def achieved_prefix_commands(episode: Episode, upto: int) -> list[Command]:
    """Retroactive commands for steps 1..upto-1: zero horizon, desire equal to
    the reward each step actually earned, flags zeroed.

    This is the command history a policy replays before acting or training at
    step ``upto``; it is a pure function of the episode.
    """
    if upto > episode.length + 1:
        raise IndexError(f"upto={upto} exceeds episode length {episode.length}")
    out = []
    for k in range(1, upto):
        out.append(
            Command(
                horizon=encode_horizon(0, HorizonScheme("identity")),
                desire=episode.transitions[k - 1].reward,
                morethan=0,
                goal_obs=None,
                marker=0,
                raw_steps=0,
            )
        )
    return out


def zeroed_command(n: int) -> Command:
    """Dead command fields (marker 0) for steps outside command feeding."""
    return Command(horizon=np.zeros(1), desire=np.zeros(n), marker=0)


class RecurrentCommandPolicy:
    """Recurrent policy mapping (history, command) to an action distribution."""

    kind = "rnn"

    def __init__(self, env_spec: EnvSpec, scheme: HorizonScheme, hidden_dim: int = 32,
                 cell: str = "lstm", head: OutputHead | None = None, seed: int = 0,
                 desire_scale: float = 1.0, feeding: str = "per_step",
                 autoregressive: bool = False, bptt_window: int = 32,
                 end_marker_mode: bool = False, loss_kind: str | None = None):
        if feeding not in FEEDING_MODES:
            raise ValueError(f"unknown feeding mode {feeding!r}")
        if autoregressive and env_spec.action_kind != "multi_binary":
            raise ValueError("micro-step sampling applies to multi-binary actions")
        self.env_spec = env_spec
        self.scheme = scheme
        self.desire_scale = float(desire_scale)
        self.feeding = feeding
        self.autoregressive = autoregressive
        self.bptt_window = bptt_window
        self.end_marker_mode = end_marker_mode
        if head is None:
            if autoregressive:
                head = OutputHead("sigmoid")
            else:
                head = OutputHead({"discrete": "softmax", "continuous": "gaussian",
                                   "multi_binary": "sigmoid"}[env_spec.action_kind])
        self.head = head
        if loss_kind is None:
            loss_kind = {"softmax": "mse", "sigmoid": "mse", "gaussian": "nll",
                         "identity": "mse"}[head.kind]
        self.loss_kind = loss_kind
        in_dim = step_input_width(env_spec.m, env_spec.n, env_spec.o)
        if autoregressive:
            in_dim += 1  # the previous-component action input unit
            out_dim = 1
        else:
            out_dim = 2 * env_spec.o if head.kind == "gaussian" else env_spec.o
        self.net = RecurrentNet(in_dim, hidden_dim, out_dim, cell=cell, seed=seed)

    @property
    def out_dim(self) -> int:
        return self.net.out_dim

    def base_input(self, prev_action, observation, reward_in, command: Command) -> np.ndarray:
        return step_input(prev_action, observation, reward_in, command,
                          self.env_spec.m, self.desire_scale, self.end_marker_mode)

    def rows_for_step(self, prev_action, observation, reward_in, command: Command,
                      action_components) -> tuple[np.ndarray, np.ndarray]:
        """Input rows and target rows this env step contributes to a training
        sequence: one row normally, o teacher-forced micro rows when sampling
        autoregressively."""
        base = self.base_input(prev_action, observation, reward_in, command)
        if not self.autoregressive:
            return base[None, :], np.asarray(action_components, dtype=np.float64)[None, :]
        comps = np.asarray(action_components, dtype=np.float64).reshape(-1)
        o = self.env_spec.o
        rows = np.empty((o, base.size + 1))
        rows[:, :-1] = base
        rows[0, -1] = 0.0
        rows[1:, -1] = comps[:-1]
        return rows, comps[:, None]

    def prefix_command(self, episode_rewards, k: int, issued: Command | None) -> Command:
        """Command fed for already-lived step k during a replay."""
        if self.feeding == "initial_only":
            if k == 1 and issued is not None:
                return issued
            return zeroed_command(self.env_spec.n)
        return Command(horizon=np.zeros(1), desire=episode_rewards[k - 1], marker=0)

    def clone(self) -> "RecurrentCommandPolicy":
        import copy

        return copy.deepcopy(self)

    # -- checkpointing ------------------------------------------------------

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
        entries["policy/feeding"] = np.array([float(FEEDING_MODES.index(self.feeding))])
        entries["policy/autoregressive"] = np.array([1.0 if self.autoregressive else 0.0])
        entries["policy/bptt_window"] = np.array([float(self.bptt_window)])
        return entries

    def save(self, path, flags: int = 0) -> None:
        save_arrays(path, self.to_entries(), flags=flags)

    @classmethod
    def from_entries(cls, entries: dict) -> "RecurrentCommandPolicy":
        policy = cls.__new__(cls)
        policy.env_spec = _env_spec_from_entry(entries["policy/env_dims"])
        policy.scheme = _scheme_from_entry(entries["policy/scheme"])
        policy.desire_scale = float(entries["policy/desire_scale"][0])
        policy.end_marker_mode = bool(entries["policy/end_marker"][0])
        policy.feeding = FEEDING_MODES[int(entries["policy/feeding"][0])]
        policy.autoregressive = bool(entries["policy/autoregressive"][0])
        policy.bptt_window = int(entries["policy/bptt_window"][0])
        policy.head = head_from_code(entries["policy/head"][0])
        policy.loss_kind = {"softmax": "mse", "sigmoid": "mse",
                            "gaussian": "nll", "identity": "mse"}[policy.head.kind]
        policy.net = net_from_entries(entries)
        return policy

    @classmethod
    def load(cls, path) -> "RecurrentCommandPolicy":
        entries, flags = load_arrays(path)
        if flags & FLAG_COMMAND_FREE:
            raise ValueError("checkpoint is a command-free policy, not a command policy")
        return cls.from_entries(entries)


# ---------------------------------------------------------------------------
# History replay and acting
# ---------------------------------------------------------------------------


def _prefix_rows(policy: RecurrentCommandPolicy, observations, actions, rewards,
                 upto: int, issued: Command | None) -> list[np.ndarray]:
    """Input rows for steps 1..upto-1 of a partially lived trial."""
    spec = policy.env_spec
    rows = []
    for k in range(1, upto):
        prev_action = actions[k - 2] if k >= 2 else np.zeros(spec.o)
        reward_in = rewards[k - 2] if k >= 2 else np.zeros(spec.n)
        cmd = policy.prefix_command(rewards, k, issued)
        r, _ = policy.rows_for_step(prev_action, observations[k - 1], reward_in, cmd,
                                    actions[k - 1])
        rows.append(r)
    return rows


def replay_prefix_state(policy: RecurrentCommandPolicy, observations, actions, rewards,
                        upto: int, issued: Command | None = None):
    """Hidden state after re-feeding steps 1..upto-1 of a trial in progress."""
    rows = _prefix_rows(policy, observations, actions, rewards, upto, issued)
    if not rows:
        return policy.net.initial_state(1)
    xs = np.concatenate(rows, axis=0)
    _, state = policy.net.unroll(xs)
    return state


def episode_history(policy: RecurrentCommandPolicy, episode: Episode,
                    issued: Command | None = None) -> list[HistoryStep]:
    """The per-step feeding record a replay of this episode produces."""
    spec = policy.env_spec
    rewards = [tr.reward for tr in episode.transitions]
    steps = []
    for k in range(1, episode.length + 1):
        cmd = policy.prefix_command(rewards, k, issued)
        allv = np.concatenate([
            episode.transitions[k - 1].prev_action,
            episode.observation_at(k),
            episode.reward_input_at(k),
        ])
        steps.append(HistoryStep(all=allv, command=cmd, action_taken=episode.action_at(k)))
    return steps


def act_autoregressive(policy: RecurrentCommandPolicy, state, prev_action, observation,
                       reward_in, command: Command, rng: np.random.Generator,
                       select: str = "sample"):
    """Sample a multi-binary action one component per micro step; component i
    conditions on components 1..i-1 through the extra action input unit."""
    base = policy.base_input(prev_action, observation, reward_in, command)
    o = policy.env_spec.o
    comps = np.zeros(o)
    prev_comp = 0.0
    for i in range(o):
        x = np.concatenate([base, [prev_comp]])
        y, state = policy.net.step(x[None, :], state)
        p = float(sigmoid(y[0])[0])
        if select == "greedy":
            comps[i] = 1.0 if p >= 0.5 else 0.0
        else:
            comps[i] = 1.0 if rng.random() < p else 0.0
        prev_comp = comps[i]
    return comps, state


def autoregressive_joint(policy: RecurrentCommandPolicy, state, prev_action, observation,
                         reward_in, command: Command) -> dict[tuple, float]:
    """Exact joint over all 2^o action patterns implied by the learned
    conditionals (teacher-forced enumeration). Sums to 1 by construction."""
    import itertools

    base = policy.base_input(prev_action, observation, reward_in, command)
    o = policy.env_spec.o
    joint: dict[tuple, float] = {}
    for pattern in itertools.product((0.0, 1.0), repeat=o):
        prob = 1.0
        st = state
        prev_comp = 0.0
        for i in range(o):
            x = np.concatenate([base, [prev_comp]])
            y, st = policy.net.step(x[None, :], st)
            p = float(sigmoid(y[0])[0])
            prob *= p if pattern[i] == 1.0 else (1.0 - p)
            prev_comp = pattern[i]
        joint[pattern] = prob
    return joint


def rnn_act(policy: RecurrentCommandPolicy, state, prev_action, observation, reward_in,
            command: Command, explore: bool, rng: np.random.Generator,
            explore_fraction: float = 0.2, select: str = "sample"):
    """One action from the live step; returns (action, state after the step)."""
    if explore and rng.random() < explore_fraction:
        action = random_action(policy.env_spec, rng)
        # the hidden state still advances on what was actually done
        if policy.autoregressive:
            state = _advance_micro(policy, state, prev_action, observation, reward_in,
                                   command, action)
        else:
            x = policy.base_input(prev_action, observation, reward_in, command)
            _, state = policy.net.step(x[None, :], state)
        return action, state
    if policy.autoregressive:
        return act_autoregressive(policy, state, prev_action, observation, reward_in,
                                  command, rng, select)
    x = policy.base_input(prev_action, observation, reward_in, command)
    y, state = policy.net.step(x[None, :], state)
    action = policy.head.greedy(y[0]) if select == "greedy" else policy.head.sample(y[0], rng)
    return action, state


def _advance_micro(policy, state, prev_action, observation, reward_in, command, components):
    base = policy.base_input(prev_action, observation, reward_in, command)
    comps = np.asarray(components).reshape(-1)
    prev_comp = 0.0
    for i in range(policy.env_spec.o):
        x = np.concatenate([base, [prev_comp]])
        _, state = policy.net.step(x[None, :], state)
        prev_comp = comps[i]
    return state


def run_trial_rnn(env: Environment, policy: RecurrentCommandPolicy, cfg: ActorConfig,
                  state: TrainState, buffer: ReplayBuffer | None, trial_seed: int,
                  explore: bool = True, prefix_replay: bool = True,
                  reset_hidden_each_step: bool = False) -> Episode:
    """One self-commanded trial with memory.

    With prefix_replay (the sequential-mode default, where every step is a
    sync point) the hidden state is recomputed from the retroactive command
    history before each live step, exactly as training will see it. Without
    it the hidden state simply carries forward. reset_hidden_each_step is the
    memory ablation: the policy acts on the current input alone.
    """
    obs = env.reset(trial_seed)
    rng = counter_rng(trial_seed, STREAM_ACTOR)
    spec = policy.env_spec
    observations = [obs]
    actions: list[np.ndarray] = []
    rewards: list[np.ndarray] = []
    desire = exploit_desire(cfg, state)
    issued: Command | None = None
    hidden = policy.net.initial_state(1)
    t = 1
    done = False
    while not done:
        if policy.feeding == "initial_only":
            if t == 1:
                cmd = make_command(_actor_horizon(cfg, spec, state, t), [desire] * spec.n,
                                   policy.scheme, morethan=1 if cfg.morethan_at_exploit else 0)
                issued = cmd
            else:
                cmd = zeroed_command(spec.n)
        else:
            cmd = make_command(_actor_horizon(cfg, spec, state, t), [desire] * spec.n,
                               policy.scheme, morethan=1 if cfg.morethan_at_exploit else 0)
        if reset_hidden_each_step:
            hidden = policy.net.initial_state(1)
        elif prefix_replay:
            hidden = replay_prefix_state(policy, observations, actions, rewards, t, issued)
        prev_action = actions[-1] if actions else np.zeros(spec.o)
        reward_in = rewards[-1] if rewards else np.zeros(spec.n)
        a, hidden = rnn_act(policy, hidden, prev_action, obs, reward_in, cmd, explore,
                            rng, cfg.explore_fraction, cfg.select)
        obs, reward, done = env.step(a)
        observations.append(obs)
        actions.append(env.action_vector(a))
        rewards.append(reward)
        desire -= float(np.sum(reward))
        t += 1
    episode = Episode.from_arrays(observations, actions, rewards, env.env_id, trial_seed)
    if buffer is not None:
        buffer.add_episode(episode)
    state.observe_episode(episode)
    return episode


def run_commanded_trial_rnn(env: Environment, policy: RecurrentCommandPolicy,
                            desire: float, raw_steps: int, morethan: bool,
                            trial_seed: int, select: str = "sample",
                            reset_hidden_each_step: bool = False) -> Episode:
    """Evaluation trial under an external command, no exploration."""
    obs = env.reset(trial_seed)
    rng = counter_rng(trial_seed, STREAM_ACTOR, 1)
    spec = policy.env_spec
    observations = [obs]
    actions: list[np.ndarray] = []
    rewards: list[np.ndarray] = []
    remaining = float(desire)
    issued: Command | None = None
    hidden = policy.net.initial_state(1)
    t = 1
    done = False
    while not done:
        if policy.feeding == "initial_only":
            if t == 1:
                cmd = make_command(raw_steps, [remaining] * spec.n, policy.scheme,
                                   morethan=1 if morethan else 0)
                issued = cmd
            else:
                cmd = zeroed_command(spec.n)
        else:
            cmd = make_command(max(0, raw_steps - (t - 1)), [remaining] * spec.n,
                               policy.scheme, morethan=1 if morethan else 0)
        if reset_hidden_each_step:
            hidden = policy.net.initial_state(1)
        else:
            hidden = replay_prefix_state(policy, observations, actions, rewards, t, issued)
        prev_action = actions[-1] if actions else np.zeros(spec.o)
        reward_in = rewards[-1] if rewards else np.zeros(spec.n)
        a, hidden = rnn_act(policy, hidden, prev_action, obs, reward_in, cmd,
                            explore=False, rng=rng, select=select)
        obs, reward, done = env.step(a)
        observations.append(obs)
        actions.append(env.action_vector(a))
        rewards.append(reward)
        remaining -= float(np.sum(reward))
        t += 1
    return Episode.from_arrays(observations, actions, rewards, env.env_id, trial_seed)


# ---------------------------------------------------------------------------
# Replay training
# ---------------------------------------------------------------------------


def _sequence_for_sample(policy: RecurrentCommandPolicy, episode: Episode,
                         sample: SegmentSample):
    """Training sequence for one (k, j) sample in per_step feeding: replayed
    prefix (loss-masked) then the commanded step k (trained)."""
    rewards = [tr.reward for tr in episode.transitions]
    k = sample.k
    rows, targets, mask = [], [], []
    for t in range(1, k):
        prev_action = episode.transitions[t - 1].prev_action
        cmd = policy.prefix_command(rewards, t, None)
        r, tg = policy.rows_for_step(prev_action, episode.observation_at(t),
                                     episode.reward_input_at(t), cmd, episode.action_at(t))
        rows.append(r)
        targets.append(tg)
        mask.append(np.zeros(len(r)))
    tr = episode.transitions[k - 1]
    r, tg = policy.rows_for_step(tr.prev_action, episode.observation_at(k),
                                 episode.reward_input_at(k), sample.command,
                                 sample.target_action)
    rows.append(r)
    targets.append(tg)
    mask.append(np.ones(len(r)))
    xs = np.concatenate(rows, axis=0)
    ts = np.concatenate(targets, axis=0)
    ms = np.concatenate(mask)
    if len(xs) > policy.bptt_window:
        xs, ts, ms = xs[-policy.bptt_window:], ts[-policy.bptt_window:], ms[-policy.bptt_window:]
    return xs, ts, ms


def _sequence_for_episode(policy: RecurrentCommandPolicy, episode: Episode,
                          first_command: Command):
    """Whole-episode training sequence for initial_only feeding: the command
    rides step 1 with the marker raised, everything afterwards is zeroed, and
    every step's action is trained."""
    spec = policy.env_spec
    rows, targets, mask = [], [], []
    for t in range(1, episode.length + 1):
        cmd = first_command if t == 1 else zeroed_command(spec.n)
        prev_action = episode.transitions[t - 1].prev_action
        r, tg = policy.rows_for_step(prev_action, episode.observation_at(t),
                                     episode.reward_input_at(t), cmd, episode.action_at(t))
        rows.append(r)
        targets.append(tg)
        mask.append(np.ones(len(r)))
    xs = np.concatenate(rows, axis=0)
    ts = np.concatenate(targets, axis=0)
    ms = np.concatenate(mask)
    if len(xs) > policy.bptt_window:
        xs, ts, ms = xs[-policy.bptt_window:], ts[-policy.bptt_window:], ms[-policy.bptt_window:]
    return xs, ts, ms


def _pad_batch(seqs):
    L = max(len(xs) for xs, _, _ in seqs)
    B = len(seqs)
    in_dim = seqs[0][0].shape[1]
    out_dim = seqs[0][1].shape[1]
    xs = np.zeros((B, L, in_dim))
    ts = np.zeros((B, L, out_dim))
    ms = np.zeros((B, L))
    for b, (x, t, m) in enumerate(seqs):
        xs[b, : len(x)] = x
        ts[b, : len(t)] = t
        ms[b, : len(m)] = m
    return xs, ts, ms


def _full_episode_command(policy: RecurrentCommandPolicy, episode: Episode,
                          mix, rng: np.random.Generator) -> Command:
    from .core import relabel_goal, relabel_morethan, relabel_segment
    from .core import MORETHAN_FRACTIONS

    u = rng.random()
    if u < mix[0]:
        sample = relabel_segment(episode, 1, episode.length, policy.scheme)
    elif u < mix[0] + mix[1]:
        frac = MORETHAN_FRACTIONS[int(rng.integers(len(MORETHAN_FRACTIONS)))]
        sample = relabel_morethan(episode, 1, episode.length, frac, policy.scheme)
    else:
        sample = relabel_goal(episode, 1, episode.length, policy.scheme)
    return sample.command


def train_epoch_rnn(policy: RecurrentCommandPolicy, buffer: ReplayBuffer,
                    batch_cfg, opt, rng: np.random.Generator,
                    exact_relabeler=None, tally: dict | None = None) -> float:
    """One epoch of history-replayed training; returns the mean batch loss.

    Loss masks cover exactly the commanded decision(s): the step-k action for
    per_step feeding (prefix steps only condition the state), every step for
    initial_only feeding.
    """
    from .feedforward import tally_samples

    episodes = buffer.snapshot()
    if not episodes:
        from .replay import NoDataError

        raise NoDataError("cannot train from an empty buffer")
    by_ref = {ep.ref: ep for ep in episodes}
    losses = []
    for _ in range(batch_cfg.batches_per_epoch):
        seqs = []
        if policy.feeding == "per_step":
            samples = sample_batch(buffer, batch_cfg.batch_size, batch_cfg.mix,
                                   policy.scheme, rng, exact_relabeler=exact_relabeler,
                                   episodes=episodes)
            tally_samples(tally, samples)
            for s in samples:
                seqs.append(_sequence_for_sample(policy, by_ref[s.episode_ref], s))
        else:
            for _ in range(batch_cfg.batch_size):
                ep = episodes[int(rng.integers(len(episodes)))]
                cmd = _full_episode_command(policy, ep, batch_cfg.mix, rng)
                if tally is not None:
                    key = ("morethan" if cmd.morethan
                           else "goal" if cmd.goal_obs is not None else "exact")
                    tally[key] += 1
                seqs.append(_sequence_for_episode(policy, ep, cmd))
        xs, ts, ms = _pad_batch(seqs)
        losses.append(bptt_step(policy.net, policy.head, xs, ts, ms,
                                policy.loss_kind, opt))
    return float(np.mean(losses))
