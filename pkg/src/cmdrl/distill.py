"""Distill successful commanded behavior into a command-free policy.

The student network sees only (previous action, observation, incoming
reward) per step: its input layer has no horizon, desired-reward, or flag
units at all, which a structural audit can verify. It is trained by plain
supervised sequence regression to reproduce the action sequences of the
episodes deemed successful, and is retrained from the full current successful
set on every call rather than incrementally, so earlier skills are not
forgotten as the set grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Episode
from .envs import Environment
from .feedforward import _env_spec_from_entry
from .nn import (
    FLAG_COMMAND_FREE,
    Adam,
    OutputHead,
    RecurrentNet,
    bptt_step,
    head_from_code,
    head_to_code,
    load_arrays,
    net_from_entries,
    net_to_entries,
    save_arrays,
)
from .replay import ReplayBuffer


class NothingToDistillError(RuntimeError):
    """No episode passed the success rule."""


@dataclass
class DistillConfig:
    """Success rule plus student shape.

    rule "top_quantile" keeps episodes whose return reaches the (1 - q)
    quantile of buffer returns; rule "return_threshold" keeps returns >=
    threshold. The student defaults to half the hidden width a command
    policy would use here, reflecting that a plain sensory-input -> action
    policy is an easier function than the commanded one.
    """

    rule: str = "top_quantile"
    q: float = 0.1
    threshold: float | None = None
    hidden_dim: int = 32
    cell: str = "lstm"
    epochs: int = 1500
    lr: float = 5e-3
    seed: int = 0

    def __post_init__(self):
        if self.rule not in ("top_quantile", "return_threshold"):
            raise ValueError(f"unknown success rule {self.rule!r}")
        if self.rule == "top_quantile" and not 0.0 < self.q <= 1.0:
            raise ValueError("q must lie in (0, 1]")
        if self.rule == "return_threshold" and self.threshold is None:
            raise ValueError("return_threshold rule needs a threshold")


class CommandFreePolicy:
    """Recurrent policy over plain step inputs: [prev_action, obs, reward]."""

    kind = "command_free"

    def __init__(self, env_spec, hidden_dim: int = 32, cell: str = "lstm",
                 head: OutputHead | None = None, seed: int = 0):
        self.env_spec = env_spec
        if head is None:
            head = OutputHead({"discrete": "softmax", "continuous": "gaussian",
                               "multi_binary": "sigmoid"}[env_spec.action_kind])
        self.head = head
        self.loss_kind = {"softmax": "mse", "sigmoid": "mse", "gaussian": "nll",
                          "identity": "mse"}[head.kind]
        in_dim = env_spec.o + env_spec.m + env_spec.n
        out_dim = 2 * env_spec.o if head.kind == "gaussian" else env_spec.o
        self.net = RecurrentNet(in_dim, hidden_dim, out_dim, cell=cell, seed=seed)

    def step_row(self, prev_action, observation, reward_in) -> np.ndarray:
        return np.concatenate([
            np.asarray(prev_action, dtype=np.float64),
            np.asarray(observation, dtype=np.float64),
            np.atleast_1d(np.asarray(reward_in, dtype=np.float64)),
        ])

    def episode_rows(self, episode: Episode) -> np.ndarray:
        rows = [
            self.step_row(episode.transitions[k - 1].prev_action,
                          episode.observation_at(k), episode.reward_input_at(k))
            for k in range(1, episode.length + 1)
        ]
        return np.stack(rows)

    def to_entries(self) -> dict:
        entries = net_to_entries(self.net)
        entries["policy/head"] = np.array([head_to_code(self.head)])
        entries["policy/env_dims"] = np.array(
            [self.env_spec.m, self.env_spec.n, self.env_spec.o,
             ("discrete", "continuous", "multi_binary").index(self.env_spec.action_kind),
             self.env_spec.max_steps, 1.0 if self.env_spec.markovian else 0.0])
        return entries

    def save(self, path) -> None:
        save_arrays(path, self.to_entries(), flags=FLAG_COMMAND_FREE)

    @classmethod
    def from_entries(cls, entries: dict) -> "CommandFreePolicy":
        policy = cls.__new__(cls)
        policy.env_spec = _env_spec_from_entry(entries["policy/env_dims"])
        policy.head = head_from_code(entries["policy/head"][0])
        policy.loss_kind = {"softmax": "mse", "sigmoid": "mse", "gaussian": "nll",
                            "identity": "mse"}[policy.head.kind]
        policy.net = net_from_entries(entries)
        return policy

    @classmethod
    def load(cls, path) -> "CommandFreePolicy":
        entries, flags = load_arrays(path)
        if not flags & FLAG_COMMAND_FREE:
            raise ValueError("checkpoint is not a command-free policy")
        return cls.from_entries(entries)


def structural_audit(policy: CommandFreePolicy) -> bool:
    """True when the input layer has exactly the command-free width
    o + m + n, i.e. no command units exist to carry horizon/desire/flags."""
    spec = policy.env_spec
    return policy.net.in_dim == spec.o + spec.m + spec.n


def successful_episodes(episodes, config: DistillConfig) -> list[Episode]:
    episodes = list(episodes)
    if not episodes:
        return []
    returns = np.array([ep.scalar_return() for ep in episodes])
    if config.rule == "return_threshold":
        cut = float(config.threshold)
    else:
        cut = float(np.quantile(returns, 1.0 - config.q))
    return [ep for ep, r in zip(episodes, returns) if r >= cut - 1e-12]


def distill(buffer: ReplayBuffer, config: DistillConfig,
            env_spec=None) -> CommandFreePolicy:
    """Train a command-free student on the buffer's successful episodes.

    Reads a buffer snapshot only; neither the buffer nor any teacher
    parameters are touched. Deterministic given config.seed. env_spec may be
    passed explicitly; otherwise it is inferred from the episodes.
    """
    episodes = successful_episodes(buffer.snapshot(), config)
    if not episodes:
        raise NothingToDistillError("no episode passes the success rule")
    spec_env = env_spec if env_spec is not None else _infer_env_spec(episodes[0])
    student = CommandFreePolicy(spec_env, hidden_dim=config.hidden_dim,
                                cell=config.cell, seed=config.seed)
    opt = Adam(student.net.params(), lr=config.lr)
    seqs = []
    for ep in episodes:
        xs = student.episode_rows(ep)
        ts = np.stack([ep.action_at(k) for k in range(1, ep.length + 1)])
        seqs.append((xs, ts, np.ones(len(xs))))
    L = max(len(x) for x, _, _ in seqs)
    B = len(seqs)
    xs = np.zeros((B, L, seqs[0][0].shape[1]))
    ts = np.zeros((B, L, seqs[0][1].shape[1]))
    ms = np.zeros((B, L))
    for b, (x, t, m) in enumerate(seqs):
        xs[b, : len(x)] = x
        ts[b, : len(t)] = t
        ms[b, : len(m)] = m
    for _ in range(config.epochs):
        bptt_step(student.net, student.head, xs, ts, ms, student.loss_kind, opt)
    return student


def _infer_env_spec(episode: Episode):
    from .envs import EnvSpec

    tr = episode.transitions[0]
    o = tr.prev_action.size
    action = episode.action_at(1)
    onehot = action.sum() == 1.0 and np.all((action == 0) | (action == 1))
    kind = "discrete" if onehot and o > 1 else ("multi_binary" if o > 1 else "continuous")
    return EnvSpec(m=tr.observation.size, n=tr.reward.size, o=o, action_kind=kind,
                   max_steps=max(episode.length, 1), markovian=False)


def fidelity(student: CommandFreePolicy, episodes) -> float:
    """Prefix-conditioned action agreement: feed each teacher episode's own
    history, compare the student's greedy action to the teacher's at every
    step. Returns the agreement fraction in [0, 1]."""
    episodes = list(episodes)
    if not episodes:
        raise ValueError("fidelity needs at least one episode")
    agree = 0
    total = 0
    for ep in episodes:
        ys, _ = student.net.unroll(student.episode_rows(ep))
        for k in range(1, ep.length + 1):
            choice = student.head.greedy(ys[k - 1])
            if student.head.kind == "gaussian":
                same = bool(np.allclose(choice, ep.action_at(k), atol=1e-6))
            else:
                same = bool(np.array_equal(choice, ep.action_at(k)))
            agree += int(same)
            total += 1
    return agree / total


def rollout_command_free(env: Environment, student: CommandFreePolicy, seed: int,
                         select: str = "greedy") -> Episode:
    """Run the student in the environment (greedy by default)."""
    from .rng import STREAM_EVAL, counter_rng

    rng = counter_rng(seed, STREAM_EVAL)
    obs = env.reset(seed)
    spec = student.env_spec
    observations = [obs]
    actions, rewards = [], []
    state = student.net.initial_state(1)
    prev_action = np.zeros(spec.o)
    reward_in = np.zeros(spec.n)
    done = False
    while not done:
        x = student.step_row(prev_action, obs, reward_in)
        y, state = student.net.step(x[None, :], state)
        action = student.head.greedy(y[0]) if select == "greedy" else \
            student.head.sample(y[0], rng)
        obs, reward, done = env.step(action)
        observations.append(obs)
        actions.append(env.action_vector(action))
        rewards.append(reward)
        prev_action = actions[-1]
        reward_in = reward
    return Episode.from_arrays(observations, actions, rewards, env.env_id, seed)
