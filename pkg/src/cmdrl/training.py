"""Training run orchestration: drive the actor and the replay trainer, emit
metrics, write checkpoints, and evaluate commanded behavior.

A run directory ends up containing:

    resolved_config.json   the exact configuration the run used
    metrics.csv            one row per trial (schema v1, columns below)
    checkpoint_final.ckpt  final policy parameters (+ periodic ones if asked)
    episodes.jsonl         buffer snapshot for later distillation
    run_summary.json       best return, realized relabel mix, pair counts

Metrics schema v1 columns: trial, return, desire, loss, explore_fraction for
the feedforward learner, plus hidden_norm for the recurrent one. Rows are
written as repr'd floats, so identical runs produce byte-identical files.
The sequential driver is deterministic given the seed; the parallel driver
(actor and trainer in separate threads, syncing parameter snapshots at trial
boundaries) matches its external behavior only up to scheduling.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import METRICS_SCHEMA, RunConfig
from .core import HorizonScheme
from .envs import Environment, make_env
from .feedforward import (
    CommandPolicy,
    TrainState,
    exploit_desire,
    run_commanded_trial,
    train_epoch,
)
from .nn import make_optimizer
from .recurrent import (
    RecurrentCommandPolicy,
    replay_prefix_state,
    run_commanded_trial_rnn,
    run_trial_rnn,
    train_epoch_rnn,
)
from .feedforward import run_trial
from .replay import ReplayBuffer
from .rng import STREAM_LEARNER, counter_rng

FFW_COLUMNS = ("trial", "return", "desire", "loss", "explore_fraction")
RNN_COLUMNS = FFW_COLUMNS + ("hidden_norm",)


def trial_seed(master_seed: int, trial: int) -> int:
    """Unique, reproducible per-trial seed within a run."""
    return master_seed * 1_000_003 + trial


def resolved_scheme(cfg: RunConfig, env: Environment) -> HorizonScheme:
    scale = cfg.scheme.scale if cfg.scheme.scale is not None else float(env.spec.max_steps)
    return HorizonScheme(kind=cfg.scheme.kind, gamma=cfg.scheme.gamma, scale=scale)


def build_policy(cfg: RunConfig, env: Environment):
    scheme = resolved_scheme(cfg, env)
    head = None
    if cfg.nn.head is not None:
        from .nn import OutputHead

        head = OutputHead(cfg.nn.head)
    if cfg.learner == "ffw":
        return CommandPolicy(env.spec, scheme, hidden=tuple(cfg.nn.hidden), head=head,
                             seed=cfg.seed, end_marker_mode=cfg.nn.end_marker_mode,
                             loss_kind=cfg.nn.loss)
    return RecurrentCommandPolicy(env.spec, scheme, hidden_dim=cfg.nn.hidden_dim,
                                  cell=cfg.nn.cell, head=head, seed=cfg.seed,
                                  feeding=cfg.nn.feeding,
                                  autoregressive=cfg.nn.autoregressive,
                                  bptt_window=cfg.nn.bptt_window,
                                  end_marker_mode=cfg.nn.end_marker_mode,
                                  loss_kind=cfg.nn.loss)


def build_buffer(cfg: RunConfig) -> ReplayBuffer:
    return ReplayBuffer(capacity=cfg.replay.capacity, selection=cfg.replay.selection)


def _format_row(values) -> str:
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)


@dataclass
class RunResult:
    out_dir: Path
    best_return: float
    best_length: int
    trials: int
    final_checkpoint: Path
    metrics_path: Path
    mix_tally: dict = field(default_factory=dict)


def run_training(cfg: RunConfig, out_dir) -> RunResult:
    """Train per the config and populate the run directory. Sequential by
    default; cfg.parallel switches to the two-thread actor/trainer mode."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.env_name, cfg.env_params)
    policy = build_policy(cfg, env)
    buffer = build_buffer(cfg)
    state = TrainState()
    opt = make_optimizer(policy.net.params(), cfg.nn.optimizer, cfg.nn.lr)
    cfg.save(out / "resolved_config.json")
    tally = {"exact": 0, "morethan": 0, "goal": 0}

    columns = RNN_COLUMNS if cfg.learner == "rnn" else FFW_COLUMNS
    metrics_path = out / "metrics.csv"
    if cfg.parallel:
        rows = _parallel_loop(cfg, env, policy, buffer, state, opt, tally, out)
    else:
        rows = _sequential_loop(cfg, env, policy, buffer, state, opt, tally, out)
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(_format_row(row) + "\n")

    final = out / "checkpoint_final.ckpt"
    policy.desire_scale = state.desire_scale
    policy.save(final)
    buffer.save(out / "episodes.jsonl")
    summary = {
        "best_return": state.best_return,
        "best_length": state.best_length,
        "trials": state.trials,
        "lifetime_steps": state.lifetime_steps,
        "desire_scale": state.desire_scale,
        "relabel_mix_realized": tally,
        "pair_count_total": int(sum(ep.length * (ep.length + 1) // 2
                                    for ep in buffer.snapshot())),
        "metrics_schema": METRICS_SCHEMA,
        "learner": cfg.learner,
    }
    with open(out / "run_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunResult(out_dir=out, best_return=state.best_return,
                     best_length=state.best_length, trials=state.trials,
                     final_checkpoint=final, metrics_path=metrics_path, mix_tally=tally)


def _train_epochs(cfg, policy, buffer, opt, rng, tally):
    losses = []
    for _ in range(cfg.epochs_per_trial):
        if cfg.learner == "rnn":
            losses.append(train_epoch_rnn(policy, buffer, cfg.batch, opt, rng,
                                          tally=tally))
        else:
            losses.append(train_epoch(policy, buffer, cfg.batch, opt, rng, tally=tally))
    return float(np.mean(losses)) if losses else float("nan")


def _hidden_norm(policy, episode) -> float:
    state = replay_prefix_state(policy, [tr.observation for tr in episode.transitions]
                                + [episode.final_observation],
                                [episode.action_at(k) for k in range(1, episode.length + 1)],
                                [tr.reward for tr in episode.transitions],
                                episode.length + 1, None)
    h = state[0] if isinstance(state, tuple) else state
    return float(np.linalg.norm(h))


def _sequential_loop(cfg, env, policy, buffer, state, opt, tally, out):
    rng_learn = counter_rng(cfg.seed, STREAM_LEARNER)
    rows = []
    for trial in range(cfg.trials):
        policy.desire_scale = state.desire_scale
        desire0 = exploit_desire(cfg.actor, state)
        seed_t = trial_seed(cfg.seed, trial)
        if cfg.learner == "rnn":
            episode = run_trial_rnn(env, policy, cfg.actor, state, buffer, seed_t)
        else:
            episode = run_trial(env, policy, cfg.actor, state, buffer, seed_t)
        policy.desire_scale = state.desire_scale
        loss = _train_epochs(cfg, policy, buffer, opt, rng_learn, tally)
        row = [trial, episode.scalar_return(), desire0, loss, cfg.actor.explore_fraction]
        if cfg.learner == "rnn":
            row.append(_hidden_norm(policy, episode))
        rows.append(row)
        if cfg.checkpoint_every and (trial + 1) % cfg.checkpoint_every == 0:
            policy.desire_scale = state.desire_scale
            policy.save(Path(out) / f"checkpoint_{trial + 1:06d}.ckpt")
    return rows


def _parallel_loop(cfg, env, policy, buffer, state, opt, tally, out):
    """Actor and trainer threads; the actor syncs a parameter snapshot from
    the trainer at every trial boundary."""
    rows = []
    lock = threading.Lock()
    last_loss = [float("nan")]
    stop = threading.Event()

    def learner_thread():
        rng_learn = counter_rng(cfg.seed, STREAM_LEARNER)
        while not stop.is_set():
            if len(buffer) == 0:
                stop.wait(0.001)
                continue
            with lock:
                last_loss[0] = _train_epochs(cfg, policy, buffer, opt, rng_learn, tally)

    worker = threading.Thread(target=learner_thread, daemon=True)
    worker.start()
    try:
        for trial in range(cfg.trials):
            with lock:
                policy.desire_scale = state.desire_scale
                actor_policy = policy.clone()
            desire0 = exploit_desire(cfg.actor, state)
            seed_t = trial_seed(cfg.seed, trial)
            if cfg.learner == "rnn":
                episode = run_trial_rnn(env, actor_policy, cfg.actor, state, buffer, seed_t)
            else:
                episode = run_trial(env, actor_policy, cfg.actor, state, buffer, seed_t)
            row = [trial, episode.scalar_return(), desire0, last_loss[0],
                   cfg.actor.explore_fraction]
            if cfg.learner == "rnn":
                row.append(_hidden_norm(actor_policy, episode))
            rows.append(row)
    finally:
        stop.set()
        worker.join(timeout=10.0)
    return rows


def _params_digest(policy) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in policy.net.params():
        h.update(p.value.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalSummary:
    mean_return: float
    std_return: float
    satisfaction_rate: float
    trials: int
    returns: list[float]
    episodes: list = field(default_factory=list)

    def row_lines(self, desire: float, morethan: bool):
        for i, ret in enumerate(self.returns):
            yield f"{i},{ret!r},{desire!r},{int(morethan)}"


def satisfied(ret: float, desire: float, morethan: bool, tolerance_frac: float = 0.1,
              tolerance_abs: float = 0.0) -> bool:
    if morethan:
        return ret >= desire - 1e-9
    return abs(ret - desire) <= max(tolerance_abs, tolerance_frac * abs(desire)) + 1e-9


def evaluate(env: Environment, policy, desire: float, raw_steps: int, morethan: bool,
             n_trials: int, seed: int, select: str = "sample",
             tolerance_frac: float = 0.1, tolerance_abs: float = 0.0,
             reset_hidden_each_step: bool = False, keep_episodes: bool = False) -> EvalSummary:
    """Issue the same command for n_trials fresh trials and summarize."""
    returns = []
    episodes = []
    for i in range(n_trials):
        s = trial_seed(seed, i)
        if isinstance(policy, RecurrentCommandPolicy):
            ep = run_commanded_trial_rnn(env, policy, desire, raw_steps, morethan, s,
                                         select=select,
                                         reset_hidden_each_step=reset_hidden_each_step)
        else:
            ep = run_commanded_trial(env, policy, desire, raw_steps, morethan, s,
                                     select=select)
        returns.append(ep.scalar_return())
        if keep_episodes:
            episodes.append(ep)
    rate = float(np.mean([satisfied(r, desire, morethan, tolerance_frac, tolerance_abs)
                          for r in returns]))
    return EvalSummary(mean_return=float(np.mean(returns)),
                       std_return=float(np.std(returns)),
                       satisfaction_rate=rate, trials=n_trials, returns=returns,
                       episodes=episodes)


def load_policy(path):
    """Load whichever policy kind the checkpoint holds."""
    from .nn import load_arrays

    entries, flags = load_arrays(path)
    from .nn import FLAG_COMMAND_FREE

    if flags & FLAG_COMMAND_FREE:
        from .distill import CommandFreePolicy

        return CommandFreePolicy.from_entries(entries)
    if int(entries["arch/type"][0]) == 0:
        return CommandPolicy.from_entries(entries)
    return RecurrentCommandPolicy.from_entries(entries)
