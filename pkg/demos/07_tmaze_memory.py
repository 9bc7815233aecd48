#!/usr/bin/env python3
"""Memory earns its keep: a cue shown once must be carried to the junction.

The T-maze shows which side pays only in the very first observation. A
feedforward mapping of current observation to action cannot beat 50% here
(the junction looks identical either way), so the learner is recurrent and
replays each trial's history with retroactively consistent commands before
acting. A reset-the-hidden-state-every-step ablation knocks the policy back
to chance, which is the point.
"""

import tempfile

import numpy as np

from cmdrl import TMaze
from cmdrl.config import RunConfig
from cmdrl.training import evaluate, load_policy, run_training

cfg = RunConfig.from_dict({
    "env": {"name": "tmaze"},
    "learner": "rnn",
    "seed": 0,
    "trials": 350,
    "epochs_per_trial": 1,
    "actor": {"explore_fraction": 0.25},
    "nn": {"hidden_dim": 32, "cell": "lstm"},
    "replay": {"capacity": 40, "selection": "top_k_by_return"},
    "batch": {"batch_size": 32, "batches_per_epoch": 4, "mix": [1.0, 0.0, 0.0]},
})


def goal_rate(returns):
    return float(np.mean([r >= 1.0 - 1e-9 for r in returns]))


with tempfile.TemporaryDirectory() as out:
    print("training a recurrent policy for 350 trials...")
    result = run_training(cfg, out)
    policy = load_policy(result.final_checkpoint)

env = TMaze()
commanded = evaluate(env, policy, desire=1.0, raw_steps=3, morethan=False,
                     n_trials=200, seed=7, select="greedy")
ablated = evaluate(env, policy, desire=1.0, raw_steps=3, morethan=False,
                   n_trials=200, seed=8, select="sample",
                   reset_hidden_each_step=True)

print(f"\ncommanded success (+1 within 4 moves), intact memory: "
      f"{100 * goal_rate(commanded.returns):.0f}% of 200 trials")
print(f"same command, hidden state wiped before every step:    "
      f"{100 * goal_rate(ablated.returns):.0f}% (chance is 50%)")
print("\nthe cue is only useful if something remembers it.")
