#!/usr/bin/env python3
"""Train on a 5x5 grid, then ask for specific returns and watch them happen.

The training loop alternates acting (self-issued commands: "beat twice the
best so far", with exploration) and supervised replay training on relabeled
segments. Afterwards the policy is commanded to reproduce its best return,
to beat half of it (lower-bound mode), and to achieve an impossible value,
as an extrapolation probe.
"""

import tempfile

from cmdrl import GridWorld
from cmdrl.config import RunConfig
from cmdrl.training import evaluate, load_policy, run_training

cfg = RunConfig.from_dict({
    "env": {"name": "grid_world"},
    "learner": "ffw",
    "seed": 0,
    "trials": 400,
    "epochs_per_trial": 1,
    "actor": {"explore_fraction": 0.2},
    "nn": {"hidden": [64, 64]},
    "replay": {"capacity": 30, "selection": "top_k_by_return"},
    "batch": {"batch_size": 128, "batches_per_epoch": 8, "mix": [0.7, 0.3, 0.0]},
})

with tempfile.TemporaryDirectory() as out:
    print("training 400 trials (step cost -0.1, goal +10, optimum 9.2)...")
    result = run_training(cfg, out)
    print(f"best return seen: {result.best_return:.2f} "
          f"in {result.best_length} steps")
    policy = load_policy(result.final_checkpoint)

env = GridWorld()
horizon = result.best_length - 1

for desire, morethan, label in [
    (result.best_return, False, "reproduce the best return"),
    (result.best_return / 2, True, "beat half the best (lower bound)"),
    (15.0, False, "impossible demand (extrapolation probe)"),
]:
    summary = evaluate(env, policy, desire, horizon, morethan, n_trials=100, seed=77)
    mode = ">=" if morethan else "=="
    print(f"\ncommand: return {mode} {desire:.2f} within {horizon + 1} moves "
          f"({label})")
    print(f"  mean return {summary.mean_return:.2f} "
          f"(sigma {summary.std_return:.2f}), "
          f"satisfied {100 * summary.satisfaction_rate:.0f}% of 100 trials")
