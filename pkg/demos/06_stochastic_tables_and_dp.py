#!/usr/bin/env python3
"""Expected-reward commands for stochastic worlds.

When rewards are random, "achieve exactly what segment (k, j) earned" trains
on noise. Instead a per-(state, action) running mean estimates the expected
immediate reward, segments are relabeled with sums of those estimates, and a
finite-horizon backward recursion over an estimated transition model extends
the idea to multi-step expected returns.
"""

import numpy as np

from cmdrl import HorizonScheme, RewardTable, StochasticGrid, TabularModel, play_script
from cmdrl.feedforward import dp_expected_return, relabel_expected

from cmdrl.rng import counter_rng

env = StochasticGrid(width=2, height=2, lo=0.0, hi=2.0, p_hi=0.5, max_steps=10**9)
table = RewardTable(env.n_states, env.spec.o)

obs = env.reset(5)
walk = counter_rng(5, 77)
for _ in range(50_000):
    a = int(walk.integers(4))
    s = int(np.argmax(obs))
    obs, r, _ = env.step(a)
    table.update(s, a, float(r[0]))

visited = table.counts > 0
worst = np.max(np.abs(table.means[visited] - 1.0))
print(f"after {int(table.counts.sum())} steps, "
      f"{int(visited.sum())} (state, action) pairs visited")
print(f"estimated means vs the true mean 1.0: worst abs error {worst:.4f}")

episode = play_script(StochasticGrid(width=2, height=2, max_steps=4), 9, [3, 1, 2, 0])
sample = relabel_expected(episode, 1, 4, table, HorizonScheme("identity"))
print(f"\nexpected-reward relabel of a 4-step segment: desire "
      f"{sample.command.desire[0]:.3f} (realized was "
      f"{episode.reward_sum(1, 4)[0]:.1f})")

# multi-step expected returns over a hand-built two-state model
model = TabularModel(2, 2)
model.set_pair(0, 0, 0.5, [0.0, 1.0])   # move: pays 0.5, lands in state 1
model.set_pair(0, 1, 0.1, [1.0, 0.0])   # stay cheap
model.set_pair(1, 0, -0.2, [1.0, 0.0])  # move back at a cost
model.set_pair(1, 1, 1.0, [0.0, 1.0])   # stay and collect
policy = np.array([[0.5, 0.5], [0.1, 0.9]])
print("\nfinite-horizon expected returns V_h per state (two-state chain):")
for horizon in (0, 1, 2, 4, 8):
    V, _ = dp_expected_return(model, horizon, policy)
    print(f"  h={horizon}: " + "  ".join(f"V({s})={v:6.3f}" for s, v in enumerate(V)))
