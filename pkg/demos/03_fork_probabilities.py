#!/usr/bin/env python3
"""Two equally good routes make a fifty-fifty policy, on purpose.

fork_world has two 4-move routes around a central wall, both worth 9.6.
Trained with squared error on one-hot actions, the policy's output at a
given input converges to the conditional action distribution in the data:
a 50/50 split at the fork, near-certainty afterwards where the data only
ever continues one way. Ambiguity lives exactly where the experience is
ambiguous.
"""

import numpy as np

from cmdrl import CommandPolicy, HorizonScheme, ReplayBuffer, fork_world, play_script
from cmdrl.core import make_command
from cmdrl.envs import FORK_ROUTE_DOWN, FORK_ROUTE_UP
from cmdrl.feedforward import BatchConfig, train_epoch
from cmdrl.nn import Adam
from cmdrl.rng import STREAM_LEARNER, counter_rng

env = fork_world()
scheme = HorizonScheme("identity", scale=float(env.spec.max_steps))

buffer = ReplayBuffer()
for i in range(20):
    buffer.add_episode(play_script(fork_world(), 1000 + i, FORK_ROUTE_UP))
    buffer.add_episode(play_script(fork_world(), 2000 + i, FORK_ROUTE_DOWN))
print(f"balanced experience: {len(buffer)} episodes, both routes pay "
      f"{buffer.best_return():.1f}")

policy = CommandPolicy(env.spec, scheme, hidden=(64, 64), seed=0)
policy.desire_scale = 9.6
opt = Adam(policy.net.params(), lr=1e-3)
rng = counter_rng(0, STREAM_LEARNER)
batch = BatchConfig(batch_size=128, batches_per_epoch=8, mix=(1.0, 0.0, 0.0))
for epoch in range(500):
    loss = train_epoch(policy, buffer, batch, opt, rng)
print(f"trained 500 epochs, final loss {loss:.4f}")
print()

names = ["up", "down", "left", "right"]
fork_obs = np.eye(9)[env.cell_index((1, 0))]
p = policy.action_probabilities(np.zeros(4), fork_obs, np.zeros(1),
                                make_command(3, [9.6], scheme))
print("at the fork (command: 9.6 within 4 moves):")
for name, prob in zip(names, p):
    print(f"  P({name:5s}) = {prob:.3f}")

post_obs = np.eye(9)[env.cell_index((0, 0))]
p = policy.action_probabilities(np.eye(4)[0], post_obs, np.array([-0.1]),
                                make_command(2, [9.7], scheme))
print("one step into the upper route (command: 9.7 within 3 moves):")
for name, prob in zip(names, p):
    print(f"  P({name:5s}) = {prob:.3f}")
print()
print("the fork stays stochastic; the continuation is confident.")
