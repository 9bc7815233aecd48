#!/usr/bin/env python3
"""A cautionary result: the episodic Gaussian head averages two good answers
into one bad one.

In obstacle_line, actions 0.0 and 1.0 both pay 10.0 and everything in the
middle pays nothing. Trained across episodes on balanced successes with the
command "get 10", a Gaussian output head dutifully learns the conditional
mean of the successful actions: 0.5, which walks straight into the obstacle.
The unimodal parametric assumption, not the learning rule, is what fails
here; the discrete-path equivalent of this ambiguity (see the fork demo)
stays perfectly usable as a probability.
"""

import numpy as np

from cmdrl import CommandPolicy, HorizonScheme, ObstacleLine, ReplayBuffer, play_script
from cmdrl.core import make_command
from cmdrl.feedforward import BatchConfig, train_epoch
from cmdrl.nn import Adam
from cmdrl.rng import STREAM_LEARNER, counter_rng

env = ObstacleLine()
scheme = HorizonScheme("identity", scale=1.0)

buffer = ReplayBuffer()
for i in range(20):
    buffer.add_episode(play_script(ObstacleLine(), 100 + i, [[0.0]]))
    buffer.add_episode(play_script(ObstacleLine(), 200 + i, [[1.0]]))
print("experience: 20 episodes of action 0.0 and 20 of action 1.0, all paid 10.0")

policy = CommandPolicy(env.spec, scheme, hidden=(32, 32), seed=0)
policy.desire_scale = 10.0
opt = Adam(policy.net.params(), lr=1e-3)
rng = counter_rng(0, STREAM_LEARNER)
batch = BatchConfig(batch_size=64, batches_per_epoch=4, mix=(1.0, 0.0, 0.0))
for _ in range(400):
    train_epoch(policy, buffer, batch, opt, rng)

z = policy.output(policy.build_input(np.zeros(1), np.array([1.0]), np.zeros(1),
                                     make_command(0, [10.0], scheme)))
mean, var = policy.head.mean_and_var(z)
print(f"\ncommanded 'get 10.0 now', the Gaussian head proposes:")
print(f"  mean action {mean[0]:.3f} (std {np.sqrt(var[0]):.3f})")
print(f"  reward at the mean action: {ObstacleLine.reward_for(mean[0]):.1f}")
print(f"  reward at the actions it averaged: "
      f"{ObstacleLine.reward_for(0.0):.1f} and {ObstacleLine.reward_for(1.0):.1f}")
