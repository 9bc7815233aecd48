#!/usr/bin/env python3
"""Sampling multi-component actions one component at a time.

Suppose good behavior uses the 2-bit actions 00 and 11, each half the time,
and never 01 or 10. A head that samples the two bits independently cannot
represent that: it would emit the forbidden patterns half the time. Splitting
each step into micro steps, where bit i conditions on bit i-1 through an
extra action input unit, lets the learned joint match the data.
"""

import itertools

import numpy as np

from cmdrl import Episode, EnvSpec, HorizonScheme, RecurrentCommandPolicy, ReplayBuffer
from cmdrl.core import make_command
from cmdrl.feedforward import BatchConfig
from cmdrl.nn import Adam
from cmdrl.recurrent import act_autoregressive, autoregressive_joint, train_epoch_rnn
from cmdrl.rng import STREAM_LEARNER, counter_rng

spec = EnvSpec(m=1, n=1, o=2, action_kind="multi_binary", max_steps=1, markovian=True)
scheme = HorizonScheme("identity")

buffer = ReplayBuffer()
for i in range(20):
    buffer.add_episode(Episode.from_arrays([[1.0], [1.0]], [[0.0, 0.0]], [[1.0]],
                                           "pattern", 100 + i))
    buffer.add_episode(Episode.from_arrays([[1.0], [1.0]], [[1.0, 1.0]], [[1.0]],
                                           "pattern", 200 + i))
print("experience: patterns 00 and 11, balanced, reward 1.0 each")

policy = RecurrentCommandPolicy(spec, scheme, hidden_dim=16, autoregressive=True,
                                seed=0)
opt = Adam(policy.net.params(), lr=3e-3)
rng = counter_rng(0, STREAM_LEARNER)
batch = BatchConfig(batch_size=32, batches_per_epoch=4, mix=(1.0, 0.0, 0.0))
for _ in range(600):
    train_epoch_rnn(policy, buffer, batch, opt, rng)

cmd = make_command(0, [1.0], scheme)
joint = autoregressive_joint(policy, policy.net.initial_state(1), np.zeros(2),
                             np.array([1.0]), np.zeros(1), cmd)
print("\nlearned joint over the four patterns (sums to "
      f"{sum(joint.values()):.6f}):")
for pattern in itertools.product((0.0, 1.0), repeat=2):
    bits = "".join(str(int(b)) for b in pattern)
    print(f"  P({bits}) = {joint[pattern]:.4f}")

srng = counter_rng(99)
counts = {p: 0 for p in joint}
for _ in range(10_000):
    a, _ = act_autoregressive(policy, policy.net.initial_state(1), np.zeros(2),
                              np.array([1.0]), np.zeros(1), cmd, srng)
    counts[tuple(a)] += 1
forbidden = counts[(0.0, 1.0)] + counts[(1.0, 0.0)]
print(f"\n10000 sampled actions: forbidden patterns 01/10 appeared "
      f"{forbidden} times ({forbidden / 100:.2f}%)")
print("an independent-bits head would have emitted them ~50% of the time.")
