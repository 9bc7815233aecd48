#!/usr/bin/env python3
"""Hindsight relabeling on a hand-built episode.

An episode is just what happened. Every contiguous segment (k, j) of it can
be read backwards as a command the agent factually obeyed: "starting from
step k's situation, achieve the segment's reward within its step count."
This script builds a 4-step episode and prints the commands its segments
yield under the three relabelers.
"""

import numpy as np

from cmdrl import (
    Episode,
    HorizonScheme,
    encode_horizon,
    relabel_goal,
    relabel_morethan,
    relabel_segment,
)

# a 4-step episode over one-hot observations, scalar rewards
observations = [np.eye(6)[i] for i in (0, 2, 3, 4, 5)]
actions = [np.eye(2)[i] for i in (0, 1, 1, 0)]
rewards = [[1.0], [0.0], [-0.5], [2.0]]
episode = Episode.from_arrays(observations, actions, rewards, "demo", seed=0)

scheme = HorizonScheme("identity", scale=1.0)

print("episode rewards:", [r[0] for r in rewards], "total:", episode.scalar_return())
print()
print("exact relabels (desire = what the segment actually earned):")
for k, j in [(1, 4), (2, 3), (3, 3), (1, 1)]:
    s = relabel_segment(episode, k, j, scheme)
    print(f"  segment ({k},{j}): horizon={s.command.raw_steps} "
          f"desire={s.command.desire[0]:+.1f} target_action={np.argmax(s.target_action)}")

print()
print("lower-bound relabels (the morethan flag turns desire into a floor):")
for fraction in (0.5, 0.75, 0.875):
    s = relabel_morethan(episode, 1, 4, fraction, scheme)
    print(f"  fraction {fraction}: desire={s.command.desire[0]:+.3f} "
          f"(actual was {episode.reward_sum(1, 4)[0]:+.1f})")

print()
print("goal relabels (also command the observation the segment ended in):")
for k, j in [(1, 2), (2, 4)]:
    s = relabel_goal(episode, k, j, scheme)
    print(f"  segment ({k},{j}): goal cell index {np.argmax(s.command.goal_obs)}")

print()
print("horizon encodings of 0..6 steps under each scheme:")
for kind, kw in (("identity", {}), ("harmonic", {}), ("discounted", {"gamma": 0.8})):
    sch = HorizonScheme(kind, **kw)
    values = [float(encode_horizon(t, sch)[0]) for t in range(7)]
    print(f"  {kind:10s}: " + " ".join(f"{v:6.3f}" for v in values))
