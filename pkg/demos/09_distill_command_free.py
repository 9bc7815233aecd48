#!/usr/bin/env python3
"""Compress successful behavior into a policy without command inputs.

A command-following network must represent many behaviors at once, indexed
by desired reward and horizon. Once the behaviors worth keeping are known,
a smaller student can be trained to reproduce just those action sequences
from plain sensory history, with horizon/desire/flag input units removed
from its input layer entirely.
"""

import numpy as np

from cmdrl import GridWorld, ReplayBuffer, play_script, shortest_grid_script
from cmdrl.distill import (
    DistillConfig,
    distill,
    fidelity,
    rollout_command_free,
    structural_audit,
)
from cmdrl.core import step_input_width

starts = ((0, 0), (4, 0), (0, 4), (2, 2))
buffer = ReplayBuffer()
teachers = []
for i, start in enumerate(starts):
    world = GridWorld(starts=(start,))
    ep = play_script(world, 10 + i, shortest_grid_script(world, start))
    buffer.add_episode(ep)
    teachers.append(ep)
for i in range(4):  # some unsuccessful wandering the success rule will drop
    buffer.add_episode(play_script(GridWorld(max_steps=12), 50 + i, [0] * 12))

returns = sorted(round(r, 2) for r in buffer.returns())
print(f"buffer returns: {returns}")

student = distill(buffer, DistillConfig(rule="return_threshold", threshold=5.0,
                                        hidden_dim=32, epochs=1200, seed=0),
                  env_spec=GridWorld(starts=starts).spec)

spec = student.env_spec
print(f"\nstudent input width {student.net.in_dim} "
      f"(a command policy here would need {step_input_width(spec.m, spec.n, spec.o)})")
print(f"structural audit, no command inputs: "
      f"{'pass' if structural_audit(student) else 'FAIL'}")
print(f"action agreement on the successful episodes: "
      f"{fidelity(student, teachers):.3f}")

print("\ngreedy rollouts from every training start state:")
for i, start in enumerate(starts):
    ep = rollout_command_free(GridWorld(starts=(start,)), student, seed=10 + i)
    print(f"  start {start}: return {ep.scalar_return():.2f} in {ep.length} steps")
