"""
A tour of the dodge arena
=========================

Three fixed policies against every opponent level: standing still, mashing
random buttons, and the scripted dodge that reads the opponent's windup.
"""

import numpy as np

from dodge_rl import arena, metrics

# an episode ends at the first hit, so game length is the score
for level in (1, 5, 9):
    still = metrics.evaluate(None, level, 20, seed=0, policy=lambda st, x, rng: 0)
    mash = metrics.evaluate(None, level, 20, seed=0, policy=metrics.random_policy)
    print(f"level {level}: standing still lasts {still.mean_length:6.1f} frames, "
          f"random buttons {mash.mean_length:6.1f}")

# the scripted policy dodges so its invulnerable frames cover the swing
perfect = metrics.evaluate(None, 9, 20, seed=0,
                           policy=metrics.scripted_policy(arena.perfect_timing_policy))
print("perfect timing vs level 9:", perfect.survival_rate_60s, "of games survive 60 s")

# what the agent sees: 26 numbers, agent block first
st = arena.reset(9, seed=3)
for _ in range(50):
    st, reward, done = arena.step(st, arena.AgentAction.NOTHING)
x = arena.encode_state(st)
for name, value in zip(arena.FEATURE_NAMES, np.round(x, 3)):
    print(f"  {name:<24} {value}")
