"""
Why Double DQN exists
=====================

One state, eight actions, rewards that are pure noise.  Every action is
worth exactly zero, yet the max in the DQN target keeps picking whichever
estimate is luckiest.  Double DQN lets the online net choose and the target
net evaluate, which takes most of that optimism out.
"""

import numpy as np

from dodge_rl.agents import AgentKind, TrainState, train_batch
from dodge_rl.nncore import Activation, Head, LayerSpec, Network, predict
from dodge_rl.replay import Batch


def fit(kind, seed, batches=1500):
    rng = np.random.default_rng(seed)
    net = Network([LayerSpec(1, 8, Activation.IDENTITY)], Head.SINGLE,
                  [np.zeros((8, 1), np.float32)], [np.zeros(8, np.float32)])
    ts = TrainState.create(net, lr=0.001, target_sync_every=100)
    one = np.ones((32, 1), np.float32)
    for _ in range(batches):
        noise = rng.normal(size=32).astype(np.float32)
        train_batch(ts, kind, Batch(one, rng.integers(8, size=32), noise, one, np.zeros(32, bool)))
    return predict(ts.online, np.ones(1, np.float32)).max()


for seed in range(5):
    print(f"seed {seed}: max Q  dqn {fit(AgentKind.DQN, seed):+.3f}   "
          f"double {fit(AgentKind.DOUBLE_DQN, seed):+.3f}   (truth 0)")
