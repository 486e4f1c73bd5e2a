"""
A small training run, start to finish
=====================================

The single-process pipeline: one in-process worker generates frames under a
frozen snapshot, the manager stores them, trains, and publishes the next
snapshot.  Networks are shrunk so this finishes in well under a minute.
"""

import tempfile
from pathlib import Path

from dodge_rl import metrics
from dodge_rl.config import load_config
from dodge_rl.distrib import prepare_holdout, run_local, Manager

cfg = load_config(None, dict(agent="dueling", shared_width=32, stream_width=32,
                             total_training_steps=1500, samples_per_upload=400,
                             train_batches_per_upload=100, replay_warmup=400,
                             replay_capacity=20_000, target_sync_every=500, holdout_size=200))

run_dir = Path(tempfile.mkdtemp(prefix="dodge_demo_"))
holdout = prepare_holdout(cfg, run_dir)
manager = Manager(cfg, run_dir, holdout)
start_q = metrics.mean_max_q(manager.ts.online, holdout)
run_local(cfg, run_dir, manager=manager)

print(f"{manager.step} updates from {manager.uploads} uploads, replay holds {len(manager.replay)}")
print(f"mean max-Q on the held-out states: {start_q:.4f} -> "
      f"{metrics.mean_max_q(manager.ts.online, holdout):.4f}")
print("files:", sorted(p.name for p in run_dir.iterdir()))

report = metrics.evaluate(manager.ts.online, 9, 20, seed=1, greedy=True)
print(report.summary())
