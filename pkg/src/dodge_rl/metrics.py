"""Episode reward, game length, mean-max Q on held-out states, minute survival."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import arena
from .agents import select_action
from .nncore import Head, Network, predict

SURVIVAL_FRAMES = 3600

Policy = Callable[[arena.ArenaState, np.ndarray, np.random.Generator], int]


@dataclass
class HoldoutSet:
    states: np.ndarray  # (n, N_FEATURES) float32
    seed: int
    levels: np.ndarray  # opponent level each state was drawn under

    def __len__(self):
        return len(self.states)

    def save(self, path) -> None:
        np.savez(path, states=self.states, seed=self.seed, levels=self.levels)

    @classmethod
    def load(cls, path) -> "HoldoutSet":
        with np.load(path) as z:
            return cls(z["states"], int(z["seed"]), z["levels"])


def build_holdout(config: arena.ArenaConfig = arena.DEFAULT_CONFIG, n: int = 1000, seed: int = 0,
                  min_episodes: int = 50, min_levels: int = 5, top_share: float = 0.7) -> HoldoutSet:
    """Reservoir-sample ``n`` encoded states from uniform-random play at mixed levels."""
    rng = np.random.default_rng(seed)
    reservoir = np.zeros((n, arena.N_FEATURES), dtype=np.float32)
    levels = np.zeros(n, dtype=np.int64)
    seen = 0
    episodes = 0
    levels_seen: set[int] = set()
    while episodes < min_episodes or len(levels_seen) < min_levels or seen < n:
        level = arena.sample_opponent_level(rng, top_share)
        levels_seen.add(level)
        st = arena.reset(level, int(rng.integers(2**63)), config)
        terminal = False
        while not terminal:
            x = arena.encode_state(st)
            if seen < n:
                reservoir[seen], levels[seen] = x, level
            else:
                j = int(rng.integers(seen + 1))
                if j < n:
                    reservoir[j], levels[j] = x, level
            seen += 1
            st, _, terminal = arena.step(st, int(rng.integers(arena.N_ACTIONS)), config)
        episodes += 1
    return HoldoutSet(reservoir, seed, levels)


def mean_max_q(net: Network, hs: HoldoutSet | np.ndarray) -> float:
    """Mean over states of max_a Q(s, a); the critic's V for actor-critic heads."""
    states = hs.states if isinstance(hs, HoldoutSet) else np.asarray(hs)
    out = predict(net, states).astype(np.float64)
    if net.head is Head.ACTOR_CRITIC:
        return float(out[:, -1].mean())
    return float(out.max(axis=1).mean())


@dataclass
class LevelStats:
    episodes: int = 0
    total_length: int = 0
    survived: int = 0
    total_reward: float = 0.0

    def add(self, other: "LevelStats") -> None:
        self.episodes += other.episodes
        self.total_length += other.total_length
        self.survived += other.survived
        self.total_reward += other.total_reward


@dataclass
class EvalReport:
    lengths: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    levels: list[int] = field(default_factory=list)
    idle_frames: list[int] = field(default_factory=list)
    cap: int = SURVIVAL_FRAMES

    @property
    def episodes(self) -> int:
        return len(self.lengths)

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.lengths)) if self.lengths else 0.0

    @property
    def median_length(self) -> float:
        return float(np.median(self.lengths)) if self.lengths else 0.0

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else 0.0

    @property
    def mean_seconds(self) -> float:
        return self.mean_length / arena.FPS

    @property
    def survival_rate_60s(self) -> float:
        if not self.lengths:
            return 0.0
        return float(np.mean(np.asarray(self.lengths) >= SURVIVAL_FRAMES))

    def per_level(self) -> dict[int, LevelStats]:
        out: dict[int, LevelStats] = {}
        for n, r, lvl in zip(self.lengths, self.rewards, self.levels):
            s = out.setdefault(lvl, LevelStats())
            s.add(LevelStats(1, n, int(n >= SURVIVAL_FRAMES), r))
        return dict(sorted(out.items()))

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.lengths + other.lengths, self.rewards + other.rewards,
                          self.levels + other.levels, self.idle_frames + other.idle_frames,
                          self.cap)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "episodes", "mean_length", "mean_seconds", "mean_reward",
                    "survival_rate_60s"])
        for lvl, s in self.per_level().items():
            w.writerow([lvl, s.episodes, f"{s.total_length / s.episodes:.3f}",
                        f"{s.total_length / s.episodes / arena.FPS:.4f}",
                        f"{s.total_reward / s.episodes:.6f}", f"{s.survived / s.episodes:.4f}"])
        w.writerow(["all", self.episodes, f"{self.mean_length:.3f}", f"{self.mean_seconds:.4f}",
                    f"{self.mean_reward:.6f}", f"{self.survival_rate_60s:.4f}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def summary(self) -> str:
        lines = [
            f"episodes           {self.episodes}",
            f"mean game length   {self.mean_length:.1f} frames ({self.mean_seconds:.2f} s)",
            f"median game length {self.median_length:.1f} frames",
            f"mean reward        {self.mean_reward:.4f}",
            f"survival_rate_60s  {self.survival_rate_60s:.4f}",
        ]
        for lvl, s in self.per_level().items():
            lines.append(f"  level {lvl}: {s.episodes} episodes, "
                         f"mean length {s.total_length / s.episodes:.1f}, "
                         f"survival {s.survived / s.episodes:.3f}")
        return "\n".join(lines)


def network_policy(net: Network, epsilon: float) -> Policy:
    def policy(st, features, rng):
        return select_action(net, features, epsilon, rng)
    return policy


def scripted_policy(fn) -> Policy:
    def policy(st, features, rng):
        return int(fn(st))
    return policy


def random_policy(st, features, rng) -> int:
    return int(rng.integers(arena.N_ACTIONS))


def run_episode(policy: Policy, level: int, seed: int, rng: np.random.Generator,
                config: arena.ArenaConfig = arena.DEFAULT_CONFIG, cap: int = SURVIVAL_FRAMES):
    """Play one episode; returns ``(length, reward, idle_zero_damage_frames)``."""
    st = arena.reset(level, seed, config)
    reward = 0.0
    idle_frames = 0
    for t in range(cap):
        action = arena.apply_frame_skip(policy(st, arena.encode_state(st), rng),
                                        config.frame_skip_p, rng)
        st, r, terminal = arena.step(st, action, config)
        reward += r
        idle_frames += r > 0
        if terminal:
            return t + 1, reward, idle_frames
    return cap, reward, idle_frames


def evaluate(net: Network | None, level: int = 9, episodes: int = 200, seed: int = 0,
             greedy: bool = False, *, epsilon: float = 0.05, policy: Policy | None = None,
             config: arena.ArenaConfig = arena.DEFAULT_CONFIG,
             cap: int = SURVIVAL_FRAMES) -> EvalReport:
    """Run capped evaluation episodes against one opponent level.

    ``net`` acts epsilon-greedily (``epsilon`` = 0 when ``greedy``); pass
    ``policy`` instead to evaluate a scripted or random controller.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if policy is None:
        if net is None:
            raise ValueError("need a network or a policy")
        policy = network_policy(net, 0.0 if greedy else epsilon)
    rng = np.random.default_rng(seed)
    report = EvalReport(cap=cap)
    for _ in range(episodes):
        n, r, idle = run_episode(policy, level, int(rng.integers(2**63)), rng, config, cap)
        report.lengths.append(n)
        report.rewards.append(r)
        report.levels.append(level)
        report.idle_frames.append(idle)
    return report
