"""Run configuration: flat ``key = value`` files with ``#`` comments.

Defaults are the published training constants (gamma 0.99, RMSProp lr
0.00025, batch 32, replay 1,000,000, target sync every 10,000 updates,
epsilon 1 -> 0.1 over the first quarter).  ``configs/desk.cfg`` holds the
smaller desk-scale overrides.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .agents import AgentKind, EpsilonSchedule
from .arena import ArenaConfig

RUN_DIR_ENV = "DODGE_RL_RUN_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # algorithm
    agent: str = "dueling_dqn"
    seed: int = 0
    total_training_steps: int = 200_000
    gamma: float = 0.99
    lr: float = 0.00025
    rmsprop_decay: float = 0.95
    rmsprop_eps: float = 1e-6
    batch_size: int = 32
    replay_capacity: int = 1_000_000
    replay_warmup: int = 1600
    target_sync_every: int = 10_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_anneal_fraction: float = 0.25
    td_clip: float = 1.0
    entropy_weight: float = 0.01
    hidden_widths: str = "128,256"
    shared_width: int = 128
    stream_width: int = 512
    # arena
    level_mix_top: float = 0.7
    frame_skip_p: float = 0.0
    dodge_frames: int = 29
    dodge_invuln_start: int = 4
    dodge_invuln_end: int = 19
    side_dodge_distance: float = 12.0
    shine_frames: int = 21
    shine_active_end: int = 8
    shine_radius: float = 10.0
    shine_push: float = 15.0
    train_episode_cap: int = 0
    eval_episode_cap: int = 3600
    # distribution
    samples_per_upload: int = 5400
    train_batches_per_upload: int = 100
    snapshot_every_uploads: int = 15
    workers: int = 50
    worker_id: int = 0
    listen_address: str = "127.0.0.1:5555"
    connect_address: str = "127.0.0.1:5555"
    connect_retries: int = 8
    retry_base_seconds: float = 1.0
    retry_cap_seconds: float = 60.0
    max_uploads: int = 0
    # evaluation / metrics
    holdout_size: int = 1000
    eval_level: int = 9
    eval_episodes: int = 200
    eval_epsilon: float = 0.05
    eval_greedy: bool = False
    eval_frame_skip_p: float = 0.0
    # bookkeeping
    run_dir: str = ""
    explicit: frozenset = field(default=frozenset(), repr=False, compare=False)

    # keys that only make sense for some agents
    ONLY_FOR = {
        "hidden_widths": {AgentKind.DQN, AgentKind.DOUBLE_DQN},
        "shared_width": {AgentKind.DUELING_DQN, AgentKind.A3C},
        "stream_width": {AgentKind.DUELING_DQN, AgentKind.A3C},
        "entropy_weight": {AgentKind.A3C},
    }

    @property
    def kind(self) -> AgentKind:
        return AgentKind.parse(self.agent)

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self.hidden_widths.replace(" ", "").split(",") if w)

    def arena_config(self) -> ArenaConfig:
        return ArenaConfig(
            dodge_frames=self.dodge_frames,
            dodge_invuln=(self.dodge_invuln_start, self.dodge_invuln_end),
            side_dodge_distance=self.side_dodge_distance,
            shine_frames=self.shine_frames,
            shine_active=(1, self.shine_active_end),
            shine_radius=self.shine_radius,
            shine_push=self.shine_push,
            frame_skip_p=self.frame_skip_p,
        )

    def eval_arena_config(self) -> ArenaConfig:
        """Arena for evaluation: same timings, its own frame-skip probability."""
        return dataclasses.replace(self.arena_config(), frame_skip_p=self.eval_frame_skip_p)

    def epsilon_schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule.for_training(self.total_training_steps, self.epsilon_anneal_fraction,
                                            self.epsilon_start, self.epsilon_end)

    def resolved_run_dir(self) -> Path:
        return Path(self.run_dir or os.environ.get(RUN_DIR_ENV) or "runs/default")

    def validate(self) -> "RunConfig":
        try:
            kind = self.kind
        except ValueError:
            raise ConfigError(f"unknown agent {self.agent!r}") from None
        for key, kinds in self.ONLY_FOR.items():
            if key in self.explicit and kind not in kinds:
                allowed = ", ".join(sorted(k.value for k in kinds))
                raise ConfigError(f"{key} applies only to {allowed}, not {kind.value}")
        checks = [
            (0 <= self.gamma < 1, "gamma must lie in [0, 1)"),
            (self.lr > 0, "lr must be positive"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (self.replay_capacity >= 1, "replay_capacity must be positive"),
            (self.replay_warmup >= self.batch_size, "replay_warmup must be at least batch_size"),
            (self.target_sync_every >= 1, "target_sync_every must be positive"),
            (self.epsilon_start >= self.epsilon_end >= 0, "need epsilon_start >= epsilon_end >= 0"),
            (0 < self.epsilon_anneal_fraction <= 1, "epsilon_anneal_fraction must be in (0, 1]"),
            (0 <= self.level_mix_top <= 1, "level_mix_top must be a probability"),
            (0 <= self.frame_skip_p <= 1, "frame_skip_p must be a probability"),
            (0 <= self.eval_frame_skip_p <= 1, "eval_frame_skip_p must be a probability"),
            (self.total_training_steps >= 1, "total_training_steps must be positive"),
            (self.samples_per_upload >= 1, "samples_per_upload must be positive"),
            (self.train_batches_per_upload >= 0, "train_batches_per_upload must be >= 0"),
            (self.snapshot_every_uploads >= 1, "snapshot_every_uploads must be positive"),
            (1 <= self.eval_level <= 9, "eval_level must be in 1..9"),
            (self.eval_episodes >= 1, "eval_episodes must be positive"),
            (self.holdout_size >= 1, "holdout_size must be positive"),
            (1 <= self.dodge_invuln_start <= self.dodge_invuln_end <= self.dodge_frames,
             "dodge invulnerability window must lie inside the dodge animation"),
            (1 <= self.shine_active_end <= self.shine_frames, "shine_active_end out of range"),
            (all(w > 0 for w in self.hidden), "hidden_widths must be positive integers"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    def to_text(self) -> str:
        lines = ["# effective configuration"]
        for f in fields(self):
            if f.name == "explicit":
                continue
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


CONFIG_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "explicit"}
# annotations are strings under `from __future__ import annotations`
_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _coerce(name: str, raw: str):
    kind = _TYPES[CONFIG_FIELDS[name].type]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw.replace("_", ""))
        if kind is float:
            return float(raw.replace("_", ""))
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file (if any), then ``overrides``; returns a validated config."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    for key, raw in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in CONFIG_FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    cfg = RunConfig(**values)
    cfg = dataclasses.replace(cfg, explicit=frozenset(values))
    return cfg.validate()
