"""DQN, Double DQN, Dueling DQN and a replay-based actor-critic.

All four share one :class:`TrainState`: an online network, a frozen target
copy refreshed every ``target_sync_every`` updates, and RMSProp state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .nncore import (
    Head,
    Network,
    NonFiniteError,
    OptState,
    backward,
    dueling_combine,
    forward,
    init_network,
    mlp_specs,
    predict,
    rmsprop_step,
    two_stream_specs,
)
from .replay import Batch

log = logging.getLogger(__name__)


class AgentKind(str, Enum):
    DQN = "dqn"
    DOUBLE_DQN = "double_dqn"
    DUELING_DQN = "dueling_dqn"
    A3C = "a3c"

    @property
    def head(self) -> Head:
        return {
            AgentKind.DQN: Head.SINGLE,
            AgentKind.DOUBLE_DQN: Head.SINGLE,
            AgentKind.DUELING_DQN: Head.DUELING,
            AgentKind.A3C: Head.ACTOR_CRITIC,
        }[self]

    @classmethod
    def parse(cls, name: str) -> "AgentKind":
        aliases = {"double": "double_dqn", "dueling": "dueling_dqn", "ddqn": "double_dqn",
                   "actor_critic": "a3c"}
        name = name.strip().lower().replace("-", "_")
        return cls(aliases.get(name, name))


def build_network(kind: AgentKind, n_in: int, n_actions: int, seed: int,
                  hidden=(128, 256), shared=(128,), stream=(512,)) -> Network:
    """Default architectures: 128/256 relu stack, or a 128-unit trunk with two 512-unit streams."""
    kind = AgentKind(kind)
    if kind.head is Head.SINGLE:
        specs = mlp_specs(n_in, hidden, n_actions)
    else:
        specs = two_stream_specs(n_in, n_actions, kind.head, shared, stream)
    return init_network(specs, kind.head, seed)


def check_kind(net: Network, kind: AgentKind) -> None:
    if net.head is not AgentKind(kind).head:
        raise ValueError(f"{AgentKind(kind).value} needs a {AgentKind(kind).head.value} head, "
                         f"got {net.head.value}")


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.1
    anneal_steps: int = 1

    def __post_init__(self):
        if not (self.start >= self.end >= 0):
            raise ValueError("need start >= end >= 0")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be positive")

    @classmethod
    def for_training(cls, total_steps: int, fraction: float = 0.25, start=1.0, end=0.1):
        return cls(start, end, max(1, int(total_steps * fraction)))


def epsilon_at(sched: EpsilonSchedule, step: int) -> float:
    if step >= sched.anneal_steps:
        return sched.end
    frac = max(step, 0) / sched.anneal_steps
    return sched.start + frac * (sched.end - sched.start)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def greedy_values(net: Network, out: np.ndarray) -> np.ndarray:
    """Per-action scores the greedy policy maximises."""
    if net.head is Head.ACTOR_CRITIC:
        return out[..., :-1]
    return out


def select_action(net: Network, state, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over Q (lowest index wins ties); actor-critic samples its policy."""
    out = predict(net, state)
    n = net.n_actions
    if net.head is Head.ACTOR_CRITIC:
        probs = softmax(out[:-1].astype(np.float64))
        return int(rng.choice(n, p=probs))
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(n))
    return int(np.argmax(out))


def _as_batch(batch) -> Batch:
    return batch if isinstance(batch, Batch) else Batch.from_transitions(batch)


def compute_targets_dqn(batch, target_net: Network, gamma: float) -> np.ndarray:
    b = _as_batch(batch)
    q_next = predict(target_net, b.next_states)
    boot = q_next.max(axis=1)
    return np.where(b.terminals, b.rewards, b.rewards + gamma * boot).astype(np.float32)


def compute_targets_double(batch, online: Network, target: Network, gamma: float) -> np.ndarray:
    b = _as_batch(batch)
    pick = predict(online, b.next_states).argmax(axis=1)
    q_eval = predict(target, b.next_states)
    boot = q_eval[np.arange(len(b)), pick]
    return np.where(b.terminals, b.rewards, b.rewards + gamma * boot).astype(np.float32)


def dueling_aggregate(value: float, advantages) -> np.ndarray:
    a = np.asarray(advantages, dtype=np.float64)
    return dueling_combine(np.array([value], dtype=np.float64), a[None, :])[0]


@dataclass
class TrainState:
    online: Network
    target: Network
    opt: OptState
    step: int = 0
    gamma: float = 0.99
    lr: float = 0.00025
    target_sync_every: int = 10_000
    entropy_weight: float = 0.01
    td_clip: float = 1.0
    skipped_batches: int = 0

    @classmethod
    def create(cls, net: Network, *, gamma=0.99, lr=0.00025, target_sync_every=10_000,
               entropy_weight=0.01, td_clip=1.0, decay=0.95, eps=1e-6) -> "TrainState":
        if not 0 <= gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        online = net.copy()
        return cls(online, online.copy(), OptState.for_network(online, decay, eps),
                   gamma=gamma, lr=lr, target_sync_every=target_sync_every,
                   entropy_weight=entropy_weight, td_clip=td_clip)

    def sync_target(self) -> None:
        self.target.load_(self.online)

    def _apply(self, grads) -> bool:
        try:
            rmsprop_step(self.online, grads, self.opt, self.lr, inplace=True)
        except NonFiniteError as exc:
            self.skipped_batches += 1
            log.warning("skipping batch at step %d: %s", self.step, exc)
            return False
        return True

    def _advance(self) -> None:
        self.step += 1
        if self.step % self.target_sync_every == 0:
            self.sync_target()


def td_targets(ts: TrainState, kind: AgentKind, batch: Batch) -> np.ndarray:
    if AgentKind(kind) is AgentKind.DQN:
        return compute_targets_dqn(batch, ts.target, ts.gamma)
    return compute_targets_double(batch, ts.online, ts.target, ts.gamma)


def train_batch(ts: TrainState, kind: AgentKind, batch) -> float:
    """One Q-learning update on the online network; returns the mean Huber loss.

    The TD error ``target - Q(s, a)`` is clipped to ``[-td_clip, td_clip]`` before
    backprop, which is the gradient of the Huber loss reported here.
    """
    kind = AgentKind(kind)
    if kind is AgentKind.A3C:
        pl, vl, _ = a3c_update(ts, batch)
        return pl + vl
    check_kind(ts.online, kind)
    b = _as_batch(batch)
    targets = td_targets(ts, kind, b)
    acts = forward(ts.online, b.states)
    rows = np.arange(len(b))
    delta = targets - acts.output[rows, b.actions]
    absd = np.abs(delta)
    c = ts.td_clip
    loss = float(np.mean(np.where(absd <= c, 0.5 * delta * delta, c * (absd - 0.5 * c))))
    if not np.isfinite(loss):
        ts.skipped_batches += 1
        log.warning("non-finite loss at step %d, batch skipped", ts.step)
        ts._advance()
        return loss
    grad_out = np.zeros_like(acts.output)
    grad_out[rows, b.actions] = -np.clip(delta, -c, c) / len(b)
    ts._apply(backward(ts.online, acts, grad_out))
    ts._advance()
    return loss


def a3c_losses(net: Network, target: Network, batch: Batch, gamma: float, entropy_weight: float):
    """Combined actor-critic loss pieces and the cotangent of their sum w.r.t. the output.

    Returns ``(policy_loss, value_loss, entropy, acts, grad_out)``.  The
    advantage is a constant for the policy term.
    """
    acts = forward(net, batch.states)
    n = len(batch)
    rows = np.arange(n)
    logits = acts.logits.astype(np.float64)
    v = acts.value.astype(np.float64)
    v_next = predict(target, batch.next_states)[:, -1].astype(np.float64)
    r = batch.rewards.astype(np.float64)
    ret = np.where(batch.terminals, r, r + gamma * v_next)
    adv = ret - v

    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(logp)
    ent = -(probs * logp).sum(axis=1)

    policy_loss = float(np.mean(-logp[rows, batch.actions] * adv - entropy_weight * ent))
    value_loss = float(np.mean(0.5 * adv * adv))
    entropy = float(np.mean(ent))

    onehot = np.zeros_like(probs)
    onehot[rows, batch.actions] = 1.0
    d_logits = (probs - onehot) * adv[:, None]
    # d(-H)/dz_j = p_j (log p_j + H)
    d_logits += entropy_weight * probs * (logp + ent[:, None])
    d_value = -adv
    grad_out = np.concatenate([d_logits, d_value[:, None]], axis=1) / n
    return policy_loss, value_loss, entropy, acts, grad_out


def a3c_update(ts: TrainState, batch) -> tuple[float, float, float]:
    """One actor-critic step from replay with a frozen target critic."""
    check_kind(ts.online, AgentKind.A3C)
    b = _as_batch(batch)
    pl, vl, ent, acts, grad_out = a3c_losses(ts.online, ts.target, b, ts.gamma, ts.entropy_weight)
    if not (np.isfinite(pl) and np.isfinite(vl)):
        ts.skipped_batches += 1
        log.warning("non-finite actor-critic loss at step %d, batch skipped", ts.step)
    else:
        ts._apply(backward(ts.online, acts, grad_out))
    ts._advance()
    return pl, vl, ent


__all__ = [
    "AgentKind",
    "EpsilonSchedule",
    "TrainState",
    "a3c_losses",
    "a3c_update",
    "build_network",
    "compute_targets_double",
    "compute_targets_dqn",
    "dueling_aggregate",
    "epsilon_at",
    "greedy_values",
    "select_action",
    "softmax",
    "train_batch",
]
