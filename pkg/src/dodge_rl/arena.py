"""Deterministic 60 fps dodge arena.

The agent (left spawn) can only idle, dodge or shine.  The opponent is a
scripted swordfighter: it walks into range of its next attack, waits a
reaction delay, telegraphs a windup, swings, recovers and cools down.  All
behavioural parameters (reaction, cooldown, approach speed) scale
monotonically with the opponent level (1..9); the windup length is a property
of the sword, not of the AI, and is the same at every level.

Frame order inside :func:`step`:

1. the agent's animation advances; a new action is accepted only when idle;
2. side dodges translate the agent, an active shine repels the opponent;
3. the opponent state machine advances one frame and moves;
4. an active opponent attack in reach hits a vulnerable agent;
5. stage bounds, reward and terminal flag are evaluated.

Randomness comes from a counter-based generator stored in the state, so a
state is a plain value that can be copied, compared and replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

FPS = 60
N_ACTIONS = 5
FEATURES_PER_FIGHTER = 13
N_FEATURES = 2 * FEATURES_PER_FIGHTER
IDLE_FRAME_CAP = 179
DAMAGE_ENCODE_CAP = 300.0
# Windup frames before an attack turns active, identical at every level.
TELEGRAPH_FRAMES = 18

_MASK64 = (1 << 64) - 1


class AgentAction(IntEnum):
    NOTHING = 0
    DODGE_LEFT = 1
    DODGE_RIGHT = 2
    DODGE_STAND = 3
    SHINE = 4


class ActionState(IntEnum):
    IDLE = 0
    DODGE_LEFT = 1
    DODGE_RIGHT = 2
    DODGE_STAND = 3
    SHINE = 4
    ATTACK_WINDUP = 5
    ATTACK_ACTIVE = 6
    ATTACK_RECOVER = 7
    HITSTUN = 8


class Attack(IntEnum):
    THRUST = 0
    SLASH = 1
    GRAB = 2


@dataclass(frozen=True)
class AttackData:
    reach: float
    active: int
    recovery: int
    damage: float
    beats_shine: bool


ATTACKS = {
    Attack.THRUST: AttackData(reach=28.0, active=4, recovery=24, damage=13.0, beats_shine=False),
    Attack.SLASH: AttackData(reach=18.0, active=3, recovery=16, damage=10.0, beats_shine=False),
    Attack.GRAB: AttackData(reach=9.0, active=2, recovery=20, damage=8.0, beats_shine=True),
}


@dataclass(frozen=True)
class OpponentProfile:
    level: int
    reaction_delay: int
    attack_cooldown_range: tuple[int, int]
    approach_speed: float
    attack_mix: tuple[float, float, float]  # thrust, slash, grab
    telegraph_frames: int

    @classmethod
    def for_level(cls, level: int) -> "OpponentProfile":
        if not 1 <= level <= 9:
            raise ValueError(f"opponent level must be in 1..9, got {level}")
        t = (level - 1) / 8
        return cls(
            level=level,
            reaction_delay=round(12 - 10 * t),
            attack_cooldown_range=(round(60 - 35 * t), round(100 - 50 * t)),
            approach_speed=0.6 + 0.9 * t,
            attack_mix=(0.35, 0.40, 0.25),
            telegraph_frames=TELEGRAPH_FRAMES,
        )


PROFILES = {lvl: OpponentProfile.for_level(lvl) for lvl in range(1, 10)}


@dataclass(frozen=True)
class ArenaConfig:
    stage_half_width: float = 85.0
    bounds_margin: float = 10.0
    spawn_x: float = 40.0
    dodge_frames: int = 29
    dodge_invuln: tuple[int, int] = (4, 19)
    side_dodge_distance: float = 12.0
    shine_frames: int = 21
    shine_active: tuple[int, int] = (1, 8)
    shine_radius: float = 10.0
    shine_push: float = 15.0
    shine_damage: float = 3.0
    shine_stun: int = 12
    hitstun_frames: int = 30
    frame_skip_p: float = 0.0

    def duration(self, state: ActionState) -> int:
        if state in (ActionState.DODGE_LEFT, ActionState.DODGE_RIGHT, ActionState.DODGE_STAND):
            return self.dodge_frames
        if state is ActionState.SHINE:
            return self.shine_frames
        return 0


DEFAULT_CONFIG = ArenaConfig()


@dataclass
class FighterState:
    x: float
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    action_state: ActionState = ActionState.IDLE
    action_frame: int = 0
    facing: int = 1  # +1 right, -1 left
    charging: bool = False
    airborne: bool = False
    shield: float = 60.0
    jumps_used: int = 0
    hitlag: int = 0
    damage: float = 0.0

    def copy(self) -> "FighterState":
        return replace(self)


@dataclass
class OpponentMemory:
    """Script bookkeeping that is not part of the observable fighter state."""

    next_attack: Attack = Attack.SLASH
    cooldown: int = 0
    in_range_frames: int = 0
    attack: Attack = Attack.SLASH
    hit_landed: bool = False


@dataclass
class ArenaState:
    agent: FighterState
    opponent: FighterState
    memory: OpponentMemory
    frame: int
    opponent_level: int
    seed: int
    rng_counter: int = 0
    terminal: bool = False

    def copy(self) -> "ArenaState":
        return ArenaState(self.agent.copy(), self.opponent.copy(), replace(self.memory),
                          self.frame, self.opponent_level, self.seed, self.rng_counter,
                          self.terminal)

    @property
    def profile(self) -> OpponentProfile:
        return PROFILES[self.opponent_level]


class ArenaError(RuntimeError):
    pass


# --- counter-based randomness -------------------------------------------------

def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _uniform(st: ArenaState) -> float:
    st.rng_counter += 1
    bits = _splitmix64((st.seed * 0x2545F4914F6CDD1D + st.rng_counter) & _MASK64)
    return (bits >> 11) / float(1 << 53)


def _randint(st: ArenaState, lo: int, hi: int) -> int:
    """Uniform integer in [lo, hi]."""
    return lo + min(int(_uniform(st) * (hi - lo + 1)), hi - lo)


def _pick_attack(st: ArenaState) -> Attack:
    u = _uniform(st)
    acc = 0.0
    for attack, p in zip(Attack, st.profile.attack_mix):
        acc += p
        if u < acc:
            return attack
    return Attack.GRAB


# --- public API ---------------------------------------------------------------

def reset(level: int, seed: int, config: ArenaConfig = DEFAULT_CONFIG) -> ArenaState:
    if not 1 <= int(level) <= 9:
        raise ArenaError(f"opponent level must be in 1..9, got {level}")
    agent = FighterState(x=-config.spawn_x, facing=1)
    opponent = FighterState(x=config.spawn_x, facing=-1)
    st = ArenaState(agent, opponent, OpponentMemory(), 0, int(level), int(seed) & _MASK64)
    first = _pick_attack(st)
    st.memory.next_attack = first
    st.memory.attack = first
    return st


def is_invulnerable(f: FighterState, config: ArenaConfig = DEFAULT_CONFIG) -> bool:
    if f.action_state in (ActionState.DODGE_LEFT, ActionState.DODGE_RIGHT, ActionState.DODGE_STAND):
        lo, hi = config.dodge_invuln
        return lo <= f.action_frame + 1 <= hi
    return False


def is_actionable(f: FighterState) -> bool:
    return f.action_state is ActionState.IDLE and f.hitlag == 0


_ACTION_TO_STATE = {
    AgentAction.DODGE_LEFT: ActionState.DODGE_LEFT,
    AgentAction.DODGE_RIGHT: ActionState.DODGE_RIGHT,
    AgentAction.DODGE_STAND: ActionState.DODGE_STAND,
    AgentAction.SHINE: ActionState.SHINE,
}


def _advance_agent(a: FighterState, action: int, opp_x: float, cfg: ArenaConfig) -> None:
    if a.action_state is not ActionState.IDLE:
        a.action_frame += 1
        if a.action_frame >= cfg.duration(a.action_state):
            a.action_state = ActionState.IDLE
            a.action_frame = 0
    elif a.action_frame < IDLE_FRAME_CAP:
        a.action_frame += 1

    if a.action_state is ActionState.IDLE:
        a.facing = 1 if opp_x >= a.x else -1
        if action != AgentAction.NOTHING and a.hitlag == 0:
            a.action_state = _ACTION_TO_STATE[AgentAction(action)]
            a.action_frame = 0

    a.vx = 0.0
    if a.action_state is ActionState.DODGE_LEFT:
        a.vx = -cfg.side_dodge_distance / cfg.dodge_frames
    elif a.action_state is ActionState.DODGE_RIGHT:
        a.vx = cfg.side_dodge_distance / cfg.dodge_frames
    a.x += a.vx


def _apply_shine(st: ArenaState, cfg: ArenaConfig) -> None:
    a, o, mem = st.agent, st.opponent, st.memory
    if a.action_state is not ActionState.SHINE:
        return
    lo, hi = cfg.shine_active
    if not lo <= a.action_frame + 1 <= hi:
        return
    if abs(o.x - a.x) > cfg.shine_radius:
        return
    attacking = o.action_state in (ActionState.ATTACK_WINDUP, ActionState.ATTACK_ACTIVE)
    if attacking and ATTACKS[mem.attack].beats_shine:
        return
    direction = 1.0 if o.x > a.x else (-1.0 if o.x < a.x else float(a.facing))
    limit = cfg.stage_half_width
    o.x = min(max(o.x + direction * cfg.shine_push, -limit), limit)
    o.damage += cfg.shine_damage
    o.action_state = ActionState.HITSTUN
    o.action_frame = 0
    o.charging = False
    o.vx = 0.0
    mem.in_range_frames = 0


def _advance_opponent(st: ArenaState, cfg: ArenaConfig) -> None:
    o, a, mem, prof = st.opponent, st.agent, st.memory, st.profile
    o.vx = 0.0
    if o.hitlag > 0:
        o.hitlag -= 1
        return

    state = o.action_state
    if state is ActionState.HITSTUN:
        o.action_frame += 1
        if o.action_frame >= cfg.shine_stun:
            o.action_state, o.action_frame = ActionState.IDLE, 0
        return

    if state is ActionState.ATTACK_WINDUP:
        o.action_frame += 1
        if o.action_frame >= prof.telegraph_frames:
            o.action_state, o.action_frame = ActionState.ATTACK_ACTIVE, 0
            o.charging = False
            mem.hit_landed = False
        return

    if state is ActionState.ATTACK_ACTIVE:
        o.action_frame += 1
        if o.action_frame >= ATTACKS[mem.attack].active:
            o.action_state, o.action_frame = ActionState.ATTACK_RECOVER, 0
        return

    if state is ActionState.ATTACK_RECOVER:
        o.action_frame += 1
        if o.action_frame >= ATTACKS[mem.attack].recovery:
            o.action_state, o.action_frame = ActionState.IDLE, 0
            lo, hi = prof.attack_cooldown_range
            mem.cooldown = _randint(st, lo, hi)
            mem.next_attack = _pick_attack(st)
            mem.in_range_frames = 0
        return

    # idle: face the agent, close distance, attack once in reach and ready
    if o.action_frame < IDLE_FRAME_CAP:
        o.action_frame += 1
    dx = a.x - o.x
    o.facing = 1 if dx >= 0 else -1
    reach = ATTACKS[mem.next_attack].reach
    want = reach - 3.0
    dist = abs(dx)
    if dist > want:
        o.vx = o.facing * min(prof.approach_speed, dist - want)
        limit = cfg.stage_half_width
        o.x = min(max(o.x + o.vx, -limit), limit)
        dist = abs(a.x - o.x)
    if mem.cooldown > 0:
        mem.cooldown -= 1
    if dist <= reach - 1.0:
        mem.in_range_frames += 1
    else:
        mem.in_range_frames = 0
    if mem.cooldown == 0 and mem.in_range_frames > prof.reaction_delay:
        mem.attack = mem.next_attack
        o.action_state, o.action_frame = ActionState.ATTACK_WINDUP, 0
        o.charging = mem.attack is Attack.THRUST


def _resolve_hit(st: ArenaState, cfg: ArenaConfig) -> bool:
    o, a, mem = st.opponent, st.agent, st.memory
    if o.action_state is not ActionState.ATTACK_ACTIVE or mem.hit_landed:
        return False
    data = ATTACKS[mem.attack]
    ahead = (a.x - o.x) * o.facing
    if ahead < -2.0 or abs(a.x - o.x) > data.reach:
        return False
    if is_invulnerable(a, cfg):
        return False
    mem.hit_landed = True
    a.damage += data.damage
    a.action_state, a.action_frame = ActionState.HITSTUN, 0
    a.vx = 0.0
    return True


def step(st: ArenaState, action: int, config: ArenaConfig = DEFAULT_CONFIG):
    """Advance one frame.  Returns ``(next_state, reward, terminal)``."""
    if st.terminal:
        raise ArenaError("cannot step a terminal state; call reset()")
    nxt = st.copy()
    a = nxt.agent
    damage_before = a.damage
    _advance_agent(a, int(action), nxt.opponent.x, config)
    _apply_shine(nxt, config)
    _advance_opponent(nxt, config)
    _resolve_hit(nxt, config)
    nxt.frame += 1

    hit = a.damage > damage_before
    off_stage = abs(a.x) > config.stage_half_width + config.bounds_margin
    terminal = hit or off_stage
    nxt.terminal = terminal
    reward = 1.0 / FPS if (a.action_state is ActionState.IDLE and a.damage == 0) else 0.0
    if terminal:
        reward = 0.0
    return nxt, reward, terminal


def _encode_fighter(f: FighterState, out: list) -> None:
    out.extend((
        f.x / 100.0,
        f.y / 50.0,
        f.vx,
        f.vy,
        int(f.action_state) / 10.0,
        f.action_frame / 60.0,
        float(f.facing),
        1.0 if f.charging else 0.0,
        1.0 if f.airborne else 0.0,
        f.shield / 60.0,
        f.jumps_used / 2.0,
        f.hitlag / 60.0,
        min(f.damage, DAMAGE_ENCODE_CAP) / 100.0,
    ))


FEATURE_NAMES = tuple(
    f"{who}_{name}"
    for who in ("agent", "opponent")
    for name in ("x", "y", "vx", "vy", "action_state", "action_frame", "facing", "charging",
                 "airborne", "shield", "jumps_used", "hitlag", "damage")
)


def encode_state(st: ArenaState) -> np.ndarray:
    """26 features, agent block first; see FEATURE_NAMES for the order."""
    out: list = []
    _encode_fighter(st.agent, out)
    _encode_fighter(st.opponent, out)
    return np.array(out, dtype=np.float32)


def sample_opponent_level(rng: np.random.Generator, top_share: float = 0.7) -> int:
    """Level 9 with probability ``top_share``; levels 1-8 share the rest evenly."""
    u = rng.random()
    if u < top_share:
        return 9
    return 1 + min(int((u - top_share) / (1.0 - top_share) * 8), 7)


def apply_frame_skip(action: int, p_drop: float, rng: np.random.Generator) -> int:
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError("p_drop must be a probability")
    if p_drop > 0.0 and rng.random() < p_drop:
        return int(AgentAction.NOTHING)
    return int(action)


# --- scripted reference policies ------------------------------------------------

def frames_until_active(st: ArenaState) -> int | None:
    """Steps remaining before the opponent's current windup turns active."""
    o = st.opponent
    if o.action_state is not ActionState.ATTACK_WINDUP:
        return None
    return st.profile.telegraph_frames - o.action_frame


def perfect_timing_policy(st: ArenaState, config: ArenaConfig = DEFAULT_CONFIG) -> int:
    """Stand-dodge so the invulnerable window covers the whole active phase.

    Reads the telegraph from the full state.  Counting the current step as 1,
    a dodge issued now is invulnerable on steps ``lo..hi`` and the attack is
    active on steps ``k..k+active-1`` where ``k`` is :func:`frames_until_active`.
    """
    if not is_actionable(st.agent):
        return AgentAction.NOTHING
    k = frames_until_active(st)
    if k is None:
        return AgentAction.NOTHING
    lo, hi = config.dodge_invuln
    active = ATTACKS[st.memory.attack].active
    if lo <= k <= hi - active + 1:
        return AgentAction.DODGE_STAND
    return AgentAction.NOTHING


def trajectory_row(st: ArenaState, action: int, reward: float, terminal: bool) -> list:
    """One row of the ``--record`` trajectory dump (see TRAJECTORY_COLUMNS)."""
    row = [st.frame]
    for f in (st.agent, st.opponent):
        row += [f.x, f.y, f.vx, f.vy, int(f.action_state), f.action_frame, f.facing,
                int(f.charging), int(f.airborne), f.shield, f.jumps_used, f.hitlag, f.damage]
    return row + [int(action), reward, int(terminal)]


TRAJECTORY_COLUMNS = ("frame",) + FEATURE_NAMES + ("action", "reward", "terminal")
