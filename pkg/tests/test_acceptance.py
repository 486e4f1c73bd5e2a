"""One test per acceptance criterion; each records a PASS/FAIL verdict line."""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binomtest

from dodge_rl import arena
from dodge_rl.agents import AgentKind, TrainState, train_batch
from dodge_rl.distrib import manager_loop, run_local, worker_loop
from dodge_rl.config import load_config
from dodge_rl.metrics import build_holdout, evaluate, mean_max_q, random_policy
from dodge_rl.nncore import (
    Activation,
    Head,
    LayerSpec,
    Network,
    forward,
    gradient_check_suite,
    predict,
    random_small_network,
)
from dodge_rl.replay import Batch
from dodge_rl.snapshot import (
    ChecksumError,
    FormatError,
    MagicError,
    TruncationError,
    VersionError,
    deserialize_model,
    serialize_model,
)

from conftest import small_cfg, verdict

KIND_FOR_HEAD = {Head.SINGLE: AgentKind.DQN, Head.DUELING: AgentKind.DUELING_DQN,
                 Head.ACTOR_CRITIC: AgentKind.A3C}


def linear_net(n_in, n_out):
    return Network([LayerSpec(n_in, n_out, Activation.IDENTITY)], Head.SINGLE,
                   [np.zeros((n_out, n_in), np.float32)], [np.zeros(n_out, np.float32)])


# --- AC1 ---------------------------------------------------------------------

def test_ac1_gradient_correctness():
    t0 = time.monotonic()
    errors = gradient_check_suite(seed=0, per_head=34)  # 102 networks
    took = time.monotonic() - t0
    worst = max(errors.values())
    verdict("AC1", worst < 1e-4 and took < 30,
            f"102 networks, max relative error {worst:.2e}, {took:.1f} s")


# --- AC2 ---------------------------------------------------------------------

def chain_step(s, a):
    """5-state chain: action 1 moves right (paying 1 and ending from state 4), action 0 left."""
    if a == 1:
        return (4, 1.0, True) if s == 4 else (s + 1, 0.0, False)
    return max(s - 1, 0), 0.0, False


def chain_value_iteration(gamma=0.99, tol=1e-13):
    q = np.zeros((5, 2))
    while True:
        new = np.zeros_like(q)
        for s in range(5):
            for a in range(2):
                s2, r, term = chain_step(s, a)
                new[s, a] = r + (0.0 if term else gamma * q[s2].max())
        if np.abs(new - q).max() < tol:
            return new
        q = new


def test_chain_oracle_values():
    q = chain_value_iteration()
    assert q[4, 1] == pytest.approx(1.0)
    assert q[0, 1] == pytest.approx(0.99 ** 4)
    assert q[2, 0] == pytest.approx(0.99 * q[1, 1])


def test_ac2_tabular_oracle():
    t0 = time.monotonic()
    eye = np.eye(5, dtype=np.float32)
    rows = [(s, a, *chain_step(s, a)) for s in range(5) for a in range(2)]
    rng = np.random.default_rng(0)
    ts = TrainState.create(linear_net(5, 2), lr=0.001, target_sync_every=500)
    q_star = chain_value_iteration()
    for _ in range(20_000):
        pick = [rows[k] for k in rng.integers(len(rows), size=32)]
        batch = Batch(eye[[p[0] for p in pick]], np.array([p[1] for p in pick]),
                      np.array([p[3] for p in pick], np.float32), eye[[p[2] for p in pick]],
                      np.array([p[4] for p in pick]))
        train_batch(ts, AgentKind.DQN, batch)
    err = float(np.abs(predict(ts.online, eye) - q_star).max())
    took = time.monotonic() - t0
    verdict("AC2", err < 1e-2 and took < 120,
            f"max-norm gap to value iteration {err:.2e} after 20000 batches, {took:.1f} s")


# --- AC3 ---------------------------------------------------------------------

def noisy_bandit_max_q(kind, seed, batches=3000):
    """One state that loops to itself, 8 actions, N(0, 1) rewards: the true Q is 0."""
    rng = np.random.default_rng(seed)
    ts = TrainState.create(linear_net(1, 8), lr=0.001, target_sync_every=100)
    one = np.ones((32, 1), np.float32)
    for _ in range(batches):
        batch = Batch(one, rng.integers(8, size=32), rng.normal(0.0, 1.0, 32).astype(np.float32),
                      one, np.zeros(32, bool))
        train_batch(ts, kind, batch)
    return float(predict(ts.online, np.ones(1, np.float32)).max())


def test_ac3_double_dqn_overestimation():
    t0 = time.monotonic()
    dqn = np.array([noisy_bandit_max_q(AgentKind.DQN, s) for s in range(20)])
    double = np.array([noisy_bandit_max_q(AgentKind.DOUBLE_DQN, s) for s in range(20)])
    took = time.monotonic() - t0
    p_pos = binomtest(int(np.sum(dqn > 0)), 20, 0.5, alternative="greater").pvalue
    p_closer = binomtest(int(np.sum(np.abs(double) < np.abs(dqn))), 20, 0.5,
                         alternative="greater").pvalue
    ok = (abs(double.mean()) < abs(dqn.mean()) and dqn.mean() > 0
          and p_pos < 0.05 and p_closer < 0.05 and took < 300)
    verdict("AC3", ok, f"mean max-Q dqn {dqn.mean():+.4f} double {double.mean():+.4f}; "
                       f"sign tests p={p_pos:.1e} (dqn>0), p={p_closer:.1e} (double closer), {took:.0f} s")


# --- AC4 ---------------------------------------------------------------------

def as_float64(net):
    return Network(net.specs, net.head, [w.astype(np.float64) for w in net.weights],
                   [b.astype(np.float64) for b in net.biases])


def test_ac4_dueling_identities():
    from dodge_rl.agents import dueling_aggregate

    rng = np.random.default_rng(0)
    worst_id = worst_shift = 0.0
    argmax_ok = True
    for _ in range(1000):
        v, a = rng.normal() * 5, rng.normal(size=5) * 5
        q = dueling_aggregate(v, a)
        worst_id = max(worst_id, float(np.abs(q - (v + a - a.mean())).max()))
        argmax_ok &= int(np.argmax(q)) == int(np.argmax(a))
        worst_shift = max(worst_shift, float(np.abs(dueling_aggregate(v, a + rng.normal() * 10) - q).max()))
    # the same identities through whole networks, evaluated in float64
    for _ in range(200):
        net, x, _ = random_small_network(rng, Head.DUELING)
        net = as_float64(net)
        acts = forward(net, x)
        v, a = float(np.ravel(acts.value)[0]), np.ravel(acts.advantage)
        q = np.ravel(acts.output)
        worst_id = max(worst_id, float(np.abs(q - (v + a - a.mean())).max()))
        argmax_ok &= int(np.argmax(q)) == int(np.argmax(a))
        shifted = net.copy()
        shifted.biases[-1] = shifted.biases[-1] + rng.normal() * 3  # advantage output bias
        worst_shift = max(worst_shift, float(np.abs(np.ravel(forward(shifted, x).output) - q).max()))
    verdict("AC4", worst_id < 1e-6 and worst_shift < 1e-6 and argmax_ok,
            f"1000 random (V, A) plus 200 float64 networks: identity gap {worst_id:.1e}, "
            f"shift gap {worst_shift:.1e}, argmax agreement {argmax_ok}")


# --- AC5 ---------------------------------------------------------------------

def _play(level, seed, policy, cap):
    st, n = arena.reset(level, seed), 0
    while n < cap:
        st, _, term = arena.step(st, policy(st))
        n += 1
        if term:
            break
    return st, n


def test_ac5_environment_contract():
    notes, ok = [], True
    # (a) idle zero-damage reward
    st, r, _ = arena.step(arena.reset(9, 0), arena.AgentAction.NOTHING)
    ok &= r == 1 / 60
    notes.append(f"idle reward {r!r}")
    # (b) terminal on the first hit
    first_hit_terminal = True
    for seed in range(10):
        st = arena.reset(9, seed)
        while not st.terminal:
            before = st.agent.damage
            st, _, term = arena.step(st, arena.AgentAction.NOTHING)
            if st.agent.damage > before:
                first_hit_terminal &= term
                break
    ok &= first_hit_terminal
    # (c) forced attacks never connect during dodge frames 4..19
    hits_in_iframes = 0
    for attack in arena.Attack:
        for n in range(4, 20):
            for frac in (0.0, 0.5, 1.0):
                st = arena.reset(9, 0)
                a, o = st.agent, st.opponent
                if n > 1:
                    a.action_state, a.action_frame = arena.ActionState.DODGE_STAND, n - 2
                o.x, o.facing = a.x + frac * arena.ATTACKS[attack].reach, -1
                o.action_state = arena.ActionState.ATTACK_WINDUP
                o.action_frame = st.profile.telegraph_frames - 1
                st.memory.attack = attack
                nxt, _, term = arena.step(st, arena.AgentAction.NOTHING)
                hits_in_iframes += int(term or nxt.agent.damage > 0)
    ok &= hits_in_iframes == 0
    # (d) solvability
    survived = sum(_play(9, s, arena.perfect_timing_policy, 3600)[1] == 3600 for s in range(20))
    ok &= survived == 20
    # (e) monotone difficulty
    means = [np.mean([_play(lvl, s, lambda st: 0, 100_000)[1] for s in range(20)])
             for lvl in range(1, 10)]
    monotone = all(x >= y for x, y in zip(means, means[1:]))
    ok &= monotone
    verdict("AC5", ok, f"{notes[0]}; first hit terminal {first_hit_terminal}; "
                       f"i-frame hits {hits_in_iframes}; perfect policy 3600 frames on {survived}/20; "
                       f"nothing-policy means {[round(float(m), 1) for m in means]}")


# --- AC6 ---------------------------------------------------------------------

def test_ac6_level_mix():
    rng = np.random.default_rng(2024)
    draws = np.array([arena.sample_opponent_level(rng) for _ in range(100_000)])
    share = float(np.mean(draws == 9))
    verdict("AC6", 0.69 <= share <= 0.71, f"level-9 share {share:.4f} over 100000 draws")


# --- AC7 ---------------------------------------------------------------------

def test_ac7_snapshot_and_protocol(tmp_path):
    rng = np.random.default_rng(7)
    identical = 0
    heads = list(Head)
    for i in range(1000):
        head = heads[i % 3]
        net, _, _ = random_small_network(rng, head)
        data = serialize_model(net, KIND_FOR_HEAD[head], i)
        back, _, step = deserialize_model(data)
        identical += int(back.equal(net) and step == i
                         and serialize_model(back, KIND_FOR_HEAD[head], step) == data)

    data = serialize_model(random_small_network(rng, Head.SINGLE)[0], AgentKind.DQN, 3)
    flipped = bytearray(data)
    flipped[-5] ^= 0x10
    corruptions = {
        MagicError: b"NOPE" + data[4:],
        VersionError: data[:4] + (99).to_bytes(4, "little") + data[8:],
        TruncationError: data[:-3],
        ChecksumError: bytes(flipped),
        FormatError: data + b"\x00",
    }
    rejected = 0
    for err, blob in corruptions.items():
        try:
            deserialize_model(blob)
        except err:
            rejected += 1

    cfg = small_cfg(max_uploads=30)
    manager = run_local(cfg, tmp_path)
    files = len(list(tmp_path.glob("model_*.drlm")))
    ok = identical == 1000 and rejected == len(corruptions) and files == 30 // 15 == 2
    verdict("AC7", ok, f"{identical}/1000 byte-identical round-trips; {rejected}/{len(corruptions)} "
                       f"corruption classes rejected; {manager.uploads} uploads -> {files} snapshots")


# --- AC8 ---------------------------------------------------------------------

def test_ac8_distributed_equals_local(tmp_path):
    import dataclasses
    import threading

    cfg = small_cfg(max_uploads=3)
    local = run_local(cfg)

    ready, out, result = threading.Event(), [], {}
    t = threading.Thread(target=lambda: result.setdefault(
        "m", manager_loop(cfg, tmp_path, ready=ready, server_out=out)), daemon=True)
    t.start()
    ready.wait(10)
    host, port = out[0].server_address
    code = worker_loop(dataclasses.replace(cfg, connect_address=f"{host}:{port}"))
    t.join(30)
    remote = result["m"]
    a, b = local.replay.contents(), remote.replay.contents()
    same = all(np.array_equal(getattr(a, f), getattr(b, f))
               for f in ("states", "actions", "rewards", "next_states", "terminals"))
    ok = code == 0 and remote.uploads == local.uploads == 3 and len(a) == len(b) and same
    verdict("AC8", ok, f"{len(a)} vs {len(b)} transitions after 3 uploads, identical contents {same}")


# --- AC9 ---------------------------------------------------------------------

DESK_CFG = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"


@pytest.mark.slow
def test_ac9_learning_outcome():
    """Train all three value agents at desk scale and evaluate on level 9."""
    results = {}
    for agent in ("dueling_dqn", "double_dqn", "dqn"):
        cfg = load_config(DESK_CFG, {"agent": agent})
        manager = run_local(cfg)
        results[agent] = evaluate(manager.ts.online, cfg.eval_level, cfg.eval_episodes,
                                  seed=cfg.seed + 1, greedy=cfg.eval_greedy,
                                  epsilon=cfg.eval_epsilon, config=cfg.eval_arena_config(),
                                  cap=cfg.eval_episode_cap)
    cfg = load_config(DESK_CFG)
    baseline = evaluate(None, cfg.eval_level, cfg.eval_episodes, seed=cfg.seed + 1,
                        policy=random_policy, config=cfg.eval_arena_config(),
                        cap=cfg.eval_episode_cap)

    duel = results["dueling_dqn"]
    rate, base = duel.survival_rate_60s, baseline.survival_rate_60s
    ordered = all(results[k].mean_length > results["dqn"].mean_length
                  for k in ("dueling_dqn", "double_dqn"))
    ok = rate > 0.5 and rate >= 10 * base and rate > 0 and ordered
    lengths = ", ".join(f"{k} {r.mean_length:.1f}" for k, r in results.items())
    verdict("AC9", ok, f"dueling 60 s survival {rate:.3f} vs random {base:.3f}; "
                       f"mean frames {lengths}")


# --- AC10 --------------------------------------------------------------------

def test_ac10_metrics():
    hs = build_holdout(n=1000, seed=11)
    again = build_holdout(n=1000, seed=11)
    reproducible = np.array_equal(hs.states, again.states)
    worst = 0.0
    for kind in (AgentKind.DQN, AgentKind.DUELING_DQN, AgentKind.A3C):
        from dodge_rl.agents import build_network

        net = build_network(kind, arena.N_FEATURES, arena.N_ACTIONS, seed=3)
        total = 0.0
        for s in hs.states:
            out = [float(v) for v in predict(net, s)]
            total += out[-1] if kind is AgentKind.A3C else max(out)
        worst = max(worst, abs(mean_max_q(net, hs) - total / len(hs)))
    ok = len(hs) == 1000 and reproducible and worst < 1e-6
    verdict("AC10", ok, f"holdout size {len(hs)}, reproducible {reproducible}, "
                        f"mean_max_q gap to naive loop {worst:.1e}")
