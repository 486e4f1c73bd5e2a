"""Manager/worker experience generation.

Workers play episodes under a fixed downloaded model and upload batches of
transitions; the manager pushes them into replay, trains, republishes its
model and persists a snapshot every ``snapshot_every_uploads`` uploads.

The same :class:`Worker` and :class:`Manager` objects back both the
in-process pipeline (:func:`run_local`) and the TCP deployment
(:func:`manager_loop` / :func:`worker_loop`), so with one worker and equal
seeds both produce the same replay contents.
"""

from __future__ import annotations

import csv
import logging
import queue
import socket
import socketserver
import threading
import time
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from pathlib import Path

import numpy as np

from . import arena
from .agents import (
    AgentKind,
    TrainState,
    build_network,
    epsilon_at,
    select_action,
    train_batch,
)
from .config import RunConfig
from .metrics import HoldoutSet, build_holdout, mean_max_q
from .nncore import Network
from .protocol import (
    Ack,
    AckCode,
    ConnectionClosed,
    Hello,
    Model,
    ModelRequest,
    ProtocolError,
    SampleBatchMsg,
    Shutdown,
    read_message,
    send_message,
)
from .replay import Batch, ReplayMemory
from .snapshot import deserialize_model, save_snapshot, serialize_model, snapshot_path

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "mean_loss", "mean_max_q", "uploads", "wall_seconds")


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def new_network(cfg: RunConfig) -> Network:
    return build_network(cfg.kind, arena.N_FEATURES, arena.N_ACTIONS, seed=cfg.seed,
                         hidden=cfg.hidden, shared=(cfg.shared_width,), stream=(cfg.stream_width,))


class Worker:
    """Generates transitions under whatever snapshot it was last given.

    Episodes carry over between uploads.  Each worker draws from its own
    child stream of ``cfg.seed``, so workers never share randomness.
    """

    def __init__(self, worker_id: int, cfg: RunConfig):
        self.worker_id = int(worker_id)
        self.cfg = cfg
        self.arena_cfg = cfg.arena_config()
        self.schedule = cfg.epsilon_schedule()
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(self.worker_id,)))
        self.seq = 0
        self.net: Network | None = None
        self.kind: AgentKind | None = None
        self.model_step = 0
        self._st: arena.ArenaState | None = None
        self._x: np.ndarray | None = None
        self._ep_len = 0
        self.episodes_started: list[tuple[int, int]] = []  # (level, arena seed)

    def load(self, snapshot: bytes) -> None:
        self.net, self.kind, self.model_step = deserialize_model(snapshot)

    def _new_episode(self) -> None:
        level = arena.sample_opponent_level(self.rng, self.cfg.level_mix_top)
        seed = int(self.rng.integers(2**63))
        self.episodes_started.append((level, seed))
        self._st = arena.reset(level, seed, self.arena_cfg)
        self._x = arena.encode_state(self._st)
        self._ep_len = 0

    def generate(self, n: int | None = None) -> SampleBatchMsg:
        if self.net is None:
            raise RuntimeError("worker has no model yet")
        n = self.cfg.samples_per_upload if n is None else n
        dim = arena.N_FEATURES
        s = np.zeros((n, dim), np.float32)
        s2 = np.zeros((n, dim), np.float32)
        acts = np.zeros(n, np.int64)
        rews = np.zeros(n, np.float32)
        terms = np.zeros(n, bool)
        eps = epsilon_at(self.schedule, self.model_step)
        cap = self.cfg.train_episode_cap
        for i in range(n):
            if self._st is None:
                self._new_episode()
            a = select_action(self.net, self._x, eps, self.rng)
            executed = arena.apply_frame_skip(a, self.arena_cfg.frame_skip_p, self.rng)
            st2, r, terminal = arena.step(self._st, executed, self.arena_cfg)
            x2 = arena.encode_state(st2)
            s[i], acts[i], rews[i], s2[i], terms[i] = self._x, a, r, x2, terminal
            self._ep_len += 1
            if terminal or (cap and self._ep_len >= cap):
                self._st = None
            else:
                self._st, self._x = st2, x2
        self.seq += 1
        return SampleBatchMsg(self.worker_id, self.seq, self.model_step,
                              Batch(s, acts, rews, s2, terms))


class Manager:
    """Replay ingestion, training and snapshot publication (one training context)."""

    def __init__(self, cfg: RunConfig, run_dir=None, holdout: HoldoutSet | None = None,
                 net: Network | None = None):
        self.cfg = cfg
        self.kind = cfg.kind
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.ts = TrainState.create(
            net if net is not None else new_network(cfg),
            gamma=cfg.gamma, lr=cfg.lr, target_sync_every=cfg.target_sync_every,
            entropy_weight=cfg.entropy_weight, td_clip=cfg.td_clip,
            decay=cfg.rmsprop_decay, eps=cfg.rmsprop_eps,
        )
        self.replay = ReplayMemory(cfg.replay_capacity, cfg.replay_warmup)
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2**31,)))
        self.uploads = 0
        self.snapshots_saved = 0
        self.saved_steps: set[int] = set()
        self.acked: set[tuple[int, int]] = set()
        self.holdout = holdout
        self.t0 = time.monotonic()
        self._lock = threading.Lock()
        self.log_path = None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            self.log_path = self.run_dir / "train_log.csv"
            with open(self.log_path, "w", newline="") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)
        self._publish()

    @property
    def step(self) -> int:
        return self.ts.step

    @property
    def done(self) -> bool:
        if self.step >= self.cfg.total_training_steps:
            return True
        return bool(self.cfg.max_uploads) and self.uploads >= self.cfg.max_uploads

    def _publish(self) -> None:
        data = serialize_model(self.ts.online, self.kind, self.step)
        with self._lock:
            self._snapshot = data

    def snapshot(self) -> bytes:
        """Latest published model; immutable bytes, safe to hand to any thread."""
        with self._lock:
            return self._snapshot

    def ingest(self, msg: SampleBatchMsg) -> AckCode:
        key = (msg.worker_id, msg.seq)
        if key in self.acked:
            return AckCode.DUPLICATE
        if msg.count and msg.batch.states.shape[1] != arena.N_FEATURES:
            log.warning("rejecting batch %s with state dimension %d", key, msg.batch.states.shape[1])
            return AckCode.REJECTED
        self.replay.extend(msg.batch)
        self.acked.add(key)
        self.uploads += 1

        losses = []
        if self.replay.ready:
            budget = min(self.cfg.train_batches_per_upload, self.cfg.total_training_steps - self.step)
            for _ in range(max(budget, 0)):
                batch = self.replay.sample(self.cfg.batch_size, self.rng)
                losses.append(train_batch(self.ts, self.kind, batch))
        self._log(losses)
        if self.uploads % self.cfg.snapshot_every_uploads == 0:
            self.persist()
            self.snapshots_saved += 1
        self._publish()
        return AckCode.OK

    def _log(self, losses) -> None:
        if self.log_path is None:
            return
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        mmq = mean_max_q(self.ts.online, self.holdout) if self.holdout is not None else float("nan")
        with open(self.log_path, "a", newline="") as fh:
            csv.writer(fh).writerow([self.step, f"{mean_loss:.8g}", f"{mmq:.8g}", self.uploads,
                                     f"{time.monotonic() - self.t0:.3f}"])

    def persist(self) -> Path | None:
        """Write ``model_<step>.drlm``; a no-op without a run directory."""
        self.saved_steps.add(self.step)
        if self.run_dir is None:
            return None
        return save_snapshot(snapshot_path(self.run_dir, self.step), self.ts.online, self.kind,
                             self.step)

    def finish(self) -> Path | None:
        """Shutdown save, skipped when the current step is already on disk."""
        if self.step in self.saved_steps:
            return None
        return self.persist()


def prepare_holdout(cfg: RunConfig, run_dir=None) -> HoldoutSet:
    hs = build_holdout(cfg.arena_config(), cfg.holdout_size, seed=cfg.seed,
                       top_share=cfg.level_mix_top)
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        hs.save(Path(run_dir) / "holdout.npz")
    return hs


def run_local(cfg: RunConfig, run_dir=None, manager: Manager | None = None,
              progress=None) -> Manager:
    """Single-process pipeline: one in-process worker feeding the manager.

    Follows the networked cycle exactly: fetch model, generate, upload, train.
    """
    if manager is None:
        manager = Manager(cfg, run_dir, prepare_holdout(cfg, run_dir))
    worker = Worker(cfg.worker_id, cfg)
    while not manager.done:
        worker.load(manager.snapshot())
        manager.ingest(worker.generate())
        if progress is not None:
            progress(manager)
    manager.finish()
    return manager


# --- networked deployment --------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    server: "ManagerServer"

    def handle(self):
        srv = self.server
        sock = self.request
        worker_id = None
        srv.track(+1)
        try:
            while True:
                msg = read_message(sock)
                if isinstance(msg, Hello):
                    worker_id = msg.worker_id
                    log.info("worker %d connected", worker_id)
                elif isinstance(msg, ModelRequest):
                    if srv.manager.done or srv.stopping.is_set():
                        send_message(sock, Shutdown())
                        return
                    send_message(sock, Model(srv.manager.snapshot()))
                elif isinstance(msg, SampleBatchMsg):
                    code = srv.submit(msg)
                    if code is None:
                        send_message(sock, Shutdown())
                        return
                    send_message(sock, Ack(int(code)))
                elif isinstance(msg, Shutdown):
                    return
                else:
                    raise ProtocolError(f"unexpected {type(msg).__name__} from a worker")
        except ConnectionClosed:
            pass
        except (ProtocolError, OSError) as exc:
            log.warning("dropping worker %s: %s", worker_id, exc)
        finally:
            srv.track(-1)


class ManagerServer(socketserver.ThreadingTCPServer):
    """One ingestion thread per worker; uploads are trained on by the caller's thread."""

    daemon_threads = True
    allow_reuse_address = True
    block_on_close = False

    def __init__(self, manager: Manager, address: tuple[str, int]):
        super().__init__(address, _Handler)
        self.manager = manager
        self.inbox: queue.Queue = queue.Queue()
        self.stopping = threading.Event()
        self.active = 0
        self._count_lock = threading.Lock()

    def track(self, delta: int) -> None:
        with self._count_lock:
            self.active += delta

    def submit(self, msg: SampleBatchMsg) -> AckCode | None:
        """Queue an upload for the training context; None once the manager is stopping."""
        if self.stopping.is_set():
            return None
        fut: Future = Future()
        self.inbox.put((msg, fut))
        while True:
            try:
                return fut.result(timeout=0.1)
            except FutureTimeout:
                if self.stopping.is_set() and not fut.done():
                    return None

    def process_pending(self, timeout: float = 0.05) -> bool:
        try:
            msg, fut = self.inbox.get(timeout=timeout)
        except queue.Empty:
            return False
        try:
            fut.set_result(self.manager.ingest(msg))
        except Exception as exc:  # keep serving other workers
            log.exception("ingest failed")
            fut.set_result(AckCode.REJECTED)
            if not isinstance(exc, (ValueError, ProtocolError)):
                raise
        return True


def manager_loop(cfg: RunConfig, run_dir=None, stop: threading.Event | None = None,
                 manager: Manager | None = None, grace_seconds: float = 10.0,
                 ready: threading.Event | None = None, server_out: list | None = None) -> Manager:
    """Serve workers until training finishes (or ``stop`` is set), then save and return."""
    if manager is None:
        manager = Manager(cfg, run_dir, prepare_holdout(cfg, run_dir))
    stop = stop or threading.Event()
    server = ManagerServer(manager, parse_address(cfg.listen_address))
    if server_out is not None:
        server_out.append(server)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05},
                              daemon=True)
    thread.start()
    if ready is not None:
        ready.set()
    done_at = None
    try:
        while not stop.is_set():
            server.process_pending()
            if manager.done:
                done_at = done_at or time.monotonic()
                if server.active == 0 or time.monotonic() - done_at > grace_seconds:
                    break
    finally:
        server.stopping.set()
        while server.process_pending(timeout=0):
            pass
        manager.finish()
        server.shutdown()
        server.server_close()
    return manager


def worker_loop(cfg: RunConfig, worker: Worker | None = None,
                stop: threading.Event | None = None) -> int:
    """Run one worker against ``cfg.connect_address``; returns a process exit code.

    Unacknowledged uploads are resent after a reconnect; the manager drops
    duplicates by ``(worker_id, seq)``.
    """
    worker = worker or Worker(cfg.worker_id, cfg)
    stop = stop or threading.Event()
    addr = parse_address(cfg.connect_address)
    pending: SampleBatchMsg | None = None
    failures = 0
    delay = cfg.retry_base_seconds
    while not stop.is_set():
        try:
            sock = socket.create_connection(addr, timeout=30)
        except OSError as exc:
            failures += 1
            if failures > cfg.connect_retries:
                log.error("manager %s unreachable after %d attempts: %s", cfg.connect_address,
                          failures, exc)
                return 2
            time.sleep(delay)
            delay = min(delay * 2, cfg.retry_cap_seconds)
            continue
        failures, delay = 0, cfg.retry_base_seconds
        try:
            with sock:
                sock.settimeout(None)
                send_message(sock, Hello(worker.worker_id))
                while not stop.is_set():
                    if pending is not None:
                        send_message(sock, pending)
                        reply = read_message(sock)
                        if isinstance(reply, Shutdown):
                            return 0
                        if not isinstance(reply, Ack):
                            raise ProtocolError(f"expected ACK, got {type(reply).__name__}")
                        pending = None
                        continue
                    send_message(sock, ModelRequest())
                    reply = read_message(sock)
                    if isinstance(reply, Shutdown):
                        return 0
                    if not isinstance(reply, Model):
                        raise ProtocolError(f"expected MODEL, got {type(reply).__name__}")
                    worker.load(reply.snapshot)
                    pending = worker.generate()
        except (ConnectionError, OSError, ProtocolError) as exc:
            log.warning("connection to manager lost (%s); reconnecting", exc)
            failures += 1
            if failures > cfg.connect_retries:
                return 2
            time.sleep(delay)
            delay = min(delay * 2, cfg.retry_cap_seconds)
    return 0
