import csv
import socket
import subprocess
import sys
import time

import pytest

from dodge_rl import cli
from dodge_rl.agents import AgentKind, build_network
from dodge_rl.arena import N_ACTIONS, N_FEATURES, TRAJECTORY_COLUMNS
from dodge_rl.snapshot import save_snapshot

FAST = ["--samples-per-upload", "200", "--train-batches-per-upload", "50", "--replay-warmup", "200",
        "--replay-capacity", "10000", "--eval-episodes", "5", "--holdout-size", "50"]


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def log_rows(run_dir):
    with open(run_dir / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: v for k, v in r.items() if k != "wall_seconds"} for r in rows]


def tiny_snapshot(path, seed=0):
    net = build_network(AgentKind.DUELING_DQN, N_FEATURES, N_ACTIONS, seed=seed, shared=(16,), stream=(16,))
    return save_snapshot(path, net, AgentKind.DUELING_DQN, 123)


def test_train_is_deterministic(tmp_path):
    args = ["train", "--agent", "dueling", "--steps", "2000", "--seed", "1",
            "--shared-width", "16", "--stream-width", "16", *FAST]
    t0 = time.monotonic()
    assert cli.main([*args, "--run-dir", str(tmp_path / "a")]) == 0
    assert time.monotonic() - t0 < 60
    assert cli.main([*args, "--run-dir", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert log_rows(a) == log_rows(b) and len(log_rows(a)) == 40
    for name in ("holdout.npz", "model_2000.drlm", "eval_report.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_config_errors_exit_one(tmp_path, capsys):
    assert cli.main(["train", "--agent", "dqn", "--stream-width", "64",
                     "--run-dir", str(tmp_path)]) == 1
    assert "stream_width" in capsys.readouterr().err
    assert cli.main(["train", "--gamma", "1.5", "--run-dir", str(tmp_path)]) == 1
    assert cli.main(["nonsense"]) == 1
    assert cli.main(["train", "--no-such-flag", "1"]) == 1


def test_config_file_and_echo(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# tiny\nagent = double\nhidden_widths = 8\n")
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_file), "--steps", "100", "--run-dir", str(run), *FAST]) == 0
    echo = (run / "config.cfg").read_text()
    assert "agent = double" in echo and "hidden_widths = 8" in echo
    assert "total_training_steps = 100" in echo


def test_run_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DODGE_RL_RUN_DIR", str(tmp_path / "env"))
    assert cli.main(["train", "--agent", "dqn", "--hidden-widths", "8", "--steps", "50", *FAST]) == 0
    assert (tmp_path / "env" / "train_log.csv").exists()


def test_eval_corrupt_snapshot_exits_two(tmp_path, capsys):
    path = tiny_snapshot(tmp_path / "model_123.drlm")
    data = bytearray(path.read_bytes())
    data[-10] ^= 0x01  # inside the parameter payload
    path.write_bytes(bytes(data))
    assert cli.main(["eval", str(path), "--run-dir", str(tmp_path)]) == 2
    assert "ChecksumError" in capsys.readouterr().err
    assert cli.main(["eval", str(tmp_path / "missing.drlm"), "--run-dir", str(tmp_path)]) == 2


def test_eval_report_and_record(tmp_path, capsys):
    path = tiny_snapshot(tmp_path / "model_123.drlm")
    rec = tmp_path / "traj.csv"
    args = ["eval", str(path), "--episodes", "200", "--level", "9", "--seed", "4",
            "--run-dir", str(tmp_path / "r1"), "--record", str(rec)]
    assert cli.main(args) == 0
    out1 = capsys.readouterr().out
    assert "survival_rate_60s" in out1
    report = (tmp_path / "r1" / "eval_report.csv").read_text()
    assert cli.main([*args[:-4], "--run-dir", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r2" / "eval_report.csv").read_text() == report
    lines = rec.read_text().splitlines()
    assert lines[0] == ",".join(TRAJECTORY_COLUMNS)
    assert len(lines) >= 2


def test_gradcheck_ok(capsys):
    assert cli.main(["gradcheck", "--configs", "4"]) == 0
    out = capsys.readouterr().out
    for head in ("single", "dueling", "actor_critic"):
        assert head in out


def test_gradcheck_negative_control(monkeypatch):
    import dodge_rl.nncore as nc

    real = nc.backward

    def skewed(net, acts, cot):
        g = real(net, acts, cot)
        g.weights[0] = g.weights[0] * 1.05
        return g

    monkeypatch.setattr(nc, "backward", skewed)
    assert cli.main(["gradcheck", "--configs", "3"]) == 3


def test_manager_and_two_worker_processes(tmp_path):
    port = free_port()
    common = ["--listen-address", f"127.0.0.1:{port}", "--connect-address", f"127.0.0.1:{port}",
              "--agent", "dqn", "--hidden-widths", "16", "--steps", "300", *FAST]
    run = tmp_path / "run"
    py = [sys.executable, "-m", "dodge_rl.cli"]
    mgr = subprocess.Popen([*py, "manager", *common, "--run-dir", str(run)],
                           stderr=subprocess.PIPE, text=True)
    try:
        time.sleep(1.0)
        workers = [subprocess.Popen([*py, "worker", *common, "--worker-id", str(i),
                                     "--connect-retries", "20", "--retry-base-seconds", "0.1"],
                                    stderr=subprocess.PIPE, text=True)
                   for i in range(2)]
        codes = [w.wait(timeout=240) for w in workers]
        assert mgr.wait(timeout=60) == 0
    finally:
        for p in [mgr, *locals().get("workers", [])]:
            if p.poll() is None:
                p.kill()
    assert codes == [0, 0]
    assert list(run.glob("model_*.drlm"))
    assert (run / "holdout.npz").exists() and (run / "config.cfg").exists()
    assert len(log_rows(run)) >= 2


def test_worker_wrong_address_exits_two():
    port = free_port()
    proc = subprocess.run([sys.executable, "-m", "dodge_rl.cli", "worker", "--connect-address",
                           f"127.0.0.1:{port}", "--connect-retries", "2", "--retry-base-seconds", "0.05"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 2


@pytest.mark.parametrize("argv", [["--help"], ["train", "--help"]])
def test_help_exits_cleanly(argv):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 0
