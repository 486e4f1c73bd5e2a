import pytest

from dodge_rl.config import load_config


def small_cfg(**overrides):
    """A fast configuration for pipeline tests."""
    values = dict(
        agent="dqn",
        hidden_widths="16",
        total_training_steps=10_000,
        replay_capacity=20_000,
        replay_warmup=32,
        batch_size=8,
        samples_per_upload=48,
        train_batches_per_upload=3,
        target_sync_every=50,
        holdout_size=40,
        listen_address="127.0.0.1:0",
        connect_retries=3,
        retry_base_seconds=0.05,
        retry_cap_seconds=0.2,
        seed=7,
    )
    values.update(overrides)
    return load_config(None, values)


@pytest.fixture
def cfg():
    return small_cfg()


# verdict lines from tests/test_acceptance.py, echoed after the run
ACCEPTANCE: list[str] = []


def verdict(label: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"{label} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
