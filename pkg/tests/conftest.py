import sys
from pathlib import Path

import pytest

# lets test modules import the brute-force helpers in oracles.py
sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the terminal summary lists them all."""
    log = request.config.stash.setdefault(_CRITERIA, {})

    def record(cid: int, name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {cid:>2} {name}: {detail}"
        log[cid] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_CRITERIA, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(log):
        terminalreporter.write_line(log[cid])
