import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dropsls import cli  # noqa: E402
from dropsls.bankio import load_bank  # noqa: E402
from dropsls.dropout import uniform_d_distribution  # noqa: E402
from dropsls.experiment import build_chain10  # noqa: E402
from dropsls.synthesis import synthesize_offline, synthesize_online_bank  # noqa: E402


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full default-config run of the ``compare`` verb, shared by all tests."""
    out = tmp_path_factory.mktemp("compare_a")
    code = cli.main(["compare", "--out", str(out)])
    banks = {p.stem: load_bank(p) for p in sorted((out / "banks").glob("*.bank"))}
    return {"out": out, "code": code, "banks": banks}


@pytest.fixture(scope="session")
def small_setup():
    """Five-node chain, radii {1, 2}, horizon 6: quick to synthesize."""
    sys_ = build_chain10(N=5)
    dist = uniform_d_distribution(5, {1, 2})
    I5 = np.eye(5)
    off = synthesize_offline(sys_, dist.topology, dist, I5, I5, 6)
    on = synthesize_online_bank(sys_, dist.topology, dist, I5, I5, 6)
    return {"sys": sys_, "dist": dist, "offline": off, "online": on, "T": 6}


ACCEPTANCE_LINES = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Call ``report(number, ok, detail)`` once; the line is printed right away
    and repeated in the terminal summary.
    """
    def emit(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
