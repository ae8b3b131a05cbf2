import pytest

from advclaim.data import SynthConfig, synth_generate
from advclaim.models import fit_on_dataset


@pytest.fixture(scope="session")
def bench():
    """The default synthetic benchmark: n=1000, F=12, separation 2, seed 7."""
    return synth_generate(SynthConfig(n_samples=1000, n_features=12, class_separation=2.0, seed=7))


@pytest.fixture(scope="session")
def small_bench():
    return synth_generate(SynthConfig(n_samples=200, n_features=6, class_separation=3.0, seed=3))


@pytest.fixture(scope="session")
def recurrent(bench):
    return fit_on_dataset("birecurrent", bench, seed=7)


@pytest.fixture(scope="session")
def small_recurrent(small_bench):
    return fit_on_dataset("birecurrent", small_bench, seed=3, hidden_size=16, epochs=5)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line and fail the test when the check fails."""
    lines = request.config.stash[ACCEPTANCE]

    def check(label: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    def skip(label: str, reason: str) -> None:
        lines.append(f"SKIP  {label}: {reason}")
        pytest.skip(reason)

    check.skip = skip
    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
