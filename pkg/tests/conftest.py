import numpy as np
import pytest

from countyir import synth

_CRITERIA: list[tuple[str, bool, str]] = []


class Criterion:
    """Record one acceptance line, then assert it."""

    def __call__(self, name: str, ok: bool, detail: str = ""):
        ok = bool(ok)
        _CRITERIA.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} | {name} | {detail}")
        assert ok, f"{name}: {detail}"


@pytest.fixture
def criterion():
    return Criterion()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} | {name} | {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_bundle():
    cfg = synth.SynthConfig(rows=8, cols=10, n_non_modifiable=6, n_modifiable=4, noise_sd=5.0,
                            seed=3)
    return synth.generate_synthetic(cfg)
