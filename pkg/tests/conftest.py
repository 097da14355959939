import numpy as np
import pytest

from jnfbench.acoustics import RenderedSample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sample(rng, n=4096, channels=3, sample_id="s"):
    noisy = rng.standard_normal((channels, n))
    noise = 0.5 * rng.standard_normal((channels, n))
    return RenderedSample(noisy=noisy, target=rng.standard_normal(n), noise=noise, snr_db=0.0,
                          sample_rate=16000, sample_id=sample_id)


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` with respect to array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
