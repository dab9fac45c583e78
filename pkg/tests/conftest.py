import numpy as np
import pytest

from vlmsearch.clustering import DistanceMatrix


def structured_pair(rng, n=256, f=16, k=4, noise=0.3, overlap=1.0):
    """Two activation matrices sharing a rank-k latent with weight ``overlap``."""
    Z = rng.standard_normal((n, k))
    Z2 = rng.standard_normal((n, k))

    def proj(latent):
        Q, _ = np.linalg.qr(rng.standard_normal((f, k)))
        return latent @ Q.T + noise * rng.standard_normal((n, f))

    mixed = overlap * Z + np.sqrt(max(0.0, 1 - overlap**2)) * Z2
    return proj(Z), proj(mixed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def block_matrix():
    """Two tight pairs {A,B} and {C,D} far apart."""
    v = np.array(
        [
            [0.0, 0.1, 0.6, 0.6],
            [0.1, 0.0, 0.6, 0.6],
            [0.6, 0.6, 0.0, 0.1],
            [0.6, 0.6, 0.1, 0.0],
        ]
    )
    return DistanceMatrix(("A", "B", "C", "D"), v)


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line: ``with criterion(3, "title") as detail: ...``."""
    import contextlib

    @contextlib.contextmanager
    def record(number, title):
        detail = {}
        status = "FAIL"
        try:
            yield detail
            status = "PASS"
        finally:
            extra = ", ".join(f"{k}={v}" for k, v in detail.items())
            line = f"[{status}] criterion {number}: {title}" + (f" ({extra})" if extra else "")
            _ACCEPTANCE_LINES.append(line)
            print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
