import numpy as np
import pytest

from otfs_oma_lab.channel import UtChannel

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def random_channel(rng: np.random.Generator, cfg, n_paths: int = 3, nu_frac: float = 0.3,
                   max_delay_frac: float = 0.6) -> UtChannel:
    """Rayleigh paths with an exponential power profile, first path at zero delay,
    fractional delays below ``max_delay_frac * T`` and Jakes-style Dopplers."""
    powers = np.exp(-np.arange(n_paths) / 1.5)
    powers /= powers.sum()
    gains = np.sqrt(powers / 2) * (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
    delays = np.sort(np.concatenate([[0.0], rng.uniform(0, max_delay_frac * cfg.T, n_paths - 1)]))
    dopplers = nu_frac * cfg.delta_f * np.cos(rng.uniform(0, 2 * np.pi, n_paths))
    return UtChannel.from_arrays(gains, delays, dopplers)


def rel_err(a, b, ref=None) -> float:
    """Frobenius error of ``a`` against ``b``, relative to ``ref`` (default ``b``)."""
    ref = b if ref is None else ref
    return float(np.linalg.norm(a - b) / np.linalg.norm(ref))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_channel():
    return random_channel


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
