import numpy as np
import pytest

from sphere_nls.fields import SpectralField
from sphere_nls.harmonics import ncoeffs


def random_coeffs(nmax: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    size = ncoeffs(nmax)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2 * size)


def random_field(nmax: int, seed: int = 0, scale: float = 1.0) -> SpectralField:
    return SpectralField(nmax, random_coeffs(nmax, seed, scale))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
