import numpy as np
import pytest

from bulkedge.lattice import assemble_hamiltonian, build_qwz_kernel, sample_disorder


@pytest.fixture(scope="session")
def qwz():
    return build_qwz_kernel(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


def disordered(L, t, seed=7, index=0, eta=6.0, bc="simple", delta=1.0):
    kernel = build_qwz_kernel(delta)
    return assemble_hamiltonian(kernel, sample_disorder(L, kernel.d, eta, t, seed, index), bc)


def random_hermitian(rng, n, radius=3.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    lam = rng.uniform(-radius, radius, n)
    H = (q * lam) @ q.conj().T
    return 0.5 * (H + H.conj().T)


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    """Log one acceptance line; the terminal summary repeats them all."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
