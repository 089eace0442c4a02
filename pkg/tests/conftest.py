from __future__ import annotations

import numpy as np
import pytest


def random_spd(n: int, rng: np.random.Generator, jitter: float = 0.1) -> np.ndarray:
    """Wishart-like SPD matrix with a floor on the spectrum."""
    G = rng.standard_normal((n, n + 2))
    return G @ G.T / (n + 2) + jitter * np.eye(n)


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
