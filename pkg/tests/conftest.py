from __future__ import annotations

import functools

import pytest

from relspec import fixtures
from relspec.spectral_engine import SpectralPair, decompose

ACCEPTANCE_LINES: list = []


@functools.lru_cache(maxsize=None)
def cached_pair(name: str, **params) -> SpectralPair:
    plus, minus = fixtures.FIXTURES[name](**params)
    return SpectralPair(decompose(plus), decompose(minus, sign="-"))


@pytest.fixture(scope="session")
def pair_factory():
    return cached_pair


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
