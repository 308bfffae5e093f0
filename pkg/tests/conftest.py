"""Shared scenarios and expensive pipeline stages, computed once per session."""

from __future__ import annotations

import functools

import numpy as np
import pytest

from brakechords import chords, psi
from brakechords.model import scenario

ACCEPTANCE_LINES: list[str] = []


@functools.cache
def built(name: str):
    return scenario(name)


@functools.cache
def certified_region(name: str) -> psi.OmegaRegion:
    model, well = built(name)
    return psi.select_delta_hat(model, well, budget=100)


@functools.cache
def chords_of(name: str) -> tuple:
    model, well = built(name)
    return tuple(chords.find_chords(model, well, certified_region(name), nstarts=16))


@functools.cache
def orbit_of(name: str, index: int) -> chords.BrakeOrbit:
    model, well = built(name)
    return chords.extend_to_brake_orbit(model, well, chords_of(name)[index])


def axis_chord(name: str, axis: int) -> int:
    """Index of the chord lying along coordinate axis ``axis``."""
    for k, c in enumerate(chords_of(name)):
        off = np.delete(np.abs(c.a), axis)
        if np.all(off < 1e-6):
            return k
    raise LookupError(f"no chord along axis {axis}")


@pytest.fixture(params=["s1", "s2", "s3"])
def any_scenario(request):
    return built(request.param)


@pytest.fixture
def s1():
    return built("s1")


@pytest.fixture
def s2():
    return built("s2")


@pytest.fixture
def s3():
    return built("s3")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
