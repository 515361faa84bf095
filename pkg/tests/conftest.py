from __future__ import annotations

import pathlib

import pytest

from futurecall import lint_context, load_workload, run_workload

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
FIXTURE_NAMES = ["fig1", "vehicle", "diamond", "fail-chain", "thinking", "pairs"]


def fixture_path(name: str) -> str:
    return str(FIXTURES / f"{name}.json")


@pytest.fixture
def fig1():
    return load_workload(fixture_path("fig1"))


def run_fixture(name: str, mode: str, **kwargs):
    """Load a repo fixture fresh, run it, and lint the produced context."""
    trace = run_workload(load_workload(fixture_path(name)), mode, **kwargs)
    assert lint_context(trace.messages) == []
    return trace
