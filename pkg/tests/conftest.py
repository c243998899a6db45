from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from sosdec.config import ProblemConfig, load_config
from sosdec.gluing import GlobalDecomposition, build_decomposition

DATA = Path(__file__).parent / "data"
ACCEPTANCE_LINES: list[str] = []


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("sosdec") / "fixtures" / f"{name}.json"))


@lru_cache(maxsize=None)
def fixture_config(name: str) -> ProblemConfig:
    return load_config(fixture_path(name))


@lru_cache(maxsize=None)
def fixture_decomposition(name: str) -> GlobalDecomposition:
    cfg = fixture_config(name)
    return build_decomposition(cfg.function_ast(), cfg.zero_set_description(),
                               cfg.domain_object(), cfg.tol())


def box_grid(lo, hi, n: int, dim: int = 2) -> np.ndarray:
    axes = [np.linspace(lo, hi, n)] * dim
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
