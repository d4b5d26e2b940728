from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def scene_dir() -> Path:
    return FIXTURES / "scene"
