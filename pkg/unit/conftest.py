"""Pytest configuration and shared fixtures."""

import pytest

from history.repository import StageReportRepository
from unit.fixtures.factories import FeatureFactory


@pytest.fixture
def feature_factory():
    """Provide FeatureFactory instance."""
    return FeatureFactory()


@pytest.fixture(scope="module")
def standard_set():
    """The standard synthetic fixture (seed 0)."""
    return FeatureFactory.create_standard(seed=0)


@pytest.fixture
def fixture_dir(tmp_path):
    """Factory writing the on-disk fixture into a fresh directory."""

    def _write(stages, **kwargs):
        return FeatureFactory.write_fixture(tmp_path, stages, **kwargs)

    return _write


@pytest.fixture(autouse=True)
def close_history_connections():
    """Release cached DuckDB connections between tests."""
    yield
    StageReportRepository.close_all()


@pytest.fixture
def standard_dir(tmp_path):
    """Factory writing only the plain standard fixture into a fresh directory."""

    def _write(stages, **kwargs):
        return FeatureFactory.write_standard(tmp_path, stages, **kwargs)

    return _write
