import importlib.resources

import pytest


@pytest.fixture(scope="session")
def scenario_dir():
    return importlib.resources.files("tubeplan") / "scenarios"
