import numpy as np
import pytest

from irforge.library import toy_library, toy_scene, write_toy_inputs
from irforge.rng import derive_stream
from irforge.types import GrayImage, SkyMask


@pytest.fixture(scope="session")
def library():
    return toy_library(derive_stream(123, 0), 16)


@pytest.fixture
def flat_scene():
    img = GrayImage(np.full((96, 96), 40, dtype=np.uint8))
    return img, SkyMask(np.ones((96, 96), dtype=bool))


@pytest.fixture
def split_scene():
    """Sky on the left half, ground on the right."""
    sky = np.zeros((80, 120), dtype=bool)
    sky[:, :60] = True
    return GrayImage(np.full((80, 120), 50, dtype=np.uint8)), SkyMask(sky)


@pytest.fixture(scope="session")
def toy_inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("inputs")
    return write_toy_inputs(root, 4, seed=7, size=128, n_chips=8)


@pytest.fixture(scope="session")
def toy_pair():
    return toy_scene(derive_stream(5, 1), 128, 128)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
