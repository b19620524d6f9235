"""Shared fixtures: small synthetic rasters and tiny generated sheets"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.dataset_gen import GenConfig, NoiseConfig  # noqa: E402
from src.raster import GrayRaster  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blank_sheet():
    return GrayRaster(np.full((300, 400), 255, dtype=np.uint8))


@pytest.fixture
def grid_sheet():
    """White 400x300 sheet with one horizontal and one vertical 3 px line"""
    data = np.full((300, 400), 255, dtype=np.uint8)
    data[99:102, 50:351] = 0
    data[150:281, 199:202] = 0
    return GrayRaster(data)


@pytest.fixture
def small_gen_config():
    """A sheet small enough for unit tests; noise free"""
    return GenConfig(seed=7, sheet_width=2000, aspect=0.7, count=2, symbols_per_sheet=(4, 6),
                     trunks_per_sheet=(2, 3), stubs_per_sheet=(1, 2), noise=NoiseConfig())
