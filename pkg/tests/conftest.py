import logging

import numpy as np
import pytest

from sdcbf.config import load_config
from sdcbf.harness import build_runtime

logging.getLogger("sdcbf").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def runtime(cfg):
    return build_runtime(cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
