import datetime as dt
import logging
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

logging.getLogger("afreg").setLevel(logging.ERROR)


@pytest.fixture
def start_date():
    return dt.date(2001, 1, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
