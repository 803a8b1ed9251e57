import os

import hypothesis
import numpy as np
import pytest

from datagen import gen_counter_example, gen_synthetic

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CYCLIC_OT_BENCHMARK") == "1":
        return
    skip = pytest.mark.skip(reason="set CYCLIC_OT_BENCHMARK=1 to run benchmark-scale tests")
    for item in items:
        if "benchmark" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_problem():
    return gen_synthetic(4, 3, seed=0)


@pytest.fixture
def counter_problem():
    return gen_counter_example(1.0)
