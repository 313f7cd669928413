import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def tiny_training_scenes():
    from pose6d.fusion.train import tiny_scenes

    return tiny_scenes(4, 0)


@pytest.fixture(scope="session")
def default_scene():
    from pose6d.synth import default_spec, make_scene

    return make_scene(default_spec(), 11)
