import numpy as np
import pytest

from basel.simulate import desk_config, generate_scene


@pytest.fixture(scope="session")
def desk_scene():
    """Full-size desk scene; reuse it, never mutate it."""
    return generate_scene(desk_config(seed=11))


@pytest.fixture(scope="session")
def small_scene():
    """Cheap scene for tests that only need structure, not scale."""
    cfg = desk_config(seed=3, n_cameras=12, n_points=300,
                      min_points_per_camera=15)
    return generate_scene(cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
