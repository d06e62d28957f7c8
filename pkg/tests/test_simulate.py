import dataclasses

import numpy as np
import pytest

from basel.assembly import project
from basel.errors import InfeasibleConfig
from basel.simulate import (
    POINT_ID_BASE,
    SceneConfig,
    desk_config,
    generate_scene,
    paper_config,
    perturb_estimates,
    with_seed,
)


def test_scene_meets_structural_guarantees(small_scene):
    g = small_scene.graph
    cfg = small_scene.config
    assert len(g.cameras) == cfg.n_cameras
    assert len(g.points) == cfg.n_points
    assert sum(c.fixed for c in g.cameras) == cfg.n_fixed
    assert [c.id for c in g.cameras if c.fixed] == list(range(cfg.n_fixed))
    assert min(len(g.cameras_seeing(p.id)) for p in g.points) >= cfg.min_views
    assert min(g.observation_count(c.id) for c in g.cameras) >= cfg.min_points_per_camera
    # id ranges disjoint by construction
    assert min(p.id for p in g.points) >= POINT_ID_BASE
    assert max(c.id for c in g.cameras) < POINT_ID_BASE


def test_measurements_are_projections_plus_noise(small_scene):
    g = small_scene.graph
    gt = small_scene.gt
    cfg = small_scene.config
    intr = g.intrinsics[0]
    errs = []
    for o in g.observations[:300]:
        uv = project(gt.pose(o.camera_id), intr, gt.point(o.point_id))
        assert uv is not None
        errs.append(np.linalg.norm(o.measurement - uv))
    errs = np.array(errs)
    # Gaussian pixel noise: mean of |e| for 2d normal is sigma*sqrt(pi/2)
    assert 0.2 * cfg.pixel_sigma < errs.mean() < 3.0 * cfg.pixel_sigma
    assert errs.max() < 8.0 * cfg.pixel_sigma


def test_noiseless_scene_projects_exactly():
    cfg = desk_config(seed=4, n_cameras=8, n_points=150, pixel_sigma=0.0,
                      min_points_per_camera=10)
    scene = generate_scene(cfg)
    intr = scene.graph.intrinsics[0]
    for o in scene.graph.observations[:100]:
        uv = project(scene.gt.pose(o.camera_id), intr, scene.gt.point(o.point_id))
        np.testing.assert_allclose(o.measurement, uv, atol=1e-9)
    # sigma stays PD even with zero noise
    assert np.linalg.det(scene.graph.observations[0].sigma) > 0


def test_generation_is_deterministic():
    cfg = desk_config(seed=9, n_cameras=10, n_points=200,
                      min_points_per_camera=12)
    a = generate_scene(cfg)
    b = generate_scene(cfg)
    np.testing.assert_array_equal(a.gt.points, b.gt.points)
    np.testing.assert_array_equal(a.gt.cam_q, b.gt.cam_q)
    np.testing.assert_array_equal(a.initial.points, b.initial.points)
    assert [(o.camera_id, o.point_id) for o in a.graph.observations] == \
           [(o.camera_id, o.point_id) for o in b.graph.observations]
    m = np.stack([o.measurement for o in a.graph.observations])
    n = np.stack([o.measurement for o in b.graph.observations])
    np.testing.assert_array_equal(m, n)


def test_different_seeds_differ():
    cfg = desk_config(seed=9, n_cameras=10, n_points=200,
                      min_points_per_camera=12)
    a = generate_scene(cfg)
    b = generate_scene(with_seed(cfg, 10))
    assert not np.array_equal(a.gt.points, b.gt.points)


def test_noise_level_does_not_change_geometry():
    base = desk_config(seed=6, n_cameras=10, n_points=200,
                       min_points_per_camera=12)
    quiet = dataclasses.replace(base, pixel_sigma=0.5)
    a, b = generate_scene(base), generate_scene(quiet)
    np.testing.assert_array_equal(a.gt.points, b.gt.points)
    np.testing.assert_array_equal(a.gt.cam_t, b.gt.cam_t)


def test_initial_perturbs_only_free_vertices(small_scene):
    g = small_scene.graph
    gt, init = small_scene.gt, small_scene.initial
    for c in g.cameras:
        same = np.allclose(gt.pose(c.id).t, init.pose(c.id).t, atol=1e-15) and \
               np.allclose(gt.pose(c.id).q, init.pose(c.id).q, atol=1e-15)
        assert same == c.fixed
    moved = sum(not np.allclose(gt.point(p.id), init.point(p.id))
                for p in g.points)
    assert moved == len(g.points)  # no fixed points in generated scenes


def test_perturb_estimates_statistics(small_scene, rng):
    gt = small_scene.gt
    out = perturb_estimates(small_scene.graph, gt, rot_sigma=0.01,
                            trans_sigma=0.02, point_sigma=0.03, rng=rng)
    dp = out.points - gt.points
    assert np.isclose(dp.std(), 0.03, rtol=0.2)
    angles = [gt.pose(c.id).angle_to(out.pose(c.id))
              for c in small_scene.graph.cameras if not c.fixed]
    # |rotvec| for sigma=0.01: mean about sigma*sqrt(8/pi)
    assert 0.005 < np.mean(angles) < 0.04
    # input untouched
    assert not np.shares_memory(out.points, gt.points)


def test_infeasible_configs_raise():
    with pytest.raises(InfeasibleConfig):
        generate_scene(SceneConfig(n_cameras=2, n_fixed=2, n_points=50))
    # far plane below the ring radius: nothing is visible
    with pytest.raises(InfeasibleConfig):
        generate_scene(desk_config(seed=0, n_cameras=8, n_points=60,
                                   far=0.5, max_rounds=3))


def test_partial_visibility_on_the_ring(desk_scene):
    # the box is wider than the ring so no camera sees everything
    g = desk_scene.graph
    counts = [g.observation_count(c.id) for c in g.cameras]
    assert max(counts) < len(g.points)
    assert min(counts) >= desk_scene.config.min_points_per_camera


def test_presets():
    d, p = desk_config(seed=1), paper_config(seed=1)
    assert d.seed == p.seed == 1
    assert p.n_points > d.n_points
    assert desk_config(seed=1, n_points=77).n_points == 77
