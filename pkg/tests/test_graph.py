import numpy as np
import pytest

from basel.errors import (
    DanglingReference,
    DuplicateObservation,
    UnknownCamera,
    UnobservedPoint,
)
from basel.geometry import Pose
from basel.graph import (
    BAGraph,
    CameraVertex,
    Estimates,
    Intrinsics,
    Observation,
    PointVertex,
    build_graph,
    covisible_pool,
    covisibility_weight,
    subgraph,
)

INTR = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def cam(i, fixed=False):
    return CameraVertex(id=i, pose=Pose.identity(), fixed=fixed)


def pt(j):
    return PointVertex(id=j, position=np.array([j, 0.0, 5.0]))


def obs(i, j):
    return Observation(camera_id=i, point_id=j, measurement=np.zeros(2))


def chain_graph():
    """Three cameras: 0 and 1 share points 10,11; 1 and 2 share point 12."""
    cameras = [cam(0), cam(1), cam(2)]
    points = [pt(10), pt(11), pt(12), pt(13)]
    observations = [obs(0, 10), obs(0, 11), obs(1, 10), obs(1, 11),
                    obs(1, 12), obs(2, 12), obs(2, 13)]
    return build_graph(cameras, points, observations, [INTR])


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(fx=-1.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    with pytest.raises(ValueError):
        Intrinsics(fx=500.0, fy=500.0, cx=700.0, cy=240.0, width=640, height=480)


def test_observation_sigma_validation():
    with pytest.raises(ValueError):
        Observation(0, 0, np.zeros(2), sigma=np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValueError):
        Observation(0, 0, np.zeros(2), sigma=np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_build_graph_rejects_duplicate_ids():
    with pytest.raises(ValueError):
        build_graph([cam(0), cam(0)], [pt(1)], [obs(0, 1)], [INTR])
    with pytest.raises(ValueError):
        build_graph([cam(0)], [pt(1), pt(1)], [obs(0, 1)], [INTR])


def test_build_graph_rejects_dangling_references():
    with pytest.raises(DanglingReference):
        build_graph([cam(0)], [pt(1)], [obs(7, 1)], [INTR])
    with pytest.raises(DanglingReference):
        build_graph([cam(0)], [pt(1)], [obs(0, 9)], [INTR])
    with pytest.raises(DanglingReference):
        build_graph([CameraVertex(id=0, pose=Pose.identity(), intrinsics_ref=3)],
                    [pt(1)], [obs(0, 1)], [INTR])


def test_build_graph_rejects_duplicate_observation():
    with pytest.raises(DuplicateObservation):
        build_graph([cam(0)], [pt(1)], [obs(0, 1), obs(0, 1)], [INTR])


def test_build_graph_rejects_unobserved_point():
    with pytest.raises(UnobservedPoint):
        build_graph([cam(0)], [pt(1), pt(2)], [obs(0, 1)], [INTR])


def test_unknown_camera_lookup():
    g = chain_graph()
    with pytest.raises(UnknownCamera):
        g.camera_index(42)
    with pytest.raises(UnknownCamera):
        g.covisible_pool([42])


def test_adjacency_queries():
    g = chain_graph()
    assert g.points_seen_by(0) == frozenset({10, 11})
    assert g.points_seen_by(1) == frozenset({10, 11, 12})
    assert g.cameras_seeing(12) == frozenset({1, 2})
    assert g.observation_count(1) == 3


def test_covisibility_weight_symmetric():
    g = chain_graph()
    assert covisibility_weight(g, 0, 1) == 2
    assert covisibility_weight(g, 1, 0) == 2
    assert covisibility_weight(g, 0, 2) == 0
    assert covisibility_weight(g, 1, 2) == 1


def test_covisible_pool_excludes_roots_and_sorts():
    g = chain_graph()
    assert covisible_pool(g, [1]) == [0, 2]
    assert covisible_pool(g, [0]) == [1]          # cam 2 shares nothing with 0
    assert covisible_pool(g, [0, 2]) == [1]
    assert covisible_pool(g, [1], min_weight=2) == [0]
    with pytest.raises(ValueError):
        covisible_pool(g, [1], min_weight=0)


def test_covisible_pool_matches_weight_definition(small_scene):
    g = small_scene.graph
    root = g.camera_ids()[-1]
    pool = covisible_pool(g, [root], min_weight=3)
    expect = sorted(c.id for c in g.cameras
                    if c.id != root and covisibility_weight(g, root, c.id) >= 3)
    assert pool == expect


def test_packed_arrays_align_with_observations():
    g = chain_graph()
    packed = g.packed()
    assert packed is g.packed()  # built once, cached
    assert packed.obs_cam.shape == (7,)
    k = g.observations.index(g.observations[4])
    o = g.observations[4]
    assert g.cameras[packed.obs_cam[k]].id == o.camera_id
    assert g.points[packed.obs_pt[k]].id == o.point_id
    np.testing.assert_allclose(packed.meas[k], o.measurement)
    # identity sigma whitens to the identity
    np.testing.assert_allclose(packed.whiten[k], np.eye(2), atol=1e-15)


def test_packed_whitening_inverts_sigma():
    s = np.array([[2.0, 0.3], [0.3, 1.5]])
    g = build_graph([cam(0)], [pt(1)],
                    [Observation(0, 1, np.zeros(2), sigma=s)], [INTR])
    W = g.packed().whiten[0]
    np.testing.assert_allclose(W @ s @ W.T, np.eye(2), atol=1e-12)


def test_subgraph_restriction():
    g = chain_graph()
    sub = subgraph(g, [0, 1], [10, 11, 12])
    assert sub.camera_ids() == [0, 1]
    assert sub.point_ids() == [10, 11, 12]
    # observation survives iff both endpoints survive
    assert {(o.camera_id, o.point_id) for o in sub.observations} == {
        (0, 10), (0, 11), (1, 10), (1, 11), (1, 12)}


def test_subgraph_flag_overrides_do_not_alias_parent():
    g = chain_graph()
    sub = subgraph(g, [0, 1], [10, 11], camera_fixed={0: True},
                   point_fixed={10: True})
    assert sub.cameras[0].fixed and not g.cameras[0].fixed
    assert sub.points[0].fixed and not g.points[0].fixed
    sub.points[1].position[0] = 99.0
    assert g.points[1].position[0] != 99.0


def test_subgraph_rejects_orphaned_point():
    g = chain_graph()
    # point 13 is only seen by camera 2; dropping camera 2 orphans it
    with pytest.raises(UnobservedPoint):
        subgraph(g, [0, 1], [10, 13])


def test_estimates_round_trip_and_mutation():
    g = chain_graph()
    est = Estimates.from_graph(g)
    assert est.cam_ids == (0, 1, 2)
    assert est.point_ids == (10, 11, 12, 13)
    p = Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.array([1.0, 2.0, 3.0]))
    est.set_pose(1, p)
    np.testing.assert_allclose(est.pose(1).t, [1.0, 2.0, 3.0])
    est.set_point(12, [4.0, 5.0, 6.0])
    np.testing.assert_allclose(est.point(12), [4.0, 5.0, 6.0])
    c = est.copy()
    c.set_point(12, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(est.point(12), [4.0, 5.0, 6.0])


def test_estimates_restrict_and_merge():
    g = chain_graph()
    est = Estimates.from_graph(g)
    sub = subgraph(g, [1, 2], [10, 11, 12, 13])
    est_sub = est.restrict(sub)
    assert est_sub.cam_ids == (1, 2)
    est_sub.set_point(13, [7.0, 7.0, 7.0])
    est_sub.set_pose(2, Pose(np.array([1.0, 0, 0, 0]), np.array([9.0, 0, 0])))
    est.merge_from(est_sub)
    np.testing.assert_allclose(est.point(13), [7.0, 7.0, 7.0])
    np.testing.assert_allclose(est.pose(2).t, [9.0, 0.0, 0.0])
    # untouched rows unchanged
    np.testing.assert_allclose(est.pose(0).t, np.zeros(3))


def test_estimates_rotations_match_pose(small_scene):
    est = small_scene.gt
    R = est.rotations()
    for i, cid in enumerate(est.cam_ids):
        np.testing.assert_allclose(R[i], est.pose(cid).rotation(), atol=1e-12)
