import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from basel.errors import (
    CountMismatch,
    MalformedHeader,
    ParseError,
    QuatNormWarning,
)
from basel.formats import (
    RESULT_COLUMNS,
    ResultRecord,
    estimates_from_dict,
    estimates_to_dict,
    parse_bal,
    parse_g2o_subset,
    parse_problem_json,
    parse_scene_json,
    problem_to_dict,
    read_results_csv,
    write_bal,
    write_problem_json,
    write_results_csv,
    write_scene_json,
)
from basel.assembly import project
from basel.geometry import quat_to_rot, so3_exp_quat
from basel.simulate import desk_config, generate_scene


def quat_close(qa, qb, atol):
    qa, qb = np.asarray(qa), np.asarray(qb)
    return min(np.linalg.norm(qa - qb), np.linalg.norm(qa + qb)) < atol


@pytest.fixture(scope="module")
def io_scene():
    return generate_scene(desk_config(seed=17, n_cameras=8, n_points=120,
                                      min_points_per_camera=10))


# ------------------------------------------------------------------
# native JSON
# ------------------------------------------------------------------

def test_problem_json_round_trip_exact(io_scene):
    text = write_problem_json(io_scene.graph, io_scene.gt)
    graph, est = parse_problem_json(text)
    assert text == write_problem_json(graph, est)  # byte-for-byte stable
    assert graph.camera_ids() == io_scene.graph.camera_ids()
    assert graph.point_ids() == io_scene.graph.point_ids()
    np.testing.assert_array_equal(est.points, io_scene.gt.points)
    np.testing.assert_array_equal(est.cam_q, io_scene.gt.cam_q)
    assert [c.fixed for c in graph.cameras] == \
           [c.fixed for c in io_scene.graph.cameras]


def test_scene_json_round_trip(io_scene):
    cfg = {"seed": 17, "note": "extra keys survive"}
    text = write_scene_json(io_scene.graph, io_scene.gt, io_scene.initial, cfg)
    graph, gt, initial, cfg_back = parse_scene_json(text)
    assert cfg_back == cfg
    np.testing.assert_array_equal(gt.points, io_scene.gt.points)
    np.testing.assert_array_equal(initial.points, io_scene.initial.points)
    assert initial.cam_ids == io_scene.initial.cam_ids
    again = write_scene_json(graph, gt, initial, cfg_back)
    assert again == text


def test_scene_json_without_initial_defaults_to_gt(io_scene):
    data = json.loads(write_scene_json(io_scene.graph, io_scene.gt,
                                       io_scene.initial, {}))
    del data["initial"]
    graph, gt, initial, _ = parse_scene_json(json.dumps(data))
    np.testing.assert_array_equal(initial.points, gt.points)


def test_problem_json_error_paths():
    with pytest.raises(ParseError):
        parse_problem_json("not json {")
    with pytest.raises(ParseError):
        parse_problem_json("[1, 2]")
    with pytest.raises(ParseError):
        parse_problem_json('{"cameras": []}')
    with pytest.raises(ParseError):
        parse_scene_json('{"no_problem": 1}')
    with pytest.raises(ParseError):
        estimates_from_dict({"cam_q": "wat"})


def test_estimates_dict_round_trip(io_scene):
    est = io_scene.initial
    back = estimates_from_dict(estimates_to_dict(est))
    np.testing.assert_array_equal(back.cam_q, est.cam_q)
    np.testing.assert_array_equal(back.cam_t, est.cam_t)
    np.testing.assert_array_equal(back.points, est.points)
    assert back.cam_ids == est.cam_ids


# ------------------------------------------------------------------
# BAL
# ------------------------------------------------------------------

def bal_text(n_cams=2, n_pts=3):
    """Minimal hand-written BAL problem with every point observed.

    t_z = -8 keeps every point at negative camera z, i.e. in front of a
    BAL camera (which looks down -z)."""
    lines = [f"{n_cams} {n_pts} {n_cams * n_pts}"]
    for c in range(n_cams):
        for p in range(n_pts):
            lines.append(f"{c} {p} {1.0 + p:.1f} {-2.0 + c:.1f}")
    for c in range(n_cams):
        vals = [0.01 * (c + 1), -0.02, 0.03,          # rodrigues
                0.1 * c, 0.2, -8.0,                   # translation
                500.0, 0.0, 0.0]                      # f, k1, k2
        lines.extend(str(v) for v in vals)
    for p in range(n_pts):
        lines.extend(str(v) for v in (0.1 * p, -0.2 * p, 5.0 + p))
    return "\n".join(lines) + "\n"


def test_bal_parse_structure():
    prob = parse_bal(bal_text())
    g = prob.graph
    assert len(g.cameras) == 2 and len(g.points) == 3
    assert len(g.observations) == 6
    # point ids offset past camera ids
    assert min(p.id for p in g.points) >= len(g.cameras)
    assert prob.distortion.shape == (2, 2)
    # per-camera intrinsics with fx == fy == f
    for c in g.cameras:
        intr = g.intrinsics[c.intrinsics_ref]
        assert intr.fx == intr.fy == 500.0


def test_bal_frame_flip_preserves_geometry():
    """A BAL camera looks down -z; after import the same point must land
    on the same (centered) pixel under the package's +z model."""
    text = bal_text(n_cams=1, n_pts=1)
    prob = parse_bal(text)
    g = prob.graph
    cam = g.cameras[0]
    intr = g.intrinsics[0]
    pt = prob.estimates.point(g.points[0].id)

    # reconstruct the original BAL camera and project manually
    rod = np.array([0.01, -0.02, 0.03])
    t = np.array([0.0, 0.2, -8.0])
    R = quat_to_rot(so3_exp_quat(rod))
    pc = R @ pt + t
    u_bal = 500.0 * (-pc[0] / pc[2])
    v_bal = 500.0 * (-pc[1] / pc[2])

    uv = project(prob.estimates.pose(cam.id), intr, pt)
    assert uv is not None
    np.testing.assert_allclose(uv[0] - intr.cx, u_bal, atol=1e-9)
    np.testing.assert_allclose(-(uv[1] - intr.cy), v_bal, atol=1e-9)


def test_bal_round_trip_within_float_precision():
    prob = parse_bal(bal_text(n_cams=3, n_pts=4))
    text = write_bal(prob.graph, prob.estimates, prob.distortion)
    back = parse_bal(text)
    a = problem_to_dict(prob.graph, prob.estimates)
    b = problem_to_dict(back.graph, back.estimates)
    for pa, pb in zip(a["points"], b["points"]):
        np.testing.assert_allclose(pa["xyz"], pb["xyz"], atol=1e-12)
    for ca, cb in zip(a["cameras"], b["cameras"]):
        assert quat_close(ca["q"], cb["q"], 1e-9)
        np.testing.assert_allclose(ca["t"], cb["t"], atol=1e-12)
    for oa, ob in zip(a["observations"], b["observations"]):
        np.testing.assert_allclose(oa["uv"], ob["uv"], atol=1e-9)


def test_bal_error_paths():
    with pytest.raises(MalformedHeader):
        parse_bal("")
    with pytest.raises(MalformedHeader):
        parse_bal("2 x 1\n")
    with pytest.raises(MalformedHeader):
        parse_bal("0 3 0\n")
    with pytest.raises(CountMismatch):
        parse_bal("1 1 1\n0 0 1.0 2.0\n1.0\n")   # too few values
    # observation index out of range
    bad = bal_text().replace("0 0 1.0 -2.0", "9 0 1.0 -2.0", 1)
    with pytest.raises(ParseError):
        parse_bal(bad)
    # non-numeric token deep in the camera block
    bad = bal_text().replace("500.0", "focal", 1)
    with pytest.raises(ParseError) as err:
        parse_bal(bad)
    assert "focal" in str(err.value)


def test_bal_unobserved_point_dropped_with_warning():
    text = bal_text(n_cams=1, n_pts=2)
    # rewrite header to claim 2 points but only observe point 0
    lines = text.splitlines()
    lines[0] = "1 2 1"
    del lines[2]  # drop the observation of point 1
    with pytest.warns(UserWarning, match="unobserved"):
        prob = parse_bal("\n".join(lines) + "\n")
    assert len(prob.graph.points) == 1


# ------------------------------------------------------------------
# g2o subset
# ------------------------------------------------------------------

G2O_SAMPLE = """# comment line
VERTEX_SE3:QUAT 0 0.0 0.0 0.0 0.0 0.0 0.0 1.0
VERTEX_SE3:QUAT 1 0.1 0.0 0.0 0.0 0.0 0.0 1.0
VERTEX_TRACKXYZ 100 0.0 0.0 5.0
VERTEX_XYZ 101 0.5 0.0 5.0
VERTEX_TRACKXYZ 102 9.0 9.0 9.0
EDGE_SE3:QUAT 0 1 0 0 0 0 0 0 1
EDGE_PROJECT_P2MC 100 0 10.0 20.0
EDGE_PROJECT_P2MC 100 1 11.0 21.0
EDGE_PROJECT_P2MC 101 0 12.0 22.0
"""


def test_g2o_parse_and_report():
    graph, est, report = parse_g2o_subset(G2O_SAMPLE)
    assert graph.camera_ids() == [0, 1]
    assert graph.point_ids() == [100, 101]   # 102 has no edge: dropped
    assert len(graph.observations) == 3
    assert report.skipped_tags == 1          # the EDGE_SE3:QUAT line
    assert report.dropped_points == 1
    assert report.renormalized_quats == 0
    np.testing.assert_allclose(est.pose(1).t, [0.1, 0.0, 0.0])
    # edges without an information matrix get identity covariance
    np.testing.assert_array_equal(graph.observations[0].sigma, np.eye(2))


def test_g2o_information_matrix_becomes_covariance():
    text = G2O_SAMPLE.replace(
        "EDGE_PROJECT_P2MC 100 0 10.0 20.0",
        "EDGE_PROJECT_P2MC 100 0 10.0 20.0 2.0 0.1 1.5")
    graph, _, _ = parse_g2o_subset(text)
    obs = [o for o in graph.observations
           if o.camera_id == 0 and o.point_id == 100][0]
    info = np.array([[2.0, 0.1], [0.1, 1.5]])
    np.testing.assert_allclose(obs.sigma, np.linalg.inv(info), rtol=1e-12)


def test_g2o_non_pd_information_rejected():
    text = G2O_SAMPLE.replace(
        "EDGE_PROJECT_P2MC 100 0 10.0 20.0",
        "EDGE_PROJECT_P2MC 100 0 10.0 20.0 1.0 2.0 1.0")
    with pytest.raises(ParseError) as err:
        parse_g2o_subset(text)
    assert "positive definite" in str(err.value)


def test_g2o_quaternion_renormalization():
    text = G2O_SAMPLE.replace(
        "VERTEX_SE3:QUAT 1 0.1 0.0 0.0 0.0 0.0 0.0 1.0",
        "VERTEX_SE3:QUAT 1 0.1 0.0 0.0 0.0 0.0 0.0 1.01")
    with pytest.warns(QuatNormWarning):
        graph, est, report = parse_g2o_subset(text)
    assert report.renormalized_quats == 1
    assert np.isclose(np.linalg.norm(est.pose(1).q), 1.0, atol=1e-12)


def test_g2o_error_paths():
    with pytest.raises(ParseError) as err:
        parse_g2o_subset("VERTEX_SE3:QUAT 0 0 0 0 0 0 0\n")
    assert "line 1" in str(err.value)
    with pytest.raises(ParseError):
        parse_g2o_subset("VERTEX_SE3:QUAT 0 a b c 0 0 0 1\n")
    with pytest.raises(ParseError):
        parse_g2o_subset(G2O_SAMPLE + "EDGE_PROJECT_P2MC 100 7 1.0 2.0\n")
    with pytest.raises(ParseError):
        parse_g2o_subset(G2O_SAMPLE + "EDGE_PROJECT_P2MC 999 0 1.0 2.0\n")
    # duplicate camera vertex
    dup = G2O_SAMPLE + "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n"
    with pytest.raises(ParseError):
        parse_g2o_subset(dup)
    # duplicate edge between the same camera and point
    with pytest.raises(ParseError):
        parse_g2o_subset(G2O_SAMPLE + "EDGE_PROJECT_P2MC 100 0 10.0 20.0\n")
    # degenerate quaternion cannot be renormalized
    with pytest.raises(ParseError):
        parse_g2o_subset("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1e-9\n")


# ------------------------------------------------------------------
# results CSV
# ------------------------------------------------------------------

def sample_records():
    return [
        ResultRecord("gg", 0.5, 10, 10, 200, 123.456, 1.25, 30.5, 4,
                     0.01, 0.009, 7),
        ResultRecord("full", 0.5, 20, 20, 400, 150.0, 0.0, 60.25, 5,
                     0.008, 0.0075, 7),
    ]


def test_results_csv_round_trip():
    text = write_results_csv(sample_records())
    assert text.splitlines()[0] == ",".join(RESULT_COLUMNS)
    back = read_results_csv(text)
    assert back == sample_records()
    assert write_results_csv(back) == text


def test_result_record_total_and_validation():
    rec = sample_records()[0]
    assert rec.total_ms == rec.select_ms + rec.solve_ms
    with pytest.raises(ValueError):
        ResultRecord("gg", 1.5, 1, 1, 1, 0.0, 0.0, 0.0, 0, 0.0, 0.0, 0)
    with pytest.raises(ValueError):
        ResultRecord("gg", 0.5, 1, 1, 1, 0.0, -1.0, 0.0, 0, 0.0, 0.0, 0)


def test_results_csv_error_paths():
    with pytest.raises(ParseError):
        read_results_csv("")
    with pytest.raises(ParseError):
        read_results_csv("wrong,header\n1,2\n")
    good = write_results_csv(sample_records())
    lines = good.splitlines()
    with pytest.raises(ParseError) as err:
        read_results_csv("\n".join([lines[0], "gg,0.5,1"]) + "\n")
    assert "line 2" in str(err.value)
    with pytest.raises(ParseError):
        read_results_csv("\n".join(
            [lines[0], lines[1].replace("gg", "gg").replace("10", "ten", 1)]))


# ------------------------------------------------------------------
# fuzz: hostile inputs must raise controlled errors only
# ------------------------------------------------------------------

@given(st.text(alphabet="0123456789. \n-+eVERTXQUA:_#", max_size=200))
@settings(max_examples=200, deadline=None)
def test_parsers_never_crash_uncontrolled(text):
    for parser in (parse_bal, parse_g2o_subset, parse_problem_json):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                parser(text)
        except ParseError:
            pass
        # anything else (IndexError, numpy errors, ...) fails the test
