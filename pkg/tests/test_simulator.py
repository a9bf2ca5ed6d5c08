import numpy as np
import pytest

from evtrack.errors import DomainError, SamplingRateError
from evtrack.geometry import CameraIntrinsics, log_map, project_points
from evtrack.simulator import (
    ContrastModel,
    SequenceConfig,
    SyntheticScene,
    Trajectory6,
    TrajectorySpec,
    generate_events,
    ground_truth_map,
    make_scene,
    plane_depth_map,
    render_intensity,
    sample_pose,
    simulate_sequence,
)

SMALL = CameraIntrinsics(100.0, 100.0, 40.0, 30.0, 80, 60)


def speeds(spec, n=2001):
    ts = np.linspace(0, spec.duration, n)
    pos = np.array([sample_pose(spec, t).translation for t in ts])
    return np.linalg.norm(np.diff(pos, axis=0), axis=1) / np.diff(ts)


def test_spec_validation():
    with pytest.raises(DomainError):
        TrajectorySpec(duration=0)
    with pytest.raises(DomainError):
        TrajectorySpec(kind="helical")
    with pytest.raises(DomainError):
        SyntheticScene(np.full((4, 4), 2.0), (1.0, 1.0))
    with pytest.raises(DomainError):
        SyntheticScene(np.zeros((4, 4)), (1.0, 1.0), plane_depth=0.0)


@pytest.mark.parametrize("kind", ["planar", "six_dof"])
def test_trajectory_anchor_and_bounds(kind):
    spec = TrajectorySpec(kind=kind, duration=1.5, seed=3)
    np.testing.assert_allclose(sample_pose(spec, 0.0).matrix, np.eye(4), atol=1e-15)
    with pytest.raises(DomainError):
        sample_pose(spec, 1.6)
    with pytest.raises(DomainError):
        sample_pose(spec, -0.1)


@pytest.mark.parametrize("kind,speed", [("planar", 0.3), ("six_dof", 1.0)])
def test_mean_speed_matches_regime(kind, speed):
    spec = TrajectorySpec(kind=kind, duration=2.0, seed=1)
    assert spec.speed == speed
    assert 0.5 * speed <= speeds(spec).mean() <= 1.5 * speed


def test_planar_constraint_exact():
    spec = TrajectorySpec("planar", 2.0, seed=5)
    for t in np.linspace(0, 2.0, 101):
        th = log_map(sample_pose(spec, t))
        T = sample_pose(spec, t).matrix
        assert T[2, 3] == 0.0
        # rotation about the optical axis only
        assert T[0, 2] == T[1, 2] == T[2, 0] == T[2, 1] == 0.0
        assert th[3] == th[4] == 0.0


def test_pause_is_static_and_smooth():
    spec = TrajectorySpec("six_dof", 2.0, seed=2, pauses=((0.8, 1.3),))
    traj = Trajectory6(spec)
    inside = [traj.pose(t).matrix for t in np.linspace(0.8, 1.3, 20)]
    for m in inside:
        np.testing.assert_array_equal(m, inside[0])
    v = speeds(spec, 4001)
    assert np.all(np.isfinite(v))
    # no jumps in velocity across the ramps
    assert np.abs(np.diff(v)).max() < 0.05


def test_static_trajectory_no_events():
    scene = make_scene("checkerboard", 2.0)
    stream, gt = generate_events(scene, TrajectorySpec(duration=0.05, speed=0.0), ContrastModel(), SMALL)
    assert len(stream) == 0
    assert len(gt.times) == 51


def test_uniform_texture_no_events():
    scene = SyntheticScene(np.full((50, 60), 0.4), (5.0, 4.0), 2.0)
    stream, _ = generate_events(scene, TrajectorySpec("six_dof", 0.1, seed=0), ContrastModel(), SMALL)
    assert len(stream) == 0


def test_higher_threshold_never_more_events():
    scene = make_scene("poster", 2.0)
    spec = TrajectorySpec("six_dof", 0.1, seed=4)
    n1 = len(generate_events(scene, spec, ContrastModel(0.1), SMALL)[0])
    n2 = len(generate_events(scene, spec, ContrastModel(0.2), SMALL)[0])
    assert n1 > 0 and n2 <= n1


def test_sampling_rate_precondition():
    scene = make_scene("checkerboard", 1.0)
    spec = TrajectorySpec("six_dof", 0.5, speed=3.0, seed=0)
    with pytest.raises(SamplingRateError):
        generate_events(scene, spec, ContrastModel(), SMALL, rate=20)


def test_events_sorted_and_on_changing_pixels():
    scene = make_scene("office", 2.0)
    spec = TrajectorySpec("planar", 0.1, seed=6)
    stream, gt = generate_events(scene, spec, ContrastModel(), SMALL)
    assert len(stream) > 0
    assert np.all(np.diff(stream.t) >= 0)
    # each event pixel's intensity changes within the step that produced it
    rng = np.random.default_rng(0)
    for i in rng.choice(len(stream), 200, replace=False):
        k = np.searchsorted(gt.times, stream.t[i])
        k0, k1 = max(k - 1, 0), min(k + 1, len(gt.times) - 1)
        a = render_intensity(scene, gt.poses_wc[k0], SMALL)[stream.y[i], stream.x[i]]
        b = render_intensity(scene, gt.poses_wc[k1], SMALL)[stream.y[i], stream.x[i]]
        assert a != b


def test_refractory_period_thins_events():
    scene = make_scene("checkerboard", 2.0)
    spec = TrajectorySpec("six_dof", 0.1, seed=7)
    free = generate_events(scene, spec, ContrastModel(), SMALL)[0]
    ref = generate_events(scene, spec, ContrastModel(refractory_us=2000), SMALL)[0]
    assert 0 < len(ref) <= len(free)
    for p in set(zip(ref.x.tolist(), ref.y.tolist())):
        t = ref.t[(ref.x == p[0]) & (ref.y == p[1])]
        assert np.all(np.diff(t) >= 2000)


def test_ground_truth_map_properties():
    scene = make_scene("checkerboard", 3.0)
    pose = sample_pose(TrajectorySpec("six_dof", 1.0, seed=8), 0.7)
    world, tmpl = ground_truth_map(scene, SMALL, pose)
    assert len(world) > 100
    np.testing.assert_allclose(world[:, 2], 3.0, atol=1e-9)
    depth, *_ = plane_depth_map(scene, pose, SMALL)
    iu = tmpl.pixels.astype(int)
    np.testing.assert_allclose(tmpl.depths, depth[iu[:, 1], iu[:, 0]], atol=1e-9)
    uv, ok = project_points(pose.inverse() @ world, SMALL)
    assert ok.all()
    np.testing.assert_allclose(uv, tmpl.pixels, atol=1e-9)
    empty, t_empty = ground_truth_map(scene, SMALL, pose, gradient_floor=np.inf)
    assert len(empty) == 0 and len(t_empty) == 0


def test_simulate_sequence_deterministic(tmp_path):
    cfg = SequenceConfig(duration=0.1, seed=3, camera=SMALL)
    a = simulate_sequence(cfg)
    b = simulate_sequence(cfg)
    for name in ("t", "x", "y", "polarity"):
        np.testing.assert_array_equal(getattr(a.events, name), getattr(b.events, name))
    np.testing.assert_array_equal(a.map_points, b.map_points)
    assert a.gt_pose(50_000).matrix.tolist() == b.gt_pose(50_000).matrix.tolist()
