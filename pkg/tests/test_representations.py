import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtrack.errors import DomainError, KindError
from evtrack.events import EventStream
from evtrack.representations import (
    EventFrame,
    FrameKind,
    FrameSampler,
    RepresentationConfig,
    TimeSurfaceState,
    bilinear_sample,
    gaussian_blur,
    gaussian_kernel,
    image_gradient,
    negate,
    read_pgm,
    render_event_map,
    render_time_surface,
    tracking_frame,
    update_t_last,
    write_pgm,
)

CFG = RepresentationConfig()


def events(ts, xs, ys, width=8, height=6):
    n = len(ts)
    return EventStream(np.asarray(ts), np.asarray(xs), np.asarray(ys), np.ones(n), width, height)


def test_config_validation():
    with pytest.raises(ValueError):
        RepresentationConfig(delta_ms=0)
    with pytest.raises(ValueError):
        RepresentationConfig(blur_kernel=4)
    with pytest.raises(ValueError):
        RepresentationConfig(em_event_count=0)


def test_update_t_last_examples():
    st_ = TimeSurfaceState(8, 6)
    update_t_last(st_, events([10, 20], [3, 3], [2, 2]))
    assert st_.t_last[2, 3] == 20
    before = st_.t_last.copy()
    update_t_last(st_, events([], [], []))
    np.testing.assert_array_equal(st_.t_last, before)
    assert not st_.fired[0, 0]
    update_t_last(st_, events([30], [0], [0]))
    assert st_.t_last[0, 0] == 30


def test_time_surface_point_values():
    st_ = TimeSurfaceState(8, 6)
    st_.update(events([0, 30_000], [1, 2], [1, 1]))
    frame = render_time_surface(st_, 30_000, CFG)
    assert frame.kind is FrameKind.TS
    assert frame.values[1, 2] == 255
    assert frame.values[1, 1] == 94
    assert frame.values[0, 0] == 0


def test_time_surface_before_latest_event():
    st_ = TimeSurfaceState(8, 6)
    st_.update(events([100], [1], [1]))
    with pytest.raises(DomainError):
        render_time_surface(st_, 99, CFG)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 200_000), min_size=2, max_size=40), st.integers(0, 100_000))
def test_time_surface_monotone_in_age(ts, extra):
    ts = sorted(ts)
    n = len(ts)
    st_ = TimeSurfaceState(n, 1)
    st_.update(EventStream(np.array(ts), np.arange(n), np.zeros(n), np.ones(n), n, 1))
    t = ts[-1]
    a = render_time_surface(st_, t, CFG).values[0]
    b = render_time_surface(st_, t + extra, CFG).values[0]
    # older events (smaller timestamps, to the left) never render brighter
    assert np.all(np.diff(a) >= 0)
    assert np.all(b <= a)
    assert a.min() >= 0 and a.max() <= 255


def test_event_map_examples():
    em = render_event_map(events([1, 2, 3], [1, 4, 1], [1, 2, 1]), (8, 6))
    assert em.trigger_time == 3
    lit = set(zip(*np.nonzero(em.values)))
    assert lit == {(1, 1), (2, 4)}
    assert set(np.unique(em.values)) <= {0.0, 255.0}
    one = render_event_map(events([5], [0], [0]), (8, 6))
    assert one.values.sum() == 255
    with pytest.raises(DomainError):
        render_event_map(events([], [], []), (8, 6))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 5)), min_size=1, max_size=60))
def test_event_map_binary_and_bounded(pix):
    xs, ys = zip(*pix)
    em = render_event_map(events(range(len(pix)), xs, ys), (8, 6))
    assert set(np.unique(em.values)) <= {0.0, 255.0}
    assert np.count_nonzero(em.values) <= len(pix)


def test_negate():
    f = EventFrame(np.array([[255.0, 0.0, 94.0]]), 0, FrameKind.TS)
    n = negate(f)
    np.testing.assert_array_equal(n.values, [[0, 255, 161]])
    assert n.kind is FrameKind.NEGATIVE_TS
    with pytest.raises(KindError):
        negate(n)
    back = EventFrame(255.0 - n.values, 0, FrameKind.TS)
    np.testing.assert_array_equal(back.values, f.values)


def test_blur_requires_negative():
    f = EventFrame(np.zeros((6, 8)), 0, FrameKind.EM)
    with pytest.raises(KindError):
        gaussian_blur(f, CFG)


def test_blur_constant_and_impulse():
    const = EventFrame(np.full((10, 12), 77.0), 0, FrameKind.NEGATIVE_TS)
    np.testing.assert_allclose(gaussian_blur(const, CFG).values, 77.0, atol=1e-9)
    img = np.zeros((11, 11))
    img[5, 5] = 100.0
    out = gaussian_blur(EventFrame(img, 0, FrameKind.NEGATIVE_EM), CFG)
    k = gaussian_kernel(5, 1.0)
    np.testing.assert_allclose(out.values[3:8, 3:8], 100.0 * np.outer(k, k), atol=1e-12)
    assert out.blurred
    assert k.sum() == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 50))
def test_blur_range_and_constant_shift(seed, c):
    img = np.random.default_rng(seed).uniform(0, 200, (9, 13))
    a = gaussian_blur(EventFrame(img, 0, FrameKind.NEGATIVE_TS), CFG).values
    b = gaussian_blur(EventFrame(img + c, 0, FrameKind.NEGATIVE_TS), CFG).values
    assert a.min() >= 0 and a.max() <= 255
    np.testing.assert_allclose(b, a + c, atol=1e-9)


def test_tracking_frame_is_negated_and_blurred():
    f = tracking_frame(EventFrame(np.zeros((6, 8)), 7, FrameKind.TS), CFG)
    assert f.kind is FrameKind.NEGATIVE_TS and f.blurred and f.trigger_time == 7
    np.testing.assert_allclose(f.values, 255.0)


def test_bilinear_examples():
    img = np.arange(20, dtype=float).reshape(4, 5) ** 1.5
    assert bilinear_sample(img, (2, 1)) == (img[1, 2], True)
    v, ok = bilinear_sample(img, (2.5, 1.5))
    assert ok and v == pytest.approx(img[1:3, 2:4].mean())
    v, ok = bilinear_sample(img, (4.01, 1))
    assert not ok and np.isnan(v)
    assert bilinear_sample(img, (4, 3)) == (img[3, 4], True)


def test_gradient_examples():
    g, ok = image_gradient(np.full((6, 8), 3.0), (3.3, 2.7))
    assert ok
    np.testing.assert_array_equal(g, 0.0)
    ramp = np.tile(np.arange(8) * 2.5, (6, 1))
    g, ok = image_gradient(ramp, (3.3, 2.7))
    np.testing.assert_allclose(g, [2.5, 0.0], atol=1e-9)
    assert image_gradient(ramp, (0.5, 2.0))[1] is False
    assert image_gradient(ramp, (3.0, 4.5))[1] is False


def test_gradient_matches_finite_differences_on_smooth_frames():
    # on a bilinear polynomial the interpolant is the polynomial itself, so
    # the unit-step central difference is its exact derivative
    yy, xx = np.mgrid[0:30, 0:40].astype(float)
    img = 40 + 1.5 * xx - 0.8 * yy + 0.05 * xx * yy
    rng = np.random.default_rng(4)
    h = 1e-3
    for p in rng.uniform([1, 1], [38, 28], (200, 2)):
        g, ok = image_gradient(img, p)
        fd = [
            (bilinear_sample(img, p + [h, 0])[0] - bilinear_sample(img, p - [h, 0])[0]) / (2 * h),
            (bilinear_sample(img, p + [0, h])[0] - bilinear_sample(img, p - [0, h])[0]) / (2 * h),
        ]
        assert ok
        np.testing.assert_allclose(g, fd, atol=1e-6)


def test_sampler_agrees_with_pointwise_functions():
    rng = np.random.default_rng(5)
    img = rng.uniform(0, 255, (20, 30))
    pts = rng.uniform([-2, -2], [31, 21], (300, 2))
    vals, grads, valid = FrameSampler(img).sample(pts)
    for p, v, g, ok in zip(pts, vals, grads, valid):
        g_ref, ok_ref = image_gradient(img, p)
        assert ok == ok_ref
        if ok:
            assert v == pytest.approx(bilinear_sample(img, p)[0], abs=1e-9)
            np.testing.assert_allclose(g, g_ref, atol=1e-9)
    v2, valid2 = FrameSampler(img).values(pts)
    np.testing.assert_array_equal(valid2, valid)
    np.testing.assert_array_equal(v2, vals[valid])


@pytest.mark.parametrize("binary", [True, False])
def test_pgm_round_trip(tmp_path, binary):
    img = np.random.default_rng(0).integers(0, 256, (6, 9)).astype(float)
    write_pgm(EventFrame(img, 0, FrameKind.TS), tmp_path / "f.pgm", binary=binary)
    np.testing.assert_array_equal(read_pgm(tmp_path / "f.pgm"), img)
