"""Deterministic synthetic event camera facing a textured wall.

The world frame is the camera frame at ``t = 0``; the wall is the plane
``z = plane_depth`` and carries a grayscale texture centred on the optical
axis. Trajectories return camera-to-world poses ``T_wc``.

Events follow the ideal contrast model: a pixel fires each time its log
intensity moves a further ``C`` away from the level at its previous event.
Between pose samples the log intensity is interpolated linearly, which gives
sub-step event timestamps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError, SamplingRateError
from .events import EventStream
from .geometry import CameraIntrinsics, PoseSE3, TemplateView, back_project_points, exp_map

SCENES = ("office", "poster", "checkerboard")
DEFAULT_CAMERA = CameraIntrinsics(fx=200.0, fy=200.0, cx=120.0, cy=90.0, width=240, height=180)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    texture: np.ndarray  # (rows, cols) in [0, 1]; row index grows with world y
    extent: tuple[float, float]  # (width_m, height_m)
    plane_depth: float = 8.0
    name: str = "custom"

    def __post_init__(self):
        tex = np.asarray(self.texture, dtype=float)
        if tex.ndim != 2 or tex.min() < 0 or tex.max() > 1:
            raise DomainError("texture must be a 2D grid with values in [0, 1]")
        if self.plane_depth <= 0:
            raise DomainError("plane_depth must be positive")
        object.__setattr__(self, "texture", tex)

    def sample(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Bilinear texture lookup at world plane coordinates (clamped at the edges)."""
        rows, cols = self.texture.shape
        w, h = self.extent
        u = np.clip((X * (1.0 / w) + 0.5) * (cols - 1), 0, cols - 1)
        v = np.clip((Y * (1.0 / h) + 0.5) * (rows - 1), 0, rows - 1)
        u0 = np.minimum(u.astype(np.intp), cols - 2)
        v0 = np.minimum(v.astype(np.intp), rows - 2)
        a = u - u0
        b = v - v0
        flat = self.texture.ravel()
        i00 = v0 * cols + u0
        p00 = flat[i00]
        p01 = flat[i00 + 1]
        p10 = flat[i00 + cols]
        p11 = flat[i00 + cols + 1]
        top = p00 + a * (p01 - p00)
        bot = p10 + a * (p11 - p10)
        return top + b * (bot - top)


def _normalize(img: np.ndarray, lo: float, hi: float) -> np.ndarray:
    img = img - img.min()
    img = img / max(img.max(), 1e-12)
    return lo + (hi - lo) * img


def make_texture(name: str, shape=(800, 1000), extent=(5.0, 4.0), texels_per_pixel: float = 2.0) -> np.ndarray:
    """Procedural textures for the three scene classes.

    Each is generated from a fixed seed so a scene name always yields the
    same wall. A light blur of about half a camera pixel stands in for the
    pixel footprint.
    """
    rows, cols = shape
    ys = (np.arange(rows) / (rows - 1) - 0.5) * extent[1]
    xs = (np.arange(cols) / (cols - 1) - 0.5) * extent[0]
    X, Y = np.meshgrid(xs, ys)
    if name == "checkerboard":
        square = extent[0] / 16.0
        img = ((np.floor(X / square) + np.floor(Y / square)) % 2).astype(float)
        img = 0.3 + 0.4 * img
    elif name == "poster":
        rng = np.random.default_rng(1)
        img = np.zeros(shape)
        for sigma, weight in ((40, 1.0), (16, 0.6), (6, 0.35)):
            img += weight * gaussian_filter(rng.standard_normal(shape), sigma) * sigma
        img = _normalize(np.tanh(2.0 * img / img.std()), 0.15, 0.85)
    elif name == "office":
        rng = np.random.default_rng(2)
        img = np.full(shape, 0.55)
        for _ in range(60):
            w, h = rng.uniform(0.02, 0.18, 2) * extent[0]
            x0, y0 = rng.uniform(-extent[0] / 2, extent[0] / 2 - w), rng.uniform(-extent[1] / 2, extent[1] / 2 - h)
            mask = (X >= x0) & (X < x0 + w) & (Y >= y0) & (Y < y0 + h)
            img[mask] = rng.uniform(0.15, 0.85)
        for _ in range(25):
            if rng.random() < 0.5:
                x0 = rng.uniform(-extent[0] / 2, extent[0] / 2)
                img[np.abs(X - x0) < 0.003 * extent[0]] = 0.15
            else:
                y0 = rng.uniform(-extent[1] / 2, extent[1] / 2)
                img[np.abs(Y - y0) < 0.003 * extent[0]] = 0.15
    else:
        raise DomainError(f"unknown scene {name!r}; choose from {SCENES}")
    img = gaussian_filter(img, 0.5 * texels_per_pixel, mode="nearest")
    return np.clip(img, 0.0, 1.0)


def make_scene(name: str, plane_depth: float = 8.0) -> SyntheticScene:
    """Wall whose texture spans 2.5 x 2 plane depths, so its look in pixels is depth independent."""
    extent = (2.5 * plane_depth, 2.0 * plane_depth)
    return SyntheticScene(make_texture(name, extent=extent), extent, plane_depth, name)


@dataclass(frozen=True)
class TrajectorySpec:
    """Seeded smooth trajectory.

    ``speed`` is the mean translational speed (m/s) over the run when there
    are no pauses. ``pauses`` lists ``(start, end)`` intervals during which
    the camera is still; velocity ramps down and up over ``ramp`` seconds
    just outside each interval.
    """

    kind: str = "planar"
    duration: float = 2.0
    speed: float | None = None
    seed: int = 0
    pauses: tuple[tuple[float, float], ...] = ()
    ramp: float = 0.05
    angular_ratio: float | None = None

    def __post_init__(self):
        if self.kind not in ("planar", "six_dof"):
            raise DomainError("kind must be 'planar' or 'six_dof'")
        if self.duration <= 0:
            raise DomainError("duration must be positive")
        if self.speed is None:
            object.__setattr__(self, "speed", 0.3 if self.kind == "planar" else 1.0)
        object.__setattr__(self, "pauses", tuple(tuple(map(float, p)) for p in self.pauses))


def _smootherstep_integral(x):
    # integral over [0, x] of 6x^5 - 15x^4 + 10x^3
    return x**6 - 3.0 * x**5 + 2.5 * x**4


def _progress(spec: TrajectorySpec, t: np.ndarray) -> np.ndarray:
    """Time-warped trajectory parameter; stands still inside pauses (C2 everywhere)."""
    s = np.asarray(t, dtype=float).copy()
    r = spec.ramp
    for a, b in spec.pauses:
        # lost progress: integral of (1 - v) where v ramps 1 -> 0 on [a-r, a] and 0 -> 1 on [b, b+r]
        x1 = np.clip((t - (a - r)) / r, 0.0, 1.0)
        lost = r * _smootherstep_integral(x1)
        lost += np.clip(t - a, 0.0, b - a)
        x2 = np.clip((t - b) / r, 0.0, 1.0)
        lost += r * (x2 - _smootherstep_integral(x2))
        s -= lost
    return s


class Trajectory6:
    """Band-limited random motion: a few sinusoids per axis, anchored at identity."""

    N_HARMONICS = 3

    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        n = self.N_HARMONICS
        self.freq = rng.uniform(0.25, 0.8, (6, n)) * 2 * math.pi
        self.phase = rng.uniform(0, 2 * math.pi, (6, n))
        amp = rng.uniform(0.5, 1.0, (6, n)) / self.freq
        if spec.kind == "planar":
            amp[[2, 3, 4]] = 0.0  # no z translation, roll or pitch
        else:
            amp[2] *= 0.5
        self.amp = amp
        ratio = spec.angular_ratio
        if ratio is None:
            ratio = 0.05 if spec.kind == "planar" else 0.25
        # scale translation to the requested mean speed; rotation in proportion
        ts = np.linspace(0.0, spec.duration, 2001)
        lin_speed = np.linalg.norm(self._rates(ts)[:3], axis=0).mean()
        rot_speed = np.linalg.norm(self._rates(ts)[3:], axis=0).mean()
        self.scale = np.ones(6)
        if lin_speed > 0:
            self.scale[:3] = spec.speed / lin_speed
        if rot_speed > 0:
            self.scale[3:] = ratio * spec.speed / rot_speed

    def _rates(self, s):
        s = np.atleast_1d(s)
        arg = self.freq[:, :, None] * s[None, None, :] + self.phase[:, :, None]
        return (self.amp[:, :, None] * self.freq[:, :, None] * np.cos(arg)).sum(axis=1)

    def coords(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        arg = self.freq[:, :, None] * s[None, None, :] + self.phase[:, :, None]
        c = (self.amp[:, :, None] * (np.sin(arg) - np.sin(self.phase)[:, :, None])).sum(axis=1)
        return c * self.scale[:, None]

    def pose(self, t: float) -> PoseSE3:
        """Camera-to-world pose: translation ``(x, y, z)``, rotation vector from the angles."""
        if not 0.0 <= t <= self.spec.duration + 1e-12:
            raise DomainError(f"t={t} outside [0, {self.spec.duration}]")
        c = self.coords(_progress(self.spec, np.array([t])))[:, 0]
        R = exp_map(np.concatenate([np.zeros(3), c[3:]])).rotation
        return PoseSE3.from_rt(R, c[:3])


def sample_pose(spec: TrajectorySpec, t: float) -> PoseSE3:
    return Trajectory6(spec).pose(t)


@dataclass(frozen=True)
class ContrastModel:
    threshold: float = 0.1
    refractory_us: int = 0
    log_eps: float = 0.01

    def __post_init__(self):
        if self.threshold <= 0:
            raise DomainError("contrast threshold must be positive")


def pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    """Unit-depth rays through every pixel centre, shape (H, W, 3)."""
    u, v = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)


def plane_depth_map(scene: SyntheticScene, pose_wc: PoseSE3, K: CameraIntrinsics, rays=None):
    """Camera z-depth of the wall at every pixel and the hit points ``(X, Y)`` on it.

    Returns ``(depth, X, Y, valid)``, each of shape (H, W).
    """
    rays = pixel_rays(K) if rays is None else rays
    rx, ry = rays[..., 0], rays[..., 1]
    R = pose_wc.rotation
    c = pose_wc.translation
    dx = R[0, 0] * rx + R[0, 1] * ry + R[0, 2]
    dy = R[1, 0] * rx + R[1, 1] * ry + R[1, 2]
    dz = R[2, 0] * rx + R[2, 1] * ry + R[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (scene.plane_depth - c[2]) / dz
    valid = np.isfinite(s) & (s > 0)
    s = np.where(valid, s, 0.0)
    return np.where(valid, s, np.nan), c[0] + s * dx, c[1] + s * dy, valid


def render_intensity(scene: SyntheticScene, pose_wc: PoseSE3, K: CameraIntrinsics, rays=None) -> np.ndarray:
    """Perspective view of the wall (plane-induced homography), bilinear filtered."""
    _, X, Y, valid = plane_depth_map(scene, pose_wc, K, rays)
    img = scene.sample(X, Y)
    if not valid.all():
        img = np.where(valid, img, 0.0)
    return img


@dataclass
class GroundTruth:
    times: np.ndarray  # microseconds
    poses_wc: list[PoseSE3]


def generate_events(
    scene: SyntheticScene,
    spec: TrajectorySpec,
    model: ContrastModel,
    K: CameraIntrinsics,
    rate: float = 1000.0,
) -> tuple[EventStream, GroundTruth]:
    """Simulate the event stream and the pose log sampled at ``rate`` Hz."""
    traj = Trajectory6(spec)
    n_steps = int(round(spec.duration * rate))
    times_us = np.rint(np.arange(n_steps + 1) * (1e6 / rate)).astype(np.int64)
    rays = pixel_rays(K)
    C = model.threshold
    poses = [traj.pose(min(t / 1e6, spec.duration)) for t in times_us]

    def log_image(pose):
        return np.log(render_intensity(scene, pose, K, rays).ravel() + model.log_eps)

    L_prev = log_image(poses[0])
    ref = L_prev.copy()
    last_fire = np.full(L_prev.shape, np.iinfo(np.int64).min // 2, dtype=np.int64)
    chunks_t, chunks_i, chunks_p = [], [], []
    for k in range(1, n_steps + 1):
        L = log_image(poses[k])
        dL = L - L_prev
        if np.mean(np.abs(dL) >= 3 * C) > 0.01:
            raise SamplingRateError(
                f"log-intensity change >= 3C on over 1% of pixels at step {k}; raise the sampling rate"
            )
        diff = L - ref
        n_cross = np.floor(np.abs(diff) / C).astype(np.int64)
        idx = np.flatnonzero(n_cross)
        if len(idx):
            t0, t1 = times_us[k - 1], times_us[k]
            sign = np.sign(diff[idx])
            counts = n_cross[idx]
            rep = np.repeat(np.arange(len(idx)), counts)
            j = np.arange(len(rep)) - np.repeat(np.cumsum(counts) - counts, counts) + 1
            pix = idx[rep]
            level = ref[pix] + sign[rep] * j * C
            denom = dL[pix]
            frac = np.where(np.abs(denom) > 0, (level - L_prev[pix]) / np.where(denom == 0, 1, denom), 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            t_ev = t0 + np.rint(frac * (t1 - t0)).astype(np.int64)
            pol = sign[rep].astype(np.int8)
            if model.refractory_us > 0:
                keep = np.ones(len(t_ev), dtype=bool)
                order = np.lexsort((t_ev, pix))
                for o in order:
                    p = pix[o]
                    if t_ev[o] - last_fire[p] < model.refractory_us:
                        keep[o] = False
                    else:
                        last_fire[p] = t_ev[o]
                t_ev, pix, pol = t_ev[keep], pix[keep], pol[keep]
            ref[idx] += sign * counts * C
            chunks_t.append(t_ev)
            chunks_i.append(pix)
            chunks_p.append(pol)
        L_prev = L

    if chunks_t:
        t_all = np.concatenate(chunks_t)
        i_all = np.concatenate(chunks_i)
        p_all = np.concatenate(chunks_p)
        order = np.lexsort((i_all, t_all))
        t_all, i_all, p_all = t_all[order], i_all[order], p_all[order]
    else:
        t_all = i_all = p_all = np.zeros(0, dtype=np.int64)
    ys, xs = np.divmod(i_all, K.width)
    stream = EventStream(t_all, xs, ys, p_all, K.width, K.height)
    return stream, GroundTruth(times_us, poses)


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    return np.hypot(gx, gy)


def ground_truth_map(
    scene: SyntheticScene,
    K: CameraIntrinsics,
    reference_pose_wc: PoseSE3,
    gradient_floor: float = 0.02,
    margin: int = 2,
) -> tuple[np.ndarray, TemplateView]:
    """Semi-dense map: wall points behind pixels whose image gradient exceeds ``gradient_floor``.

    Returns world points ``(N, 3)`` and the template seen from the reference
    camera, with exact plane depths.
    """
    rays = pixel_rays(K)
    depth, X, Y, valid = plane_depth_map(scene, reference_pose_wc, K, rays)
    img = scene.sample(X, Y)
    grad = gradient_magnitude(img)
    mask = valid & (grad > gradient_floor)
    mask[:margin, :] = mask[-margin:, :] = False
    mask[:, :margin] = mask[:, -margin:] = False
    v, u = np.nonzero(mask)
    pixels = np.stack([u, v], axis=1).astype(float)
    depths = depth[v, u]
    pose_cw = reference_pose_wc.inverse()
    if len(depths) == 0:
        return np.zeros((0, 3)), TemplateView(pose_cw, np.zeros((0, 2)), np.zeros(0), K)
    P_c = back_project_points(pixels, depths, K)
    world = reference_pose_wc @ P_c
    return world, TemplateView(pose_cw, pixels, depths, K)


def merged_map(
    scene: SyntheticScene,
    K: CameraIntrinsics,
    poses_wc: list[PoseSE3],
    gradient_floor: float = 0.02,
    voxel: float = 0.004,
) -> np.ndarray:
    """Union of ground-truth maps from several viewpoints, de-duplicated on a voxel grid."""
    pts = np.concatenate([ground_truth_map(scene, K, p, gradient_floor)[0] for p in poses_wc])
    if len(pts) == 0:
        return pts
    keys = np.floor(pts / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return pts[np.sort(first)]


@dataclass(frozen=True)
class SequenceConfig:
    """Everything needed to regenerate a synthetic sequence."""

    scene: str = "checkerboard"
    motion: str = "planar"
    duration: float = 2.0
    seed: int = 0
    pauses: tuple[tuple[float, float], ...] = ()
    plane_depth: float = 8.0
    contrast: float = 0.1
    rate: float = 1000.0
    speed: float | None = None
    gradient_floor: float = 0.02
    map_keyframe_period: float = 0.5
    camera: CameraIntrinsics = field(default=DEFAULT_CAMERA)

    @property
    def trajectory(self) -> TrajectorySpec:
        kind = "six_dof" if self.motion in ("6dof", "six_dof") else "planar"
        return TrajectorySpec(kind, self.duration, self.speed, self.seed, self.pauses)


@dataclass
class Sequence:
    config: SequenceConfig
    scene: SyntheticScene
    events: EventStream
    ground_truth: GroundTruth
    map_points: np.ndarray

    @property
    def camera(self) -> CameraIntrinsics:
        return self.config.camera

    def gt_pose(self, t_us: int) -> PoseSE3:
        return Trajectory6(self.config.trajectory).pose(min(t_us / 1e6, self.config.duration))


def simulate_sequence(cfg: SequenceConfig) -> Sequence:
    scene = make_scene(cfg.scene, cfg.plane_depth)
    stream, gt = generate_events(scene, cfg.trajectory, ContrastModel(cfg.contrast), cfg.camera, cfg.rate)
    traj = Trajectory6(cfg.trajectory)
    key_times = np.arange(0.0, cfg.duration + 1e-9, cfg.map_keyframe_period)
    map_points = merged_map(scene, cfg.camera, [traj.pose(t) for t in key_times], cfg.gradient_floor)
    return Sequence(cfg, scene, stream, gt, map_points)
