"""Forward compositional 3D-2D alignment of a semi-dense map onto event frames.

The objective is ``sum_x rho(Ibar(W(x, d; theta)))`` over template entries,
where ``Ibar`` is a negated, blurred event frame and ``rho`` the Huber loss.
Each Gauss-Newton step solves ``H dtheta = g`` for an increment applied on the
right, ``T(theta) <- T(theta) @ T(dtheta)``, so the point Jacobian
``[I | -[P]x]`` of every template point is fixed and computed once.

The degeneracy factor is the smallest eigenvalue of ``H`` at the initial
guess. The TSEM tracker uses it to fall back from the time surface to the
event map when the time-surface problem is poorly constrained.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DomainError,
    InsufficientConstraintsError,
    KindError,
    NumericalFailure,
    TrackingFailure,
)
from .events import EventStream
from .geometry import CameraIntrinsics, PoseSE3, TemplateView, exp_map, log_map
from .representations import (
    EventFrame,
    FrameSampler,
    RepresentationConfig,
    TimeSurfaceState,
    render_event_map,
    render_time_surface,
    tracking_frame,
)

logger = logging.getLogger(__name__)

MIN_RESIDUALS = 6
# Residual charged to template points that leave the frame: the negative frame
# value of a pixel that saw no events.
OUTSIDE_RESIDUAL = 255.0


class Representation(str, enum.Enum):
    TS = "TS"
    EM = "EM"
    TSEM = "TSEM"


@dataclass(frozen=True)
class TrackerConfig:
    huber_scale: float = 10.0
    max_iterations: int = 50
    step_tolerance: float = 1e-6
    lambda_th: float = 31.0
    representation: Representation = Representation.TS
    em_event_count: int = 4000
    max_template_points: int = 5000
    damping: float = 1e-9
    max_halvings: int = 4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.step_tolerance <= 0:
            raise ValueError("step_tolerance must be positive")
        if self.lambda_th < 0:
            raise ValueError("lambda_th must be non-negative")
        if self.huber_scale <= 0:
            raise ValueError("huber_scale must be positive")
        object.__setattr__(self, "representation", Representation(self.representation))


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    H: np.ndarray
    g: np.ndarray
    cost: float
    valid_count: int


@dataclass(frozen=True, eq=False)
class TrackResult:
    pose: PoseSE3  # T_cr
    representation_used: Representation
    lambda_: float
    iterations: int
    final_cost: float
    converged: bool
    valid_count: int = 0
    costs: tuple[float, ...] = ()

    @property
    def theta(self) -> np.ndarray:
        return self.pose.theta


def huber_weights(r: np.ndarray, k: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= k, 1.0, k / np.maximum(a, k))


def huber_cost(r: np.ndarray, k: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= k, 0.5 * r * r, k * (a - 0.5 * k))


class AlignmentProblem:
    """Template and frame bundled for repeated linearization."""

    def __init__(self, frame: EventFrame, template: TemplateView, K: CameraIntrinsics, cfg: TrackerConfig):
        if not frame.kind.negative or not frame.blurred:
            raise KindError("alignment needs a negated, blurred frame")
        self.frame = frame
        self.K = K
        self.cfg = cfg
        self.points = template.points(K)
        self.sampler = FrameSampler(frame)
        self._outside_cost = float(huber_cost(np.array(OUTSIDE_RESIDUAL), cfg.huber_scale))

    def _total_cost(self, r: np.ndarray) -> float:
        # without the constant charge for lost points, pushing points off the
        # sensor would look like a descent direction
        lost = len(self.points) - len(r)
        return float(huber_cost(r, self.cfg.huber_scale).sum()) + lost * self._outside_cost

    def _project(self, T: PoseSE3):
        Pc = self.points @ T.rotation.T + T.translation
        z = Pc[:, 2]
        front = z > 1e-9
        inv_z = 1.0 / np.where(front, z, 1.0)
        K = self.K
        uv = np.empty((len(Pc), 2))
        uv[:, 0] = K.fx * Pc[:, 0] * inv_z + K.cx
        uv[:, 1] = K.fy * Pc[:, 1] * inv_z + K.cy
        # points behind the camera are pushed off the sensor
        uv[~front] = -1.0
        return Pc, inv_z, uv

    def residuals(self, theta: np.ndarray):
        """Residuals and Jacobian rows (N, 6) at ``theta``; invalid rows are dropped."""
        T = exp_map(theta)
        R = T.rotation
        Pc, inv_z, uv = self._project(T)
        K = self.K
        r, grad, valid = self.sampler.sample(uv)
        r = r[valid]
        grad = grad[valid]
        inv_z = inv_z[valid]
        Pv = Pc[valid]
        # d r / d Pc = grad @ dpi/dP
        a = np.empty((len(r), 3))
        a[:, 0] = grad[:, 0] * K.fx * inv_z
        a[:, 1] = grad[:, 1] * K.fy * inv_z
        a[:, 2] = -(a[:, 0] * Pv[:, 0] + a[:, 1] * Pv[:, 1]) * inv_z
        # chain through R and the fixed point Jacobian [I | -[P_r]x]
        a_r = a @ R
        J = np.empty((len(r), 6))
        J[:, :3] = a_r
        J[:, 3:] = np.cross(self.points[valid], a_r)
        return r, J, valid

    def linearize(self, theta: np.ndarray) -> LinearizedSystem:
        r, J, valid = self.residuals(theta)
        n = len(r)
        if n < MIN_RESIDUALS:
            raise InsufficientConstraintsError(f"only {n} valid residuals")
        k = self.cfg.huber_scale
        w = huber_weights(r, k)
        Jw = J * w[:, None]
        H = Jw.T @ J
        H = 0.5 * (H + H.T)
        g = -(Jw.T @ r)
        cost = self._total_cost(r)
        if not np.isfinite(cost) or not np.all(np.isfinite(H)):
            raise NumericalFailure("non-finite cost or Hessian")
        return LinearizedSystem(H, g, cost, n)

    def cost(self, theta: np.ndarray) -> float:
        """Objective only, without the Jacobian; matches ``linearize(theta).cost``."""
        _, _, uv = self._project(exp_map(theta))
        r, _ = self.sampler.values(uv)
        return self._total_cost(r)


def linearize(
    frame: EventFrame, template: TemplateView, theta, K: CameraIntrinsics, cfg: TrackerConfig
) -> LinearizedSystem:
    return AlignmentProblem(frame, template, K, cfg).linearize(np.asarray(theta, dtype=float))


def degeneracy_factor(system: LinearizedSystem | np.ndarray) -> float:
    """Smallest eigenvalue of the Gauss-Newton Hessian, clamped at zero."""
    H = system.H if isinstance(system, LinearizedSystem) else np.asarray(system, dtype=float)
    lam = float(np.linalg.eigvalsh(H)[0])
    return max(lam, 0.0)


def solve_normal_equations(system: LinearizedSystem, damping: float = 1e-9) -> np.ndarray:
    H = system.H
    mu = damping * np.trace(H) / 6.0
    if mu > 0:
        try:
            L = np.linalg.cholesky(H + mu * np.eye(6))
            y = np.linalg.solve(L, system.g)
            return np.linalg.solve(L.T, y)
        except np.linalg.LinAlgError:
            pass
    return np.linalg.lstsq(H, system.g, rcond=None)[0]


def _align(problem: AlignmentProblem, theta0: np.ndarray, rep: Representation) -> TrackResult:
    cfg = problem.cfg
    theta = np.asarray(theta0, dtype=float).copy()
    system = problem.linearize(theta)
    lam = degeneracy_factor(system)
    costs = [system.cost]
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        step = solve_normal_equations(system, cfg.damping)
        if not np.all(np.isfinite(step)):
            raise NumericalFailure("non-finite pose increment")
        if float(np.linalg.norm(step)) < cfg.step_tolerance:
            theta = log_map(exp_map(theta) @ exp_map(step))
            converged = True
            break
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            candidate = log_map(exp_map(theta) @ exp_map(step))
            if problem.cost(candidate) <= system.cost:
                try:
                    accepted = candidate, problem.linearize(candidate)
                except InsufficientConstraintsError:
                    accepted = None
                if accepted is not None:
                    break
            step = 0.5 * step
            if float(np.linalg.norm(step)) < cfg.step_tolerance:
                break
        if accepted is None:
            # no descent along the Gauss-Newton direction: local minimum
            converged = True
            break
        theta, system = accepted
        costs.append(system.cost)
    return TrackResult(
        pose=exp_map(theta),
        representation_used=rep,
        lambda_=lam,
        iterations=iterations,
        final_cost=system.cost,
        converged=converged,
        valid_count=system.valid_count,
        costs=tuple(costs),
    )


def align(
    frame: EventFrame,
    template: TemplateView,
    theta0,
    K: CameraIntrinsics,
    cfg: TrackerConfig,
    representation: Representation | None = None,
) -> TrackResult:
    """Gauss-Newton alignment from ``theta0``; the result pose is T_cr."""
    if representation is None:
        representation = Representation.TS if frame.kind.value.endswith("TS") else Representation.EM
    problem = AlignmentProblem(frame, template, K, cfg)
    return _align(problem, np.asarray(theta0, dtype=float), representation)


def track_ts(ts_frame, template, theta0, K, cfg, rep_cfg: RepresentationConfig | None = None) -> TrackResult:
    rep_cfg = rep_cfg or RepresentationConfig()
    return align(tracking_frame(ts_frame, rep_cfg), template, theta0, K, cfg, Representation.TS)


def track_em(em_frame, template, theta0, K, cfg, rep_cfg: RepresentationConfig | None = None) -> TrackResult:
    rep_cfg = rep_cfg or RepresentationConfig()
    return align(tracking_frame(em_frame, rep_cfg), template, theta0, K, cfg, Representation.EM)


def track_tsem(
    ts_frame: EventFrame,
    em_frame: EventFrame | None,
    template: TemplateView,
    theta0,
    K: CameraIntrinsics,
    cfg: TrackerConfig,
    rep_cfg: RepresentationConfig | None = None,
) -> TrackResult:
    """Time-surface tracking with an event-map fallback when ``lambda < lambda_th``.

    ``em_frame`` may be None when no events are available yet; a degenerate
    frame then fails.
    """
    rep_cfg = rep_cfg or RepresentationConfig()
    theta0 = np.asarray(theta0, dtype=float)
    if em_frame is not None and em_frame.trigger_time != ts_frame.trigger_time:
        raise DomainError("TS and EM frames must share a trigger time")
    ts_problem = AlignmentProblem(tracking_frame(ts_frame, rep_cfg), template, K, cfg)
    try:
        lam = degeneracy_factor(ts_problem.linearize(theta0))
    except InsufficientConstraintsError:
        lam = 0.0
    held = TrackResult(exp_map(theta0), Representation.TS, lam, 0, float("nan"), False)

    if lam >= cfg.lambda_th:
        try:
            return _align(ts_problem, theta0, Representation.TS)
        except InsufficientConstraintsError as exc:
            raise TrackingFailure(f"time-surface tracking failed: {exc}", held) from exc

    if em_frame is None:
        raise TrackingFailure("degenerate time surface and no event map", held)
    try:
        em_problem = AlignmentProblem(tracking_frame(em_frame, rep_cfg), template, K, cfg)
        result = _align(em_problem, theta0, Representation.EM)
    except InsufficientConstraintsError as exc:
        raise TrackingFailure(f"both representations insufficient: {exc}", held) from exc
    return TrackResult(
        pose=result.pose,
        representation_used=Representation.EM,
        lambda_=lam,
        iterations=result.iterations,
        final_cost=result.final_cost,
        converged=result.converged,
        valid_count=result.valid_count,
        costs=result.costs,
    )


@dataclass
class FrameRecord:
    trigger_time: int
    representation_used: str
    lambda_: float
    iterations: int
    final_cost: float
    valid_count: int
    converged: bool
    failed: bool = False
    seconds: float = 0.0

    CSV_HEADER = ("trigger_time", "representation_used", "lambda", "iterations", "final_cost", "valid_count")

    def csv_row(self) -> list[str]:
        return [
            f"{self.trigger_time / 1e6:.6f}",
            self.representation_used,
            f"{self.lambda_:.9g}",
            str(self.iterations),
            f"{self.final_cost:.9g}",
            str(self.valid_count),
        ]


@dataclass
class SequenceResult:
    times: np.ndarray  # trigger timestamps, microseconds
    poses_wc: list[PoseSE3]
    records: list[FrameRecord] = field(default_factory=list)

    @property
    def failure_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.failed for r in self.records) / len(self.records)

    @property
    def em_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.representation_used == "EM" for r in self.records) / len(self.records)


def trigger_times(
    stream: EventStream, period_us: int, start: int | None = None, end: int | None = None, warmup_us: int = 0
) -> np.ndarray:
    """Synchronous trigger grid ``start + warmup + k * period``, k >= 1, covering the stream.

    A time surface only carries structure once events from about one decay
    constant have accumulated; ``warmup_us`` holds tracking off until then.
    """
    if start is None:
        start = 0 if len(stream) == 0 else int(stream.t[0])
    if end is None:
        end = start if len(stream) == 0 else int(stream.t[-1])
    first = start + int(warmup_us)
    return np.arange(first + period_us, end + 1, period_us, dtype=np.int64)


class SequenceTracker:
    """Runs one tracker variant over an event stream against a fixed world map.

    The initial guess for every frame is the previous estimate; the template
    is the map seen from that estimate, so each frame starts from ``theta = 0``.
    Optional seeded perturbation of the initial guess is used by the trial
    protocol to create trial-to-trial variation.
    """

    def __init__(
        self,
        stream: EventStream,
        map_points: np.ndarray,
        K: CameraIntrinsics,
        cfg: TrackerConfig | None = None,
        rep_cfg: RepresentationConfig | None = None,
        initial_pose_wc: PoseSE3 | None = None,
        perturbation: tuple[float, float] = (0.0, 0.0),
        seed: int = 0,
    ):
        self.stream = stream
        self.map_points = np.asarray(map_points, dtype=float).reshape(-1, 3)
        self.K = K
        self.cfg = cfg or TrackerConfig()
        self.rep_cfg = rep_cfg or RepresentationConfig()
        self.pose_cw = (initial_pose_wc or PoseSE3.identity()).inverse()
        self.state = TimeSurfaceState(K.width, K.height)
        self.t_prev = int(stream.t[0]) - 1 if len(stream) else 0
        self.perturbation = perturbation
        self.rng = np.random.default_rng(seed)

    def _initial_theta(self) -> np.ndarray:
        sig_t, sig_r = self.perturbation
        if sig_t == 0 and sig_r == 0:
            return np.zeros(6)
        return np.concatenate([self.rng.normal(0, sig_t, 3), self.rng.normal(0, sig_r, 3)])

    def step(self, t: int) -> FrameRecord:
        t = int(t)
        self.state.update(self.stream.events_in_window(self.t_prev, t))
        self.t_prev = t
        cfg = self.cfg
        rep = cfg.representation
        start = time.perf_counter()
        template = TemplateView.from_map(self.map_points, self.pose_cw, self.K, cfg.max_template_points)
        theta0 = self._initial_theta()
        ts = render_time_surface(self.state, t, self.rep_cfg) if rep != Representation.EM else None
        em = None
        if rep != Representation.TS:
            recent = self.stream.last_n_events(t, cfg.em_event_count)
            if len(recent):
                em = render_event_map(recent, self.K.resolution, t)
        try:
            if rep == Representation.TS:
                result = track_ts(ts, template, theta0, self.K, cfg, self.rep_cfg)
            elif rep == Representation.EM:
                if em is None:
                    raise InsufficientConstraintsError("no events for an event map")
                result = track_em(em, template, theta0, self.K, cfg, self.rep_cfg)
            else:
                result = track_tsem(ts, em, template, theta0, self.K, cfg, self.rep_cfg)
        except TrackingFailure as exc:
            return self._failed(t, exc.result.lambda_ if exc.result else 0.0, rep, start)
        except InsufficientConstraintsError:
            return self._failed(t, 0.0, rep, start)
        self.pose_cw = result.pose @ self.pose_cw
        return FrameRecord(
            trigger_time=t,
            representation_used=result.representation_used.value,
            lambda_=result.lambda_,
            iterations=result.iterations,
            final_cost=result.final_cost,
            valid_count=result.valid_count,
            converged=result.converged,
            seconds=time.perf_counter() - start,
        )

    def _failed(self, t, lam, rep, start) -> FrameRecord:
        logger.debug("tracking failed at t=%d us", t)
        used = "TS" if rep != Representation.EM else "EM"
        if rep == Representation.TSEM and lam < self.cfg.lambda_th:
            used = "EM"
        return FrameRecord(t, used, lam, 0, float("nan"), 0, False, failed=True,
                           seconds=time.perf_counter() - start)

    def run(self, times) -> SequenceResult:
        poses, records = [], []
        for t in times:
            records.append(self.step(t))
            poses.append(self.pose_cw.inverse())
        return SequenceResult(np.asarray(times, dtype=np.int64), poses, records)


def track_sequence(
    stream: EventStream,
    map_points: np.ndarray,
    K: CameraIntrinsics,
    cfg: TrackerConfig | None = None,
    rep_cfg: RepresentationConfig | None = None,
    times=None,
    initial_pose_wc: PoseSE3 | None = None,
    **kwargs,
) -> SequenceResult:
    rep_cfg = rep_cfg or RepresentationConfig()
    if times is None:
        times = trigger_times(stream, rep_cfg.ts_period_us, warmup_us=int(round(rep_cfg.delta_us)))
    tracker = SequenceTracker(stream, map_points, K, cfg, rep_cfg, initial_pose_wc, **kwargs)
    return tracker.run(times)
