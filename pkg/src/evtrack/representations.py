"""Image-type event representations and the frames fed to the tracker.

Two representations are rendered on a [0, 255] scale:

* the time surface (TS), ``255 * exp(-(t - t_last(x)) / delta)`` per pixel,
  where ``t_last`` is the timestamp of the most recent event at the pixel;
* the event map (EM), a binary image lit wherever any of the last N events fired.

The tracker works on negated frames (``255 - I``) smoothed by a 5x5 Gaussian,
so that map points are pulled towards dark valleys.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DomainError, KindError
from .events import EventStream

NEVER = np.iinfo(np.int64).min


class FrameKind(str, enum.Enum):
    TS = "TS"
    EM = "EM"
    NEGATIVE_TS = "NEGATIVE_TS"
    NEGATIVE_EM = "NEGATIVE_EM"

    @property
    def negative(self) -> bool:
        return self in (FrameKind.NEGATIVE_TS, FrameKind.NEGATIVE_EM)


_NEGATED = {
    FrameKind.TS: FrameKind.NEGATIVE_TS,
    FrameKind.EM: FrameKind.NEGATIVE_EM,
}


@dataclass(frozen=True)
class RepresentationConfig:
    delta_ms: float = 30.0
    em_event_count: int = 4000
    ts_period_ms: float = 10.0
    blur_kernel: int = 5
    blur_sigma: float = 1.0

    def __post_init__(self):
        if self.delta_ms <= 0 or self.ts_period_ms <= 0:
            raise ValueError("delta and ts_period must be positive")
        if self.em_event_count <= 0:
            raise ValueError("em_event_count must be positive")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ValueError("blur_kernel must be a positive odd number")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")

    @property
    def delta_us(self) -> float:
        return self.delta_ms * 1e3

    @property
    def ts_period_us(self) -> int:
        return int(round(self.ts_period_ms * 1e3))


@dataclass(frozen=True, eq=False)
class EventFrame:
    values: np.ndarray  # (height, width), float64 in [0, 255]
    trigger_time: int
    kind: FrameKind
    blurred: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


class TimeSurfaceState:
    """Per-pixel timestamp of the most recent event.

    Single writer: ``update`` mutates in place. Renders take a consistent
    snapshot of the array at call time.
    """

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.t_last = np.full((height, width), NEVER, dtype=np.int64)
        self.latest = NEVER

    def copy(self) -> "TimeSurfaceState":
        out = TimeSurfaceState(self.width, self.height)
        out.t_last = self.t_last.copy()
        out.latest = self.latest
        return out

    def update(self, events: EventStream) -> "TimeSurfaceState":
        if len(events):
            # Events are sorted, so a plain scatter keeps the last (latest) write;
            # maximum.at makes that explicit and independent of ordering.
            np.maximum.at(self.t_last, (events.y, events.x), events.t)
            self.latest = max(self.latest, int(events.t[-1]))
        return self

    @property
    def fired(self) -> np.ndarray:
        return self.t_last != NEVER


def update_t_last(state: TimeSurfaceState, events: EventStream) -> TimeSurfaceState:
    return state.update(events)


def render_time_surface(state: TimeSurfaceState, t: int, cfg: RepresentationConfig) -> EventFrame:
    fired = state.fired
    if fired.any() and t < state.t_last[fired].max():
        raise DomainError("time surface requested before the latest event")
    values = np.zeros((state.height, state.width))
    age = (t - state.t_last[fired]).astype(float)
    values[fired] = np.floor(255.0 * np.exp(-age / cfg.delta_us) + 0.5)
    return EventFrame(values, int(t), FrameKind.TS)


def render_event_map(
    events: EventStream, resolution: tuple[int, int], trigger_time: int | None = None
) -> EventFrame:
    """Binary event map; ``trigger_time`` defaults to the last event's timestamp."""
    if len(events) == 0:
        raise DomainError("event map needs at least one event")
    width, height = resolution
    values = np.zeros((height, width))
    values[events.y, events.x] = 255.0
    t = int(events.t[-1]) if trigger_time is None else int(trigger_time)
    return EventFrame(values, t, FrameKind.EM)


def negate(frame: EventFrame) -> EventFrame:
    if frame.kind.negative:
        raise KindError(f"frame is already negative ({frame.kind.value})")
    return EventFrame(255.0 - frame.values, frame.trigger_time, _NEGATED[frame.kind], frame.blurred)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(frame: EventFrame, cfg: RepresentationConfig) -> EventFrame:
    """Separable Gaussian blur with replicated borders."""
    if not frame.kind.negative:
        raise KindError("blur is applied to negative frames only")
    k = gaussian_kernel(cfg.blur_kernel, cfg.blur_sigma)
    out = correlate1d(frame.values, k, axis=1, mode="nearest")
    out = correlate1d(out, k, axis=0, mode="nearest")
    np.clip(out, 0.0, 255.0, out=out)
    return replace(frame, values=out, blurred=True)


def tracking_frame(frame: EventFrame, cfg: RepresentationConfig) -> EventFrame:
    """Negate then blur: the frame the tracker aligns against."""
    return gaussian_blur(negate(frame), cfg)


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    u0 = np.clip(np.floor(u).astype(np.intp), 0, w - 2)
    v0 = np.clip(np.floor(v).astype(np.intp), 0, h - 2)
    a = u - u0
    b = v - v0
    flat = img.ravel()
    i00 = v0 * w + u0
    p00 = flat[i00]
    p01 = flat[i00 + 1]
    p10 = flat[i00 + w]
    p11 = flat[i00 + w + 1]
    top = p00 + a * (p01 - p00)
    bot = p10 + a * (p11 - p10)
    return top + b * (bot - top)


def bilinear_sample(frame: EventFrame | np.ndarray, p) -> tuple[float, bool]:
    """Bilinear value at continuous pixel ``p = (u, v)``; ``(nan, False)`` outside."""
    img = frame.values if isinstance(frame, EventFrame) else np.asarray(frame, dtype=float)
    vals, valid = sample_points(img, np.asarray(p, dtype=float).reshape(1, 2))
    return float(vals[0]), bool(valid[0])


def sample_points(img: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling; invalid entries are NaN."""
    h, w = img.shape
    u, v = pts[:, 0], pts[:, 1]
    valid = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    out = np.full(len(pts), np.nan)
    if valid.any():
        out[valid] = _bilinear(img, u[valid], v[valid])
    return out, valid


def central_difference_images(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-step central differences at integer pixels (zero on the outer ring)."""
    gx = np.zeros_like(img, dtype=float)
    gy = np.zeros_like(img, dtype=float)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    return gx, gy


class FrameSampler:
    """Values and gradients of one frame at continuous pixel positions.

    The gradient at ``p`` is ``(I(p + e_u) - I(p - e_u)) / 2`` of the bilinear
    interpolant; because interpolation commutes with integer shifts this equals
    bilinear interpolation of the integer central-difference images, which are
    computed once per frame.
    """

    def __init__(self, frame: EventFrame | np.ndarray):
        img = frame.values if isinstance(frame, EventFrame) else np.asarray(frame, dtype=float)
        self.img = img
        self.gx, self.gy = central_difference_images(img)
        h, w = img.shape
        self._w = w
        self._umax = w - 2
        self._vmax = h - 2
        # value and both gradients side by side: one gather per corner
        self._stack = np.stack([img, self.gx, self.gy], axis=-1).reshape(-1, 3)
        self._flat = img.ravel()

    def _corners(self, u, v):
        u0 = np.floor(u).astype(np.intp)
        v0 = np.floor(v).astype(np.intp)
        return v0 * self._w + u0, u - u0, v - v0

    def valid(self, pts: np.ndarray) -> np.ndarray:
        u, v = pts[:, 0], pts[:, 1]
        return (u >= 1) & (u <= self._umax) & (v >= 1) & (v <= self._vmax)

    def sample(self, pts: np.ndarray):
        """Return ``(values, gradients (N, 2), valid)``; valid needs a 1 px margin."""
        valid = self.valid(pts)
        n = len(pts)
        out = np.full((n, 3), np.nan)
        if valid.any():
            i00, a, b = self._corners(pts[valid, 0], pts[valid, 1])
            st = self._stack
            w = self._w
            a = a[:, None]
            b = b[:, None]
            top = st[i00] * (1 - a) + st[i00 + 1] * a
            bot = st[i00 + w] * (1 - a) + st[i00 + w + 1] * a
            out[valid] = top * (1 - b) + bot * b
        return out[:, 0], out[:, 1:], valid

    def values(self, pts: np.ndarray):
        """Values only, ``(values of valid points, valid)``."""
        valid = self.valid(pts)
        i00, a, b = self._corners(pts[valid, 0], pts[valid, 1])
        f = self._flat
        w = self._w
        # same arithmetic as ``sample`` so costs agree bit for bit
        top = f[i00] * (1 - a) + f[i00 + 1] * a
        bot = f[i00 + w] * (1 - a) + f[i00 + w + 1] * a
        return top * (1 - b) + bot * b, valid


def image_gradient(frame: EventFrame | np.ndarray, p) -> tuple[np.ndarray, bool]:
    """Central-difference gradient (unit step) of the bilinear interpolant at ``p``."""
    img = frame.values if isinstance(frame, EventFrame) else np.asarray(frame, dtype=float)
    u, v = (float(c) for c in p)
    h, w = img.shape
    if not (1 <= u <= w - 2 and 1 <= v <= h - 2):
        return np.full(2, np.nan), False
    pts = np.array([[u + 1, v], [u - 1, v], [u, v + 1], [u, v - 1]])
    s = _bilinear(img, pts[:, 0], pts[:, 1])
    return np.array([0.5 * (s[0] - s[1]), 0.5 * (s[2] - s[3])]), True


def write_pgm(frame: EventFrame, path: str | Path, binary: bool = True) -> None:
    """Dump a frame as an 8-bit portable graymap (P5, or P2 when ``binary`` is False)."""
    img = np.clip(np.floor(frame.values + 0.5), 0, 255).astype(np.uint8)
    h, w = img.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode())
            fh.write(img.tobytes())
    else:
        rows = "\n".join(" ".join(str(int(v)) for v in row) for row in img)
        Path(path).write_text(f"P2\n{w} {h}\n255\n{rows}\n")


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = data[:2]
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    w, h, _ = tokens
    if magic == b"P5":
        return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w).astype(float)
    vals = np.array(data[pos:].split(), dtype=float)
    return vals.reshape(h, w)
