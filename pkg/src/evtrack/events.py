"""Event streams: storage, text I/O and windowed access.

Timestamps are held as integer microseconds. The text format stores one event
per line as ``t_sec x y p`` with ``p`` in {0, 1}; ``#`` starts a comment line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Immutable, time-sorted events of one sensor.

    Columns are parallel numpy arrays; slicing returns views into them.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        cols = {}
        for name, dtype in (("t", np.int64), ("x", np.int32), ("y", np.int32), ("polarity", np.int8)):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype).reshape(-1)
            arr.flags.writeable = False
            cols[name] = arr
        if len({len(a) for a in cols.values()}) != 1:
            raise FormatError("event columns differ in length")
        for name, arr in cols.items():
            object.__setattr__(self, name, arr)
        if len(self.t) > 1 and np.any(np.diff(self.t) < 0):
            raise FormatError("event timestamps are not sorted")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0)
        return cls(z, z, z, z, width, height)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return EventStream(
                self.t[item], self.x[item], self.y[item], self.polarity[item], self.width, self.height
            )
        return Event(int(self.t[item]), int(self.x[item]), int(self.y[item]), int(self.polarity[item]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height

    def last_n_events(self, t: int, n: int) -> "EventStream":
        """The ``n`` most recent events with timestamp <= ``t``."""
        if n <= 0:
            raise ValueError("n must be positive")
        end = int(np.searchsorted(self.t, t, side="right"))
        return self[max(0, end - n):end]

    def events_in_window(self, t0: int, t1: int) -> "EventStream":
        """Events with ``t0 < t <= t1``."""
        if t0 > t1:
            raise ValueError("window start after window end")
        lo = int(np.searchsorted(self.t, t0, side="right"))
        hi = int(np.searchsorted(self.t, t1, side="right"))
        return self[lo:hi]


def last_n_events(stream: EventStream, t: int, n: int) -> EventStream:
    return stream.last_n_events(t, n)


def events_in_window(stream: EventStream, t0: int, t1: int) -> EventStream:
    return stream.events_in_window(t0, t1)


def seconds_to_us(t_sec) -> np.ndarray:
    return np.rint(np.asarray(t_sec, dtype=float) * 1e6).astype(np.int64)


def _parse_line(parts: list[str], lineno: int, width: int | None, height: int | None):
    if len(parts) != 4:
        raise ParseError(f"expected 4 fields 't x y p', got {len(parts)}", lineno)
    try:
        t = float(parts[0])
        x, y, p = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if not np.isfinite(t):
        raise ParseError("non-finite timestamp", lineno)
    if p not in (0, 1):
        raise ParseError(f"polarity must be 0 or 1, got {p}", lineno)
    if x < 0 or y < 0 or (width is not None and x >= width) or (height is not None and y >= height):
        raise ParseError(f"pixel ({x}, {y}) outside sensor", lineno)
    return t, x, y, p


def parse_events(path: str | Path, resolution: tuple[int, int] | None = None) -> EventStream:
    """Read an event file.

    ``resolution`` is ``(width, height)``; when omitted it is inferred from the
    largest coordinates present. Polarity 0 is stored as -1.
    """
    width, height = resolution if resolution is not None else (None, None)
    ts, xs, ys, ps = [], [], [], []
    prev = -np.inf
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            t, x, y, p = _parse_line(line.split(), lineno, width, height)
            if t < prev:
                raise FormatError(f"line {lineno}: timestamp {t} earlier than previous {prev}")
            prev = t
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(p)
    if width is None:
        width = (max(xs) + 1) if xs else 1
        height = (max(ys) + 1) if ys else 1
    pol = np.where(np.asarray(ps, dtype=np.int8) > 0, 1, -1)
    t_us = seconds_to_us(ts)
    return EventStream(t_us, np.asarray(xs), np.asarray(ys), pol, width, height)


def write_events(stream: EventStream, path: str | Path) -> None:
    """Write events in the text format; microsecond timestamps round-trip exactly."""
    sec = stream.t // 1_000_000
    usec = stream.t % 1_000_000
    pol = (stream.polarity > 0).astype(np.int8)
    with open(path, "w") as fh:
        fh.write(f"# t_sec x y p  (sensor {stream.width}x{stream.height})\n")
        lines = [
            f"{s}.{u:06d} {x} {y} {p}\n"
            for s, u, x, y, p in zip(sec.tolist(), usec.tolist(), stream.x.tolist(), stream.y.tolist(), pol.tolist())
        ]
        fh.writelines(lines)
