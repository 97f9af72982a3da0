"""Event sensor: threshold-crossing simulation, windowing, accumulation.

An event fires when the per-pixel log intensity, linearly interpolated
between video frames, crosses the next +-c level measured from the level
at which that pixel last fired. The simulator tracks this reference level
exactly, so over any interval the sum of c * polarity differs from the
true log-intensity change by less than one threshold step per pixel.

Windows are half-open [t_i, t_{i+1}) trigger intervals. Accumulation
produces a two-channel polarity image normalized by the window's event
count, quantile-clipped, and jointly rescaled so the larger channel peaks
at 1 (per-channel rescale would erase the polarity balance, which the
fusion stage relies on; the joint choice is deliberate).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from evsve import fileio
from evsve.radiometry import RadianceImage

DEFAULT_LOG_EPS = 1e-3
DEFAULT_CLIP_Q = 0.99
DEFAULT_RATE = 60.0


class Event(NamedTuple):
    x: int
    y: int
    t: float
    p: int


@dataclass
class EventStream:
    """Time-sorted events as parallel arrays plus sensor geometry."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    c: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        if not (self.c > 0 and np.isfinite(self.c)):
            raise ValueError("contrast threshold must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor geometry must be positive")
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event arrays must have equal length")
        if n:
            if self.t.min() < 0:
                raise ValueError("event times must be >= 0")
            if np.any(np.diff(self.t) < 0):
                raise ValueError("events must be time-sorted")
            if (
                self.x.min() < 0
                or self.x.max() >= self.width
                or self.y.min() < 0
                or self.y.max() >= self.height
            ):
                raise ValueError("event coordinates out of sensor bounds")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be +1 or -1")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.p[i]))

    def save(self, path, binary: bool = False) -> None:
        writer = fileio.write_events_binary if binary else fileio.write_events_text
        writer(path, self.t, self.x, self.y, self.p, self.width, self.height, self.c)

    @classmethod
    def load(cls, path, binary: bool = False) -> "EventStream":
        reader = fileio.read_events_binary if binary else fileio.read_events_text
        t, x, y, p, width, height, c = reader(path)
        return cls(t=t, x=x, y=y, p=p, width=width, height=height, c=c)


@dataclass(frozen=True)
class TriggerTable:
    """Strictly increasing trigger timestamps; N times define N-1 windows."""

    times: np.ndarray
    rate: float = DEFAULT_RATE

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("trigger table needs at least two timestamps")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trigger times must be strictly increasing")
        if not (self.rate > 0):
            raise ValueError("trigger rate must be positive")

    @classmethod
    def regular(cls, n_windows: int, rate: float = DEFAULT_RATE, t0: float = 0.0):
        if n_windows < 1:
            raise ValueError("need at least one window")
        times = t0 + np.arange(n_windows + 1, dtype=np.float64) / rate
        return cls(times=times, rate=rate)

    @property
    def n_windows(self) -> int:
        return len(self.times) - 1


@dataclass
class AccumFrame:
    """Two-channel polarity accumulation over one trigger window."""

    pos: np.ndarray
    neg: np.ndarray
    window: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64)
        self.neg = np.asarray(self.neg, dtype=np.float64)
        if self.pos.shape != self.neg.shape or self.pos.ndim != 2:
            raise ValueError("channels must share one 2-d shape")
        for ch in (self.pos, self.neg):
            if not np.all(np.isfinite(ch)) or ch.min() < 0 or ch.max() > 1:
                raise ValueError("channel values must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.stack([self.pos, self.neg], axis=0)


def simulate_events(
    video,
    c: float,
    log_eps: float = DEFAULT_LOG_EPS,
    refractory: float = 0.0,
) -> EventStream:
    """Simulate threshold-crossing events from a timestamped radiance video.

    video is a sequence of (RadianceImage, timestamp) with strictly
    increasing timestamps. Between consecutive frames the log intensity
    log(radiance + log_eps) is interpolated linearly and an event is
    emitted at the exact instant each +-c level (counted from the pixel's
    last-event level) is reached. A positive refractory period drops
    events closer than that to the previous one at the same pixel; level
    bookkeeping is unaffected, so only emission is throttled.
    """
    frames = list(video)
    if len(frames) < 2:
        raise ValueError("need at least two frames to simulate events")
    if not (c > 0 and np.isfinite(c)):
        raise ValueError("contrast threshold must be positive")
    if not (log_eps > 0 and np.isfinite(log_eps)):
        raise ValueError("log_eps must be positive")
    if refractory < 0:
        raise ValueError("refractory must be >= 0")

    times = np.array([float(ts) for _, ts in frames])
    if np.any(np.diff(times) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    if times[0] < 0:
        raise ValueError("frame timestamps must be >= 0")

    shape = frames[0][0].data.shape
    for img, _ in frames:
        if not isinstance(img, RadianceImage) or img.data.shape != shape:
            raise ValueError("frames must be RadianceImage of one shape")
    height, width = shape

    logs = [np.log(img.data + log_eps).ravel() for img, _ in frames]
    ref = logs[0].copy()
    yy, xx = np.mgrid[0:height, 0:width]
    yy = yy.ravel()
    xx = xx.ravel()

    out_t, out_x, out_y, out_p = [], [], [], []
    for k in range(len(frames) - 1):
        la, lb = logs[k], logs[k + 1]
        ta, tb = times[k], times[k + 1]
        d = lb - ref
        sign = np.sign(d).astype(np.int64)
        # tiny slack so a ramp ending exactly on a level still counts it
        n = np.floor(np.abs(d) / c + 1e-9).astype(np.int64)
        if n.any():
            act = np.flatnonzero(n > 0)
            rep = np.repeat(act, n[act])
            # per-event ordinal 1..n within its pixel
            start = np.cumsum(n[act]) - n[act]
            ordinal = np.arange(len(rep)) - np.repeat(start, n[act]) + 1
            levels = ref[rep] + ordinal * c * sign[rep]
            frac = (levels - la[rep]) / (lb[rep] - la[rep])
            out_t.append(ta + frac * (tb - ta))
            out_x.append(xx[rep])
            out_y.append(yy[rep])
            out_p.append(sign[rep])
            ref[act] += n[act] * c * sign[act]

    if out_t:
        t = np.concatenate(out_t)
        x = np.concatenate(out_x)
        y = np.concatenate(out_y)
        p = np.concatenate(out_p)
    else:
        t = np.empty(0)
        x = np.empty(0, dtype=np.int64)
        y = np.empty(0, dtype=np.int64)
        p = np.empty(0, dtype=np.int64)

    if refractory > 0 and len(t):
        keep = np.ones(len(t), dtype=bool)
        pix = y * width + x
        for q in np.unique(pix):
            idx = np.flatnonzero(pix == q)
            last = -np.inf
            for i in idx[np.argsort(t[idx], kind="stable")]:
                if t[i] - last < refractory:
                    keep[i] = False
                else:
                    last = t[i]
        t, x, y, p = t[keep], x[keep], y[keep], p[keep]

    order = np.lexsort((x, y, t))
    return EventStream(
        t=t[order], x=x[order], y=y[order], p=p[order],
        width=width, height=height, c=c,
    )


def window_events(stream: EventStream, triggers: TriggerTable):
    """Partition a sorted stream into half-open [t_i, t_{i+1}) slices."""
    edges = np.searchsorted(stream.t, triggers.times, side="left")
    slices = []
    for i in range(triggers.n_windows):
        a, b = edges[i], edges[i + 1]
        slices.append(
            EventStream(
                t=stream.t[a:b].copy(),
                x=stream.x[a:b].copy(),
                y=stream.y[a:b].copy(),
                p=stream.p[a:b].copy(),
                width=stream.width,
                height=stream.height,
                c=stream.c,
            )
        )
    return slices


def accumulate(
    sl: EventStream,
    clip_q: float = DEFAULT_CLIP_Q,
    window: tuple = (0.0, 0.0),
) -> AccumFrame:
    """Count polarities per pixel, normalize, clip, rescale to peak 1.

    Counts are divided by the slice's total event count, clipped at the
    clip_q quantile of the nonzero values across both channels, then both
    channels are rescaled by one shared factor so the overall max is 1.
    """
    if not (0 < clip_q <= 1):
        raise ValueError("clip_q must lie in (0, 1]")
    pos = np.zeros((sl.height, sl.width))
    neg = np.zeros((sl.height, sl.width))
    if len(sl) == 0:
        return AccumFrame(pos=pos, neg=neg, window=window)
    up = sl.p > 0
    np.add.at(pos, (sl.y[up], sl.x[up]), 1.0)
    np.add.at(neg, (sl.y[~up], sl.x[~up]), 1.0)
    pos /= len(sl)
    neg /= len(sl)
    both = np.concatenate([pos.ravel(), neg.ravel()])
    nz = both[both > 0]
    cap = np.quantile(nz, clip_q)
    pos = np.minimum(pos, cap)
    neg = np.minimum(neg, cap)
    peak = max(pos.max(), neg.max())
    pos /= peak
    neg /= peak
    return AccumFrame(pos=pos, neg=neg, window=window)


def event_edge_map(acc: AccumFrame) -> np.ndarray:
    """Box-smoothed polarity density, rescaled to peak 1 (zeros if empty)."""
    total = acc.pos + acc.neg
    h, w = total.shape
    padded = np.pad(total, 1)
    sm = np.zeros_like(total)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            sm += padded[dy:dy + h, dx:dx + w]
    peak = sm.max()
    return sm / peak if peak > 0 else sm


def integrate_log(sl: EventStream, c: float | None = None) -> np.ndarray:
    """Per-pixel log-intensity change c * sum(polarity) over one window."""
    if c is None:
        c = sl.c
    out = np.zeros((sl.height, sl.width))
    np.add.at(out, (sl.y, sl.x), c * sl.p)
    return out
