"""Shared domain types: events, light trajectories, normals, thresholds,
profiles and periodic temporal masks.

Time is float64 seconds everywhere in memory. Arrays held by the types are
marked read-only after construction so instances can be shared freely.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

TWO_PI = 2.0 * math.pi


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# events


class Event(NamedTuple):
    x: int
    y: int
    t: float
    polarity: int


class EventStream:
    """Time-sorted events of a ``width`` x ``height`` sensor plus cycle syncs.

    Stored column-wise (``x``, ``y``, ``t``, ``p``); iterating yields
    :class:`Event` tuples.
    """

    def __init__(self, width: int, height: int, x, y, t, p, cycle_syncs=(),
                 *, sort: bool = True, sync_tol: float = 1e-9):
        self.width = int(width)
        self.height = int(height)
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        p = np.asarray(p, dtype=np.int8).reshape(-1)
        if not (len(x) == len(y) == len(t) == len(p)):
            raise ConfigurationError("event columns have different lengths")
        if sort and len(t):
            order = np.lexsort((p, x, y, t))
            x, y, t, p = x[order], y[order], t[order], p[order]
        self.x = _frozen(x)
        self.y = _frozen(y)
        self.t = _frozen(t)
        self.p = _frozen(p)
        self.cycle_syncs = _frozen(np.asarray(cycle_syncs, dtype=np.float64).reshape(-1))
        self._validate(sync_tol)

    def _validate(self, sync_tol: float) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("sensor dimensions must be positive")
        if len(self.t):
            if self.x.min() < 0 or self.x.max() >= self.width:
                raise DomainError("event x outside sensor width")
            if self.y.min() < 0 or self.y.max() >= self.height:
                raise DomainError("event y outside sensor height")
            if not np.all(np.isin(self.p, (-1, 1))):
                raise DomainError("polarity must be +1 or -1")
            if not np.all(np.isfinite(self.t)) or self.t[0] < 0:
                raise DomainError("event times must be finite and >= 0")
            if np.any(np.diff(self.t) < 0):
                raise DomainError("events are not sorted by time")
        s = self.cycle_syncs
        if len(s) >= 2:
            d = np.diff(s)
            if np.any(d <= 0):
                raise DomainError("cycle syncs must be strictly increasing")
            if np.max(np.abs(d - d[0])) > sync_tol:
                raise DomainError("cycle sync spacing is not constant")

    @classmethod
    def empty(cls, width: int, height: int, cycle_syncs=()) -> "EventStream":
        return cls(width, height, [], [], [], [], cycle_syncs)

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event],
                    cycle_syncs=()) -> "EventStream":
        if not events:
            return cls.empty(width, height, cycle_syncs)
        cols = list(zip(*events))
        return cls(width, height, *cols, cycle_syncs=cycle_syncs)

    @property
    def period(self) -> float | None:
        if len(self.cycle_syncs) < 2:
            return None
        return float(self.cycle_syncs[1] - self.cycle_syncs[0])

    @property
    def n_cycles(self) -> int:
        return max(len(self.cycle_syncs) - 1, 0)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.t)):
            yield self[i]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and np.array_equal(self.t, other.t) and np.array_equal(self.p, other.p)
                and np.array_equal(self.cycle_syncs, other.cycle_syncs))

    def __repr__(self) -> str:
        return (f"EventStream({self.width}x{self.height}, {len(self)} events, "
                f"{len(self.cycle_syncs)} syncs)")

    def pixel_events(self) -> dict[tuple[int, int], tuple[np.ndarray, np.ndarray]]:
        """Group events by pixel: ``{(x, y): (times, polarities)}``, each time-sorted."""
        if not len(self.t):
            return {}
        key = self.y * self.width + self.x
        order = np.argsort(key, kind="stable")
        key_sorted = key[order]
        starts = np.flatnonzero(np.r_[True, key_sorted[1:] != key_sorted[:-1]])
        ends = np.r_[starts[1:], len(key_sorted)]
        out = {}
        for s, e in zip(starts, ends):
            idx = order[s:e]
            k = int(key_sorted[s])
            out[(k % self.width, k // self.width)] = (self.t[idx], self.p[idx])
        return out


# ---------------------------------------------------------------------------
# light


@dataclass(frozen=True)
class LightTrajectory:
    """Directional light moving periodically on the unit sphere.

    Use :meth:`circular` or :meth:`tabulated` to build one.
    """

    kind: str
    period: float
    zenith: float = 0.0
    phase0: float = 0.0
    sample_times: np.ndarray | None = field(default=None, repr=False)
    sample_dirs: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def circular(cls, zenith: float, period: float = 1.0, phase0: float = 0.0) -> "LightTrajectory":
        if not 0.0 < zenith < math.pi / 2:
            raise ConfigurationError("circular light zenith must lie in (0, pi/2)")
        if not period > 0:
            raise ConfigurationError("period must be positive")
        return cls("circular", float(period), float(zenith), float(phase0))

    @classmethod
    def tabulated(cls, times, directions, period: float) -> "LightTrajectory":
        times = np.asarray(times, dtype=np.float64)
        dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        if len(times) < 3 or len(dirs) != len(times):
            raise ConfigurationError("tabulated trajectory needs >= 3 samples")
        if not period > 0:
            raise ConfigurationError("period must be positive")
        times = np.mod(times, period)
        order = np.argsort(times)
        times, dirs = times[order], dirs[order]
        if np.any(np.diff(times) <= 0):
            raise ConfigurationError("tabulated sample times must be distinct modulo the period")
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        return cls("tabulated", float(period), sample_times=_frozen(times), sample_dirs=_frozen(dirs))

    @property
    def omega(self) -> float:
        return TWO_PI / self.period

    def direction(self, t) -> np.ndarray:
        """Unit light direction(s), shape ``t.shape + (3,)``."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "circular":
            ang = self.omega * t + self.phase0
            st = math.sin(self.zenith)
            out = np.empty(t.shape + (3,))
            out[..., 0] = st * np.cos(ang)
            out[..., 1] = st * np.sin(ang)
            out[..., 2] = math.cos(self.zenith)
            return out
        return self._slerp(t)

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "circular":
            w = self.omega
            ang = w * t + self.phase0
            st = math.sin(self.zenith)
            out = np.zeros(t.shape + (3,))
            out[..., 0] = -st * w * np.sin(ang)
            out[..., 1] = st * w * np.cos(ang)
            return out
        dt = 1e-6 * self.period
        return (self._slerp(t + dt) - self._slerp(t - dt)) / (2 * dt)

    def _slerp(self, t: np.ndarray) -> np.ndarray:
        ts, ds, T = self.sample_times, self.sample_dirs, self.period
        u = np.mod(t, T)
        # wrap the table so every query falls between two samples
        ext_t = np.r_[ts, ts[0] + T]
        ext_d = np.vstack([ds, ds[:1]])
        i = np.clip(np.searchsorted(ext_t, u, side="right") - 1, 0, len(ts) - 1)
        w = (u - ext_t[i]) / (ext_t[i + 1] - ext_t[i])
        a, b = ext_d[i], ext_d[i + 1]
        cos_om = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
        om = np.arccos(cos_om)
        so = np.sin(om)
        small = so < 1e-12
        safe = np.where(small, 1.0, so)
        wa = np.where(small, 1.0 - w, np.sin((1.0 - w) * om) / safe)
        wb = np.where(small, w, np.sin(w * om) / safe)
        out = wa[..., None] * a + wb[..., None] * b
        return out / np.linalg.norm(out, axis=-1, keepdims=True)


def light_direction(traj: LightTrajectory, t) -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise DomainError("time must be finite")
    return traj.direction(t)


def light_derivative(traj: LightTrajectory, t) -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise DomainError("time must be finite")
    return traj.derivative(t)


# ---------------------------------------------------------------------------
# normals


def normal_from_angles(zenith, azimuth) -> np.ndarray:
    zenith = np.asarray(zenith, dtype=np.float64)
    azimuth = np.asarray(azimuth, dtype=np.float64)
    st = np.sin(zenith)
    return np.stack([st * np.cos(azimuth), st * np.sin(azimuth), np.cos(zenith)], axis=-1)


def normal_to_angles(n) -> tuple[np.ndarray, np.ndarray]:
    """(zenith, azimuth) of unit vector(s); azimuth in [0, 2*pi)."""
    n = np.asarray(n, dtype=np.float64)
    zen = np.arccos(np.clip(n[..., 2], -1.0, 1.0))
    azi = np.mod(np.arctan2(n[..., 1], n[..., 0]), TWO_PI)
    return zen, azi


@dataclass(frozen=True)
class SurfaceNormal:
    """Unit surface normal; the camera looks down -z so visible normals have n_z > 0."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not abs(math.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2) - 1.0) <= 1e-9:
            raise DomainError("surface normal must have unit norm")

    @classmethod
    def from_vector(cls, v) -> "SurfaceNormal":
        v = np.asarray(v, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(v))
        if not (np.isfinite(norm) and norm > 0):
            raise DomainError("cannot normalise a zero or non-finite vector")
        v = v / norm
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_angles(cls, zenith: float, azimuth: float) -> "SurfaceNormal":
        return cls.from_vector(normal_from_angles(zenith, azimuth))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def zenith(self) -> float:
        return float(math.acos(max(-1.0, min(1.0, self.z))))

    @property
    def azimuth(self) -> float:
        return float(math.atan2(self.y, self.x) % TWO_PI)


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class PixelThresholds:
    """Per-pixel contrast thresholds, maps of shape (height, width).

    Non-finite entries mark pixels whose threshold could not be estimated.
    """

    h_p: np.ndarray
    h_n: np.ndarray

    def __post_init__(self):
        hp = _frozen(self.h_p, np.float64)
        hn = _frozen(self.h_n, np.float64)
        if hp.shape != hn.shape or hp.ndim != 2:
            raise ConfigurationError("threshold maps must be 2-D with equal shapes")
        fp, fn = np.isfinite(hp), np.isfinite(hn)
        if np.any(hp[fp] <= 0) or np.any(hn[fn] >= 0):
            raise ConfigurationError("require h_p > 0 and h_n < 0")
        object.__setattr__(self, "h_p", hp)
        object.__setattr__(self, "h_n", hn)

    @classmethod
    def uniform(cls, width: int, height: int, h_p: float, h_n: float) -> "PixelThresholds":
        return cls(np.full((height, width), float(h_p)), np.full((height, width), float(h_n)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.h_p.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.h_p) & np.isfinite(self.h_n)

    def at(self, x: int, y: int) -> tuple[float, float]:
        return float(self.h_p[y, x]), float(self.h_n[y, x])


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class Profile:
    """Uniformly resampled event interval profile over one cycle.

    Sample ``i`` sits at time ``i * period / N``. Invalid samples hold NaN.
    """

    period: float
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        ok = np.array(self.valid, dtype=bool)
        if vals.ndim != 1 or vals.shape != ok.shape:
            raise ConfigurationError("profile values and flags must be 1-D and equal length")
        if len(vals) < 8:
            raise ConfigurationError("a profile needs at least 8 samples")
        if not np.all(np.isfinite(vals[ok])):
            raise DomainError("valid profile samples must be finite")
        vals[~ok] = np.nan
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "valid", _frozen(ok))

    @classmethod
    def invalid(cls, period: float, n: int) -> "Profile":
        return cls(period, np.full(n, np.nan), np.zeros(n, dtype=bool))

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n) * (self.period / self.n)

    def to_csv(self) -> str:
        lines = ["time,value,valid"]
        for t, v, ok in zip(self.times, self.values, self.valid):
            lines.append(f"{float(t)!r},{float(v)!r},{int(ok)}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# temporal masks


@dataclass(frozen=True)
class TemporalMask:
    """Periodic 0/1 function on [0, period), stored as sorted disjoint
    half-open arcs ``[a, b)`` where the mask is 1."""

    period: float
    arcs: tuple[tuple[float, float], ...]

    @classmethod
    def from_arcs(cls, period: float, arcs) -> "TemporalMask":
        """Build from ``(start, length)`` pairs; arcs may wrap and overlap."""
        T = float(period)
        if not T > 0:
            raise ConfigurationError("mask period must be positive")
        pieces = []
        for start, length in arcs:
            if length <= 0:
                continue
            if length >= T:
                pieces.append((0.0, T))
                continue
            a = float(start) % T
            b = a + float(length)
            if b <= T:
                pieces.append((a, b))
            else:
                pieces.append((a, T))
                pieces.append((0.0, b - T))
        pieces.sort()
        merged: list[list[float]] = []
        for a, b in pieces:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return cls(T, tuple((a, b) for a, b in merged if b > a))

    @classmethod
    def full(cls, period: float) -> "TemporalMask":
        return cls(float(period), ((0.0, float(period)),))

    @classmethod
    def empty(cls, period: float) -> "TemporalMask":
        return cls(float(period), ())

    def __call__(self, t) -> np.ndarray:
        u = np.mod(np.asarray(t, dtype=np.float64), self.period)
        out = np.zeros(u.shape, dtype=bool)
        for a, b in self.arcs:
            out |= (u >= a) & (u < b)
        return out

    contains = __call__

    def sample(self, n: int) -> np.ndarray:
        return self(np.arange(n) * (self.period / n))

    def measure(self) -> float:
        """Total length where the mask is 1."""
        return float(sum(b - a for a, b in self.arcs))

    def complement(self) -> "TemporalMask":
        T = self.period
        edges = [0.0]
        for a, b in self.arcs:
            edges += [a, b]
        edges.append(T)
        gaps = ((a, b) for a, b in zip(edges[::2], edges[1::2]) if b > a)
        return TemporalMask(T, tuple(gaps))
