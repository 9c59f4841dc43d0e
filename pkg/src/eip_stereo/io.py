"""File formats (events, PFM, run config) and the angular-error metric."""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core_types import EventStream, LightTrajectory, PixelThresholds
from .errors import ConfigurationError, EIPError, ParseError

TEXT_HEADER = "x,y,t_us,p"
BINARY_MAGIC = b"EVT1"
_BIN_HEAD = struct.Struct("<4sIIQ")
_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1"), ("t_ns", "<u8")])
_SYNC_TOL = 1e-6 + 1e-12


# ---------------------------------------------------------------------------
# events


def _is_binary(path) -> bool:
    return str(path).endswith((".bin", ".evt"))


def sync_path(path) -> Path:
    return Path(str(path) + ".sync")


def write_events(path, stream: EventStream, fmt: str | None = None) -> None:
    """Write ``stream`` as text (``x,y,t_us,p`` lines) or binary (``EVT1``).

    The format follows ``fmt`` or the extension (``.bin``/``.evt`` are
    binary). Cycle syncs and the sensor size go to ``<path>.sync``.
    """
    fmt = fmt or ("binary" if _is_binary(path) else "text")
    if fmt == "text":
        t_us = np.round(stream.t * 1e6).astype(np.int64)
        with open(path, "w") as f:
            f.write(TEXT_HEADER + "\n")
            if len(stream):
                body = np.column_stack([stream.x, stream.y, t_us, stream.p.astype(np.int64)])
                np.savetxt(f, body, fmt="%d", delimiter=",")
    elif fmt == "binary":
        rec = np.zeros(len(stream), dtype=_RECORD)
        rec["x"], rec["y"], rec["p"] = stream.x, stream.y, stream.p
        rec["t_ns"] = np.round(stream.t * 1e9).astype(np.uint64)
        with open(path, "wb") as f:
            f.write(_BIN_HEAD.pack(BINARY_MAGIC, stream.width, stream.height, len(stream)))
            f.write(rec.tobytes())
    else:
        raise ConfigurationError(f"unknown event format {fmt!r}")
    write_sync(sync_path(path), stream.cycle_syncs, stream.width, stream.height)


def write_sync(path, syncs, width: int, height: int) -> None:
    """One integer microsecond per line after a ``# sensor W H`` comment."""
    with open(path, "w") as f:
        f.write(f"# sensor {width} {height}\n")
        for s in syncs:
            f.write(f"{int(round(s * 1e6))}\n")


def read_sync(path):
    """Returns ``(syncs_seconds, (width, height) or None)``."""
    size = None
    syncs = []
    with open(path) as f:
        for i, line in enumerate(f, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if len(parts) == 3 and parts[0] == "sensor":
                    try:
                        size = (int(parts[1]), int(parts[2]))
                    except ValueError:
                        raise ParseError(f"{path}: line {i}: bad sensor size") from None
                continue
            try:
                syncs.append(int(s) * 1e-6)
            except ValueError:
                raise ParseError(f"{path}: line {i}: expected an integer microsecond") from None
    return np.array(syncs), size


def read_events(path, width: int | None = None, height: int | None = None,
                fmt: str | None = None) -> EventStream:
    """Inverse of :func:`write_events`.

    The sensor size comes from the binary header, the sync sidecar or the
    arguments (in that order); as a last resort it is the bounding box of the
    events.
    """
    fmt = fmt or ("binary" if _is_binary(path) else "text")
    sp = sync_path(path)
    syncs, size = read_sync(sp) if sp.exists() else (np.zeros(0), None)
    if fmt == "binary":
        x, y, t, p, size = _read_binary(path)
    elif fmt == "text":
        x, y, t, p = _read_text(path)
    else:
        raise ConfigurationError(f"unknown event format {fmt!r}")
    if size is None:
        if width is not None and height is not None:
            size = (width, height)
        else:
            size = (int(x.max()) + 1 if len(x) else 0, int(y.max()) + 1 if len(y) else 0)
    w, h = size
    bad = np.flatnonzero((x < 0) | (x >= w) | (y < 0) | (y >= h))
    if len(bad):
        raise ParseError(f"{path}: {_where(fmt, bad[0])}: coordinates ({x[bad[0]]}, {y[bad[0]]}) "
                         f"outside the {w}x{h} sensor")
    try:
        return EventStream(w, h, x, y, t, p, syncs, sync_tol=_SYNC_TOL)
    except EIPError as e:
        raise ParseError(f"{path}: {e}") from None


def _where(fmt: str, i: int) -> str:
    return f"line {i + 2}" if fmt == "text" else f"record {i}"


def _read_text(path):
    with open(path) as f:
        header = f.readline().strip()
        if header != TEXT_HEADER:
            raise ParseError(f"{path}: line 1: expected header {TEXT_HEADER!r}, got {header!r}")
        rows = []
        for i, line in enumerate(f, 2):
            s = line.strip()
            if not s:
                continue
            parts = s.split(",")
            try:
                if len(parts) != 4:
                    raise ValueError
                rows.append(tuple(int(v) for v in parts))
            except ValueError:
                raise ParseError(f"{path}: line {i}: expected four integers, got {s!r}") from None
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    x, y, t_us, p = arr.T
    _check_events(path, "text", t_us, p)
    return x, y, t_us * 1e-6, p


def _read_binary(path):
    with open(path, "rb") as f:
        head = f.read(_BIN_HEAD.size)
        if len(head) < _BIN_HEAD.size:
            raise ParseError(f"{path}: truncated header")
        magic, w, h, count = _BIN_HEAD.unpack(head)
        if magic != BINARY_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        data = f.read()
    if len(data) != count * _RECORD.itemsize:
        raise ParseError(f"{path}: header promises {count} records, found "
                         f"{len(data) / _RECORD.itemsize:g}")
    rec = np.frombuffer(data, dtype=_RECORD)
    x = rec["x"].astype(np.int64)
    y = rec["y"].astype(np.int64)
    p = rec["p"].astype(np.int64)
    t_ns = rec["t_ns"].astype(np.int64)
    _check_events(path, "binary", t_ns, p)
    return x, y, t_ns * 1e-9, p, (int(w), int(h))


def _check_events(path, fmt, t, p):
    bad = np.flatnonzero(np.diff(t) < 0)
    if len(bad):
        raise ParseError(f"{path}: {_where(fmt, bad[0] + 1)}: timestamps decrease")
    bad = np.flatnonzero((p != 1) & (p != -1))
    if len(bad):
        raise ParseError(f"{path}: {_where(fmt, bad[0])}: polarity must be 1 or -1")


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, image) -> None:
    """Little-endian PFM, ``Pf`` for (H, W) and ``PF`` for (H, W, 3) images."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    elif img.ndim == 2:
        tag = b"Pf"
    else:
        raise ConfigurationError("PFM images must be (H, W) or (H, W, 3)")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ConfigurationError("PFM images need at least one pixel")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        tag = f.readline().rstrip()
        if tag not in (b"PF", b"Pf"):
            raise ParseError(f"{path}: bad PFM magic {tag!r}")
        try:
            w, h = (int(v) for v in f.readline().split())
            scale = float(f.readline())
        except ValueError:
            raise ParseError(f"{path}: malformed PFM header") from None
        if scale == 0 or not math.isfinite(scale):
            raise ParseError(f"{path}: bad PFM scale {scale!r}")
        if w < 1 or h < 1:
            raise ParseError(f"{path}: bad PFM size {w}x{h}")
        ch = 3 if tag == b"PF" else 1
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h * ch:
        raise ParseError(f"{path}: expected {w * h * ch} values, found {data.size}")
    img = data.reshape((h, w, 3) if ch == 3 else (h, w))
    return np.flipud(img).astype(np.float64)


def write_thresholds(prefix, thresholds: PixelThresholds) -> None:
    write_pfm(f"{prefix}_hp.pfm", thresholds.h_p)
    write_pfm(f"{prefix}_hn.pfm", thresholds.h_n)


def read_thresholds(prefix) -> PixelThresholds:
    return PixelThresholds(read_pfm(f"{prefix}_hp.pfm"), read_pfm(f"{prefix}_hn.pfm"))


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Every parameter of a run, stored as a flat ``key = value`` file.

    ``thresholds`` is ``uniform`` (use ``h_p``/``h_n`` everywhere) or the
    prefix of a ``<prefix>_hp.pfm``/``<prefix>_hn.pfm`` pair.
    """

    scene: str = "diffuse"
    resolution: int = 64
    light_zenith_deg: float = 45.0
    period: float = 1.0
    phase0: float = 0.0
    thresholds: str = "uniform"
    h_p: float = 0.05
    h_n: float = -0.05
    noise_sigma: float = 0.0
    logamp_floor: float = 0.0
    dead_time: float = 0.0
    seed: int = 0
    grid_azimuth: int = 36
    grid_zenith: int = 18
    refine_iters: int = 100
    refine_tol: float = 1e-5
    n_samples: int = 256
    offset_ratio: float = 0.1
    specular_margin: float = 0.14
    cast_margin: float = 0.20
    cost_threshold: float = 0.229
    peak_separation: float = 0.25
    min_inlier_fraction: float = 0.375
    cycles: int = 3
    average_cycles: int = 1

    def __post_init__(self):
        if not 0 < self.light_zenith_deg < 90:
            raise ConfigurationError("light_zenith_deg must lie in (0, 90)")
        if not self.period > 0:
            raise ConfigurationError("period must be positive")
        if self.average_cycles < 1 or self.cycles < self.average_cycles + 2:
            raise ConfigurationError("need average_cycles >= 1 and cycles >= average_cycles + 2")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(getattr(self, k))}\n" for k in self.keys())

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        vals: dict = {}
        for i, line in enumerate(text.splitlines(), 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ParseError(f"{source}: line {i}: expected key = value")
            k, v = (p.strip() for p in s.split("=", 1))
            if k not in types:
                raise ParseError(f"{source}: line {i}: unknown key {k!r}")
            if k in vals:
                raise ParseError(f"{source}: line {i}: duplicate key {k!r}")
            try:
                vals[k] = {"int": int, "float": float, "str": str}[types[k]](v)
            except ValueError:
                raise ParseError(f"{source}: line {i}: bad value {v!r} for {k}") from None
        missing = [k for k in types if k not in vals]
        if missing:
            raise ParseError(f"{source}: missing keys: {', '.join(missing)}")
        return cls(**vals)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_text(f.read(), str(path))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    def trajectory(self) -> LightTrajectory:
        return LightTrajectory.circular(math.radians(self.light_zenith_deg), self.period, self.phase0)

    def pixel_thresholds(self, width: int, height: int, base_dir=".") -> PixelThresholds:
        if self.thresholds == "uniform":
            return PixelThresholds.uniform(width, height, self.h_p, self.h_n)
        prefix = self.thresholds
        if not os.path.isabs(prefix):
            prefix = os.path.join(base_dir, prefix)
        th = read_thresholds(prefix)
        if th.shape != (height, width):
            raise ConfigurationError("threshold maps do not match the sensor size")
        return th

    def circuit_config(self, thresholds: PixelThresholds):
        from .circuit import CircuitConfig
        return CircuitConfig(thresholds=thresholds, noise_sigma=self.noise_sigma,
                             logamp_floor=self.logamp_floor, dead_time=self.dead_time,
                             rng_seed=self.seed)

    def solver_config(self):
        from .masks import MaskConfig
        from .normal_solver import SolverConfig
        mask = MaskConfig(self.specular_margin, self.cast_margin, self.cost_threshold,
                          self.peak_separation)
        return SolverConfig(self.grid_azimuth, self.grid_zenith, self.refine_iters,
                            self.refine_tol, self.offset_ratio, self.n_samples, mask,
                            self.min_inlier_fraction)


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class MAEReport:
    mae: float                 # degrees, NaN when every pixel is a sentinel
    error_map: np.ndarray      # degrees, NaN off the evaluated set
    n_evaluated: int
    n_sentinel: int

    def summary(self) -> str:
        return (f"mae_deg = {self.mae:.6f}\nevaluated = {self.n_evaluated}\n"
                f"sentinel = {self.n_sentinel}\n")


def angular_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in degrees between unit vectors along the last axis."""
    d = np.clip(np.sum(np.asarray(a) * np.asarray(b), axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(d))


def evaluate_mae(result: np.ndarray, truth: np.ndarray, foreground: np.ndarray) -> MAEReport:
    """Mean angular error over foreground pixels whose estimate is a unit
    vector; zero-vector (unsolved) pixels are counted as sentinels."""
    result = np.asarray(result, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    fg = np.asarray(foreground, dtype=bool)
    if result.shape != truth.shape or result.shape[:2] != fg.shape:
        raise ConfigurationError("result, truth and foreground sizes differ")
    if not fg.any():
        raise ConfigurationError("foreground mask is empty")
    norm = np.linalg.norm(result, axis=-1)
    ok = fg & np.isfinite(norm) & (np.abs(norm - 1.0) < 1e-3)
    err = np.full(fg.shape, np.nan)
    err[ok] = angular_error(result[ok] / norm[ok, None], truth[ok])
    n = int(ok.sum())
    return MAEReport(float(err[ok].mean()) if n else float("nan"), err, n, int(fg.sum()) - n)
