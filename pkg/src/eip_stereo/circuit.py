"""Event-camera pixel circuit: log amplifier, differencing against the last
event's reference level, and a two-sided comparator.

Crossings are located on a dense time grid and refined by bisection. All
pixels of a block advance together so each step is one vectorised call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_types import EventStream, LightTrajectory, PixelThresholds
from .errors import ConfigurationError, DomainError
from .scene import PixelBatch, SceneSpec

# window of grid samples scanned per lockstep iteration
_WINDOW = 64
# pixels simulated together; bounds the memory of the per-period table
_BLOCK = 1024
_NOISE_BUFFER = 256
# noisy thresholds are kept at >= this fraction of the nominal magnitude
_MIN_THRESHOLD_FRACTION = 0.1
# comparator slack for rounding in the accumulated reference; a crossing that
# lands exactly on an extremum still fires
_COMPARE_SLACK = 1e-12


@dataclass(frozen=True)
class CircuitConfig:
    thresholds: PixelThresholds | None = None
    quantum_efficiency: float = 1.0
    noise_sigma: float = 0.0
    logamp_floor: float = 0.0
    dead_time: float = 0.0
    rng_seed: int = 0
    grid_divisions: int = 4096
    bisection_tol: float = 1e-9

    def __post_init__(self):
        if not self.quantum_efficiency > 0:
            raise ConfigurationError("quantum efficiency must be positive")
        if self.noise_sigma < 0 or self.dead_time < 0 or self.logamp_floor < 0:
            raise ConfigurationError("noise_sigma, dead_time and logamp_floor must be >= 0")
        if self.grid_divisions < 4096:
            raise ConfigurationError("grid_divisions must be >= 4096 per period")
        if not self.bisection_tol > 0:
            raise ConfigurationError("bisection_tol must be positive")


class _NoiseSource:
    """Per-pixel threshold perturbations from independently seeded generators."""

    def __init__(self, seed: int, pixel_ids: np.ndarray, sigma: float):
        self.sigma = sigma
        self.n = len(pixel_ids)
        if sigma > 0:
            self.rngs = [np.random.default_rng([int(seed), int(pid)]) for pid in pixel_ids]
            self.buf = np.stack([g.standard_normal((_NOISE_BUFFER, 2)) for g in self.rngs])
            self.ptr = np.zeros(self.n, dtype=np.int64)

    def draw(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.sigma == 0:
            z = np.zeros(len(rows))
            return z, z
        empty = rows[self.ptr[rows] >= _NOISE_BUFFER]
        for r in empty:
            self.buf[r] = self.rngs[r].standard_normal((_NOISE_BUFFER, 2))
            self.ptr[r] = 0
        z = self.buf[rows, self.ptr[rows]]
        self.ptr[rows] += 1
        return self.sigma * z[:, 0], self.sigma * z[:, 1]


def _perturb(hp, hn, noise: _NoiseSource, rows):
    zp, zn = noise.draw(rows)
    hp_r, hn_r = hp[rows], hn[rows]
    return (np.maximum(hp_r + zp, _MIN_THRESHOLD_FRACTION * hp_r),
            np.minimum(hn_r + zn, _MIN_THRESHOLD_FRACTION * hn_r))


def _fires(d, thr_p, thr_n):
    return (d >= thr_p - _COMPARE_SLACK) | (d <= thr_n + _COMPARE_SLACK)


def _run_lockstep(logf: Callable, grid_values: Callable, t0: float, t1: float, step: float,
                  n_grid: int, hp: np.ndarray, hn: np.ndarray, noise: _NoiseSource,
                  dead_time: float, tol: float):
    """Simulate ``len(hp)`` pixels over ``[t0, t1]``.

    ``logf(rows, t)`` gives the amplified log signal; ``grid_values(rows, k)``
    gives it at grid index ``k`` (time ``t0 + k*step``; index ``n_grid`` is
    ``t1 + tol`` so a crossing landing exactly on ``t1`` is not lost).
    Returns ``(rows, times, polarities)`` of all events.
    """
    P = len(hp)
    rows_all = np.arange(P)
    t0, t1 = float(t0), float(t1)
    ref = logf(rows_all, np.full(P, t0))
    tcur = np.full(P, t0)
    knext = np.ones(P, dtype=np.int64)
    pend = np.zeros(P, dtype=bool)
    active = np.ones(P, dtype=bool)
    thr_p, thr_n = _perturb(hp, hn, noise, rows_all)
    gap = max(dead_time, tol)
    t_end = t1 + tol
    n_bisect = max(1, int(math.ceil(math.log2(step / tol))) + 1)
    out_r, out_t, out_p = [], [], []

    def gtime(k):
        return np.where(k >= n_grid, t_end, t0 + k * step)

    def emit(rows, times, d):
        pol = np.where(d > 0, 1, -1).astype(np.int8)
        out_r.append(rows)
        out_t.append(np.minimum(times, t1))
        out_p.append(pol)
        ref[rows] += np.where(pol > 0, thr_p[rows], thr_n[rows])
        thr_p[rows], thr_n[rows] = _perturb(hp, hn, noise, rows)
        tc = times + gap
        tcur[rows] = tc
        knext[rows] = np.floor((tc - t0) / step).astype(np.int64) + 1
        pend[rows] = True
        active[rows] = tc <= t_end

    while True:
        a = np.flatnonzero(active)
        if not len(a):
            break
        # right after an event (and its dead time) the comparator may already fire
        pa = a[pend[a]]
        if len(pa):
            d = logf(pa, tcur[pa]) - ref[pa]
            hit = _fires(d, thr_p[pa], thr_n[pa])
            pend[pa[~hit]] = False
            if hit.any():
                emit(pa[hit], tcur[pa[hit]], d[hit])
        b = a[~pend[a]]
        if not len(b):
            continue
        kk = knext[b, None] + np.arange(_WINDOW)
        inside = kk <= n_grid
        vals = grid_values(b, np.minimum(kk, n_grid))
        d = vals - ref[b, None]
        hit = _fires(d, thr_p[b, None], thr_n[b, None]) & inside
        anyhit = hit.any(axis=1)

        nh = b[~anyhit]
        if len(nh):
            last = np.minimum(knext[nh] + _WINDOW - 1, n_grid)
            tcur[nh] = gtime(last)
            knext[nh] = last + 1
            active[nh] = knext[nh] <= n_grid

        hb = b[anyhit]
        if len(hb):
            j = np.argmax(hit[anyhit], axis=1)
            khit = knext[hb] + j
            hi = gtime(khit)
            lo = np.where(j == 0, tcur[hb], gtime(khit - 1))
            tp, tn, rf = thr_p[hb], thr_n[hb], ref[hb]
            for _ in range(n_bisect):
                mid = 0.5 * (lo + hi)
                dm = logf(hb, mid) - rf
                h = _fires(dm, tp, tn)
                hi = np.where(h, mid, hi)
                lo = np.where(h, lo, mid)
            d_hi = logf(hb, hi) - rf
            emit(hb, hi, d_hi)

    if not out_r:
        return np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int8)
    return np.concatenate(out_r), np.concatenate(out_t), np.concatenate(out_p)


def _log_signal(radiance: np.ndarray, q: float, floor: float, times, where: str = "") -> np.ndarray:
    if floor > 0:
        radiance = np.maximum(radiance, floor)
    elif np.any(radiance <= 0):
        bad = np.flatnonzero(np.asarray(radiance <= 0).reshape(-1))[0]
        t_bad = float(np.broadcast_to(times, np.shape(radiance)).reshape(-1)[bad])
        raise DomainError(f"{where}radiance is non-positive at t={t_bad!r} and no log-amp floor is set")
    return np.log(q * radiance)


def simulate_pixel_events(radiance: Callable, cfg: CircuitConfig, h_p: float, h_n: float,
                          t0: float, t1: float, *, period: float | None = None,
                          pixel_id: int = 0):
    """Events of a single pixel for a radiance signal ``radiance(t)``.

    The grid step is ``period / cfg.grid_divisions`` (``period`` defaults to
    the window length). Returns ``(times, polarities)``; times strictly
    increase.
    """
    t0, t1 = float(t0), float(t1)
    if not t1 > t0:
        raise ConfigurationError("need t1 > t0")
    if not (h_p > 0 > h_n):
        raise ConfigurationError("need h_p > 0 > h_n")
    span = t1 - t0
    base = period if period is not None else span
    n_grid = int(math.ceil(span / (base / cfg.grid_divisions) - 1e-9))
    step = span / n_grid
    q, floor = cfg.quantum_efficiency, cfg.logamp_floor

    def call(t):
        t = np.asarray(t, dtype=np.float64)
        try:
            out = np.asarray(radiance(t), dtype=np.float64)
            if out.shape != t.shape:
                out = np.broadcast_to(out, t.shape)
        except (TypeError, ValueError):
            out = np.vectorize(lambda s: float(radiance(float(s))))(t)
        return out

    def logf(rows, t):
        return _log_signal(call(t), q, floor, t)

    grid_t = t0 + np.arange(n_grid + 1) * step
    grid_t[-1] = t1 + cfg.bisection_tol
    table = logf(None, grid_t)

    def grid_values(rows, k):
        return table[k]

    noise = _NoiseSource(cfg.rng_seed, np.array([pixel_id]), cfg.noise_sigma)
    _, times, pols = _run_lockstep(logf, grid_values, t0, t1, step, n_grid,
                                   np.array([float(h_p)]), np.array([float(h_n)]),
                                   noise, cfg.dead_time, cfg.bisection_tol)
    return times, pols


def simulate_batch(batch_radiance: Callable, pixel_ids: np.ndarray, hp: np.ndarray, hn: np.ndarray,
                   cfg: CircuitConfig, period: float, t_end: float,
                   describe_pixel: Callable[[int], str] = str):
    """Simulate many T-periodic pixels over ``[0, t_end]``.

    ``batch_radiance(idx, t)`` evaluates pixel ``idx`` (an index into
    ``pixel_ids``) at time ``t``. Returns ``(idx, times, polarities)``.
    """
    G = cfg.grid_divisions
    step = period / G
    n_grid = int(round(t_end / step))
    q, floor, tol = cfg.quantum_efficiency, cfg.logamp_floor, cfg.bisection_tol
    out = []
    for lo in range(0, len(pixel_ids), _BLOCK):
        sel = np.arange(lo, min(lo + _BLOCK, len(pixel_ids)))

        def logf(rows, t, sel=sel):
            return _log_signal(batch_radiance(sel[rows], t), q, floor, t)

        grid_t = np.arange(G) * step
        rad = batch_radiance(sel[:, None], grid_t[None, :])
        if floor <= 0 and np.any(rad <= 0):
            r, k = np.argwhere(rad <= 0)[0]
            raise DomainError(f"pixel {describe_pixel(int(sel[r]))}: radiance is non-positive "
                              f"at t={grid_t[k]!r} and no log-amp floor is set")
        table = _log_signal(rad, q, floor, grid_t[None, :])
        end_col = logf(np.arange(len(sel)), np.full(len(sel), t_end + tol))

        def grid_values(rows, k, table=table, end_col=end_col):
            v = table[rows[:, None], k % G]
            return np.where(k >= n_grid, end_col[rows][:, None], v)

        noise = _NoiseSource(cfg.rng_seed, pixel_ids[sel], cfg.noise_sigma)
        rows, times, pols = _run_lockstep(logf, grid_values, 0.0, t_end, step, n_grid,
                                          hp[sel], hn[sel], noise, cfg.dead_time, tol)
        out.append((sel[rows], times, pols))
    if not out:
        return np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int8)
    return tuple(np.concatenate(c) for c in zip(*out))


def simulate_stream(scene: SceneSpec, traj: LightTrajectory, cycles: int,
                    cfg: CircuitConfig) -> EventStream:
    """Event stream of every foreground pixel over ``cycles`` light periods."""
    if cycles < 1:
        raise ConfigurationError("cycles must be >= 1")
    T = traj.period
    syncs = T * np.arange(cycles + 1)
    thresholds = cfg.thresholds
    if thresholds is None:
        raise ConfigurationError("circuit config has no thresholds")
    if thresholds.shape != (scene.height, scene.width):
        raise ConfigurationError("threshold maps do not match the scene size")
    batch = PixelBatch(scene, traj)
    if not len(batch):
        return EventStream.empty(scene.width, scene.height, syncs)
    xs, ys = batch.xs, batch.ys
    hp = thresholds.h_p[ys, xs]
    hn = thresholds.h_n[ys, xs]
    bad = ~(np.isfinite(hp) & np.isfinite(hn))
    if bad.any():
        i = np.flatnonzero(bad)[0]
        raise ConfigurationError(f"pixel ({xs[i]}, {ys[i]}) has no valid threshold")
    ids = ys * scene.width + xs
    idx, times, pols = simulate_batch(batch.radiance, ids, hp, hn, cfg, T, cycles * T,
                                      describe_pixel=lambda i: f"({xs[i]}, {ys[i]})")
    return EventStream(scene.width, scene.height, xs[idx], ys[idx], times, pols, syncs)
