"""Per-pixel threshold estimation from power-ramp recordings and event
accumulation images."""
from __future__ import annotations

import math

import numpy as np

from .circuit import CircuitConfig, simulate_batch
from .core_types import EventStream, PixelThresholds
from .errors import ConfigurationError


def event_counts(stream: EventStream) -> tuple[np.ndarray, np.ndarray]:
    """Positive and negative event counts per pixel, each ``(H, W)``."""
    shape = (stream.height, stream.width)
    n_p = np.zeros(shape, dtype=np.int64)
    n_n = np.zeros(shape, dtype=np.int64)
    pos = stream.p > 0
    np.add.at(n_p, (stream.y[pos], stream.x[pos]), 1)
    np.add.at(n_n, (stream.y[~pos], stream.x[~pos]), 1)
    return n_p, n_n


def estimate_thresholds(stream: EventStream, k: float, cycles: int) -> PixelThresholds:
    """``h_p = c ln k / N_p`` and ``h_n = -c ln k / N_n`` with counts over all
    ``c`` ramp cycles. Pixels without events of a polarity get NaN."""
    if not k > 1:
        raise ConfigurationError("power ratio k must be > 1")
    if cycles < 1:
        raise ConfigurationError("cycles must be >= 1")
    n_p, n_n = event_counts(stream)
    swing = cycles * math.log(k)
    with np.errstate(divide="ignore"):
        h_p = np.where(n_p > 0, swing / np.maximum(n_p, 1), np.nan)
        h_n = np.where(n_n > 0, -swing / np.maximum(n_n, 1), np.nan)
    return PixelThresholds(h_p, h_n)


def accumulation_image(stream: EventStream, thresholds: PixelThresholds) -> np.ndarray:
    """``h_p * N_p`` per pixel; 0 where the pixel has no positive events."""
    n_p, _ = event_counts(stream)
    return np.where(n_p > 0, thresholds.h_p * n_p, 0.0)


def accumulation_image_signed(stream: EventStream, thresholds: PixelThresholds) -> np.ndarray:
    """``h_p * N_p + h_n * N_n`` per pixel, the net log-intensity change."""
    n_p, n_n = event_counts(stream)
    return (np.where(n_p > 0, thresholds.h_p * n_p, 0.0)
            + np.where(n_n > 0, thresholds.h_n * n_n, 0.0))


def ramp_power(t, k: float, period: float, s1: float = 1.0):
    """Triangular power wave: ``s1`` at each cycle start, ``k*s1`` at mid-cycle."""
    u = np.mod(np.asarray(t, dtype=np.float64), period) / period
    frac = 1.0 - np.abs(2.0 * u - 1.0)
    return s1 * (1.0 + (k - 1.0) * frac)


def simulate_ramp_stream(width: int, height: int, k: float, cycles: int, cfg: CircuitConfig,
                         *, period: float = 1.0, s1: float = 1.0,
                         albedo: np.ndarray | float = 1.0) -> EventStream:
    """Events of a flat target lit by a power ramp between ``s1`` and ``k*s1``
    (no offset light) for ``cycles`` up-and-down cycles."""
    if not k > 1:
        raise ConfigurationError("power ratio k must be > 1")
    if cycles < 1:
        raise ConfigurationError("cycles must be >= 1")
    if cfg.thresholds is None or cfg.thresholds.shape != (height, width):
        raise ConfigurationError("circuit config needs thresholds matching the target size")
    rho = np.broadcast_to(np.asarray(albedo, dtype=np.float64), (height, width))
    if np.any(rho <= 0):
        raise ConfigurationError("albedo must be positive")
    ys, xs = np.mgrid[0:height, 0:width]
    xs, ys = xs.ravel(), ys.ravel()
    rho_f = rho[ys, xs]

    def radiance(idx, t):
        return rho_f[idx] * ramp_power(t, k, period, s1)

    idx, times, pols = simulate_batch(radiance, ys * width + xs, cfg.thresholds.h_p[ys, xs],
                                      cfg.thresholds.h_n[ys, xs], cfg, period, cycles * period)
    syncs = period * np.arange(cycles + 1)
    return EventStream(width, height, xs[idx], ys[idx], times, pols, syncs)
