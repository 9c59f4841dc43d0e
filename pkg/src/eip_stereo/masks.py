"""Temporal masks that remove distorted stretches of a profile before fitting,
and the rule choosing between them."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .core_types import LightTrajectory, TemporalMask
from .errors import AllMaskedError, ConfigurationError, DegeneratePeaksError

# 95th percentile of the first-stage cost over a noiseless 64x64 diffuse
# sphere (theta_l = 45 deg, T = 1 s, h = 0.05, offset ratio 0.1, K = 1);
# regenerate with normal_solver.calibrate_cost_threshold
DEFAULT_COST_THRESHOLD = 0.229


class MaskLabel(IntEnum):
    COLLAPSED = 0
    SPECULAR = 1
    CAST = 2


@dataclass(frozen=True)
class MaskConfig:
    """Margins and thresholds as fractions of the light period (except ``cost_threshold``)."""

    specular_margin: float = 0.14
    cast_margin: float = 0.20
    cost_threshold: float = DEFAULT_COST_THRESHOLD
    peak_separation: float = 0.25

    def __post_init__(self):
        if not (0 <= self.specular_margin < 0.5 and 0 <= self.cast_margin < 0.5):
            raise ConfigurationError("mask margins must lie in [0, 0.5)")
        if not 0 < self.peak_separation < 1:
            raise ConfigurationError("peak_separation must lie in (0, 1)")
        if not self.cost_threshold > 0:
            raise ConfigurationError("cost_threshold must be positive")


def forward_gap(t_from: float, t_to: float, period: float) -> float:
    """Time needed to go forward from ``t_from`` to ``t_to`` on the circle."""
    return (t_to - t_from) % period


def mask_collapsed(t_top: float, t_bottom: float, period: float) -> TemporalMask:
    """1 on the forward arc from the top peak to the bottom peak."""
    if (t_top - t_bottom) % period == 0:
        raise DegeneratePeaksError("top and bottom peaks coincide")
    return TemporalMask.from_arcs(period, [(t_top, forward_gap(t_top, t_bottom, period))])


def _zero_arc(first: float, second: float, margin: float, period: float) -> TemporalMask:
    start = first - margin * period
    length = forward_gap(first, second, period) + 2 * margin * period
    if length >= period:
        raise AllMaskedError("expanded mask covers the whole cycle")
    return TemporalMask.from_arcs(period, [(start + length, period - length)])


def mask_specular(t_top: float, t_bottom: float, margin: float, period: float) -> TemporalMask:
    """0 on ``[t_top - margin*T, t_bottom + margin*T]`` (forward), 1 elsewhere."""
    return _zero_arc(t_top, t_bottom, margin, period)


def mask_cast(t_top: float, t_bottom: float, margin: float, period: float) -> TemporalMask:
    """0 on ``[t_bottom - margin*T, t_top + margin*T]`` (forward), 1 elsewhere."""
    return _zero_arc(t_bottom, t_top, margin, period)


def select_mask(first_cost: float, t_top: float, t_bottom: float, cfg: MaskConfig,
                period: float) -> MaskLabel:
    if first_cost <= cfg.cost_threshold:
        return MaskLabel.COLLAPSED
    if forward_gap(t_top, t_bottom, period) <= cfg.peak_separation * period:
        return MaskLabel.SPECULAR
    return MaskLabel.CAST


def build_mask(label: MaskLabel, t_top: float, t_bottom: float, cfg: MaskConfig,
               period: float) -> TemporalMask:
    if label == MaskLabel.SPECULAR:
        return mask_specular(t_top, t_bottom, cfg.specular_margin, period)
    if label == MaskLabel.CAST:
        return mask_cast(t_top, t_bottom, cfg.cast_margin, period)
    return mask_collapsed(t_top, t_bottom, period)


def mask_attached(normal, traj: LightTrajectory, period: float, n_samples: int = 256,
                  tol: float = 1e-9) -> TemporalMask:
    """1 where the light is in front of the surface (``n . l(t) > 0``).

    Sign changes between the ``n_samples`` uniform samples are located by
    bisection.
    """
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    T = float(period)

    def g(t):
        return traj.direction(t) @ n

    ts = np.arange(n_samples) * (T / n_samples)
    lit = g(ts) > 0
    if lit.all():
        return TemporalMask.full(T)
    if not lit.any():
        return TemporalMask.empty(T)
    edges = []
    for i in np.flatnonzero(lit != np.roll(lit, -1)):
        lo, hi = ts[i], ts[i] + T / n_samples
        s_lo = lit[i]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if (g(mid) > 0) == s_lo:
                lo = mid
            else:
                hi = mid
        edges.append((hi % T, not s_lo))  # time where the mask switches, new state
    arcs = []
    for k, (t_on, state) in enumerate(edges):
        if not state:
            continue
        t_off = edges[(k + 1) % len(edges)][0]
        arcs.append((t_on, forward_gap(t_on, t_off, T)))
    return TemporalMask.from_arcs(T, arcs)
