"""Event interval profiles: reconstruction from a pixel's events, uniform
resampling, averaging over cycles and extremum search."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core_types import Profile
from .errors import ConfigurationError, DegenerateProfileError

DEFAULT_SAMPLES = 256


def raw_profile_points(times, polarities, h_p: float, h_n: float):
    """Central-difference derivative estimates at each interior event.

    Between the events before and after ``t_i`` the log signal moves by
    ``h(p_i) + h(p_{i+1})``, so the slope assigned to ``t_i`` is that change
    over ``t_{i+1} - t_{i-1}``. With equal polarities this is ``2h / dt``.
    """
    t = np.asarray(times, dtype=np.float64)
    p = np.asarray(polarities)
    if len(t) < 3:
        return np.zeros(0), np.zeros(0)
    steps = np.where(p > 0, h_p, h_n)
    span = t[2:] - t[:-2]
    ok = span > 0
    vals = (steps[1:-1] + steps[2:])[ok] / span[ok]
    return t[1:-1][ok], vals


def reconstruct_eip(times, polarities, h_p: float, h_n: float, period: float,
                    n_samples: int = DEFAULT_SAMPLES, cycle_start: float = 0.0) -> Profile:
    """Profile of one cycle ``[cycle_start, cycle_start + period)``.

    ``times`` may include one event on either side of the cycle; they only
    serve as neighbours so the first and last in-cycle events get a central
    difference too. Raw points are interpolated linearly around the circle;
    samples more than ``period/4`` from every raw point are invalid.
    """
    if n_samples < 8:
        raise ConfigurationError("n_samples must be >= 8")
    T = float(period)
    t_raw, v_raw = raw_profile_points(times, polarities, h_p, h_n)
    keep = (t_raw >= cycle_start) & (t_raw < cycle_start + T)
    u = t_raw[keep] - cycle_start
    v = v_raw[keep]
    if not len(u):
        return Profile.invalid(T, n_samples)
    u = np.clip(u, 0.0, np.nextafter(T, 0.0))
    order = np.argsort(u, kind="stable")
    u, v = u[order], v[order]

    s = np.arange(n_samples) * (T / n_samples)
    ext_u = np.r_[u[-1] - T, u, u[0] + T]
    ext_v = np.r_[v[-1], v, v[0]]
    values = np.interp(s, ext_u, ext_v)

    # circular distance to the closest raw point
    j = np.searchsorted(u, s)
    right = ext_u[j + 1]
    left = ext_u[j]
    dist = np.minimum(right - s, s - left)
    valid = dist <= T / 4
    return Profile(T, np.where(valid, values, np.nan), valid)


def cycle_profiles(times, polarities, h_p: float, h_n: float, period: float,
                   cycle_starts: Sequence[float], n_samples: int = DEFAULT_SAMPLES) -> list[Profile]:
    """One profile per cycle starting at each of ``cycle_starts``, borrowing
    a neighbour event from the adjacent cycles."""
    t = np.asarray(times, dtype=np.float64)
    p = np.asarray(polarities)
    out = []
    for start in cycle_starts:
        start = float(start)
        i0 = np.searchsorted(t, start, side="left")
        i1 = np.searchsorted(t, start + period, side="left")
        lo, hi = max(i0 - 1, 0), min(i1 + 1, len(t))
        out.append(reconstruct_eip(t[lo:hi], p[lo:hi], h_p, h_n, period, n_samples, start))
    return out


def average_profiles(profiles: Sequence[Profile]) -> Profile:
    """Per-sample mean over the profiles valid there; a sample stays valid
    when at least half of the inputs (rounded up) are valid."""
    if not profiles:
        raise ConfigurationError("need at least one profile")
    T, n = profiles[0].period, profiles[0].n
    for pr in profiles:
        if pr.n != n or not math.isclose(pr.period, T, rel_tol=0, abs_tol=1e-12):
            raise ConfigurationError("profiles differ in period or sample count")
    K = len(profiles)
    valid = np.stack([pr.valid for pr in profiles])
    vals = np.where(valid, np.stack([pr.values for pr in profiles]), 0.0)
    count = valid.sum(axis=0)
    mean = vals.sum(axis=0) / np.maximum(count, 1)
    ok = count >= math.ceil(K / 2)
    return Profile(T, np.where(ok, mean, np.nan), ok)


def find_peaks(profile: Profile) -> tuple[float, float]:
    """Times of the global maximum and minimum over valid samples
    (earliest sample on ties)."""
    ok = profile.valid
    if ok.sum() < 2:
        raise DegenerateProfileError("profile has fewer than 2 valid samples")
    vals = profile.values
    hi = np.where(ok, vals, -np.inf)
    lo = np.where(ok, vals, np.inf)
    i_t, i_b = int(np.argmax(hi)), int(np.argmin(lo))
    if not vals[i_t] > vals[i_b]:
        raise DegenerateProfileError("profile is constant")
    dt = profile.period / profile.n
    return i_t * dt, i_b * dt
