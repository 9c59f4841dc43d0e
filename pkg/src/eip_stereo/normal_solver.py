"""Per-pixel surface normals from event interval profiles.

The fit minimises the mean squared difference between the reconstructed
profile and the ideal one ``n.l'(t) / (max(n.l(t), 0) + eps)`` over the
samples a mask keeps. A coarse (azimuth, zenith) grid captures the basin and
a halving coordinate search refines it. ``eventps_baseline`` is the
null-space method the profile fit is compared against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_types import (EventStream, LightTrajectory, PixelThresholds, Profile,
                         SurfaceNormal, TemporalMask, normal_from_angles)
from .eip import DEFAULT_SAMPLES, average_profiles, cycle_profiles, find_peaks
from .errors import (AllMaskedError, AmbiguousNormalError, ConfigurationError,
                     DegenerateProfileError, DomainError, EmptySupportError,
                     UnsolvablePixelError)
from .masks import MaskConfig, MaskLabel, build_mask, mask_collapsed, select_mask

LABEL_UNSOLVED = -1
LABEL_ABSENT = -2


@dataclass(frozen=True)
class SolverConfig:
    grid_azimuth: int = 36
    grid_zenith: int = 18
    refine_iters: int = 100
    refine_tol: float = 1e-5
    offset_ratio: float = 0.0
    n_samples: int = DEFAULT_SAMPLES
    mask_cfg: MaskConfig = field(default_factory=MaskConfig)
    min_inlier_fraction: float = 0.375

    def __post_init__(self):
        if self.grid_azimuth < 4 or self.grid_zenith < 4:
            raise ConfigurationError("grid dimensions must be >= 4")
        if not self.refine_tol > 0:
            raise ConfigurationError("refine_tol must be positive")
        if self.offset_ratio < 0:
            raise ConfigurationError("offset_ratio must be >= 0")
        if not 0 <= self.min_inlier_fraction < 1:
            raise ConfigurationError("min_inlier_fraction must lie in [0, 1)")
        if self.refine_iters < 0:
            raise ConfigurationError("refine_iters must be >= 0")


@dataclass(frozen=True)
class SolveResult:
    normal: SurfaceNormal
    cost: float
    mask_label: MaskLabel
    stage: int
    valid_sample_count: int
    cost_history: tuple[float, ...] = ()


# ---------------------------------------------------------------------------
# ideal profile and cost


def _ideal(ndl: np.ndarray, ndd: np.ndarray, eps: float):
    """Ideal profile values and their support for precomputed n.l and n.l'."""
    lit = ndl > 0
    if eps > 0:
        return np.where(lit, ndd / (np.maximum(ndl, 0.0) + eps), 0.0), np.ones(ndl.shape, dtype=bool)
    return np.where(lit, ndd / np.where(lit, ndl, 1.0), 0.0), lit


def ideal_eip(normal, traj: LightTrajectory, offset_ratio: float, t):
    """Ideal profile of a normal at time(s) ``t``.

    With a positive offset the profile is 0 while the surface faces away from
    the light (the radiance is constant there); with no offset that case is
    undefined and raises :class:`DomainError`.
    """
    n = _as_vector(normal)
    t_arr = np.asarray(t, dtype=np.float64)
    ndl = traj.direction(t_arr) @ n
    ndd = traj.derivative(t_arr) @ n
    if offset_ratio <= 0 and np.any(ndl <= 0):
        raise DomainError("surface faces away from the light and no offset light is set")
    vals, _ = _ideal(ndl, ndd, offset_ratio)
    return float(vals) if vals.ndim == 0 else vals


def closed_form_circular(zenith_n: float, azimuth_n: float, traj: LightTrajectory,
                         offset_ratio: float = 0.0):
    """For a circular light, ``n.l(t) = A cos(w t + phi0 - azimuth_n) + B``.

    Returns ``(A, B, profile)`` where ``profile(t)`` is the ideal profile.
    """
    if traj.kind != "circular":
        raise ConfigurationError("closed form exists only for circular trajectories")
    A = math.sin(zenith_n) * math.sin(traj.zenith)
    B = math.cos(zenith_n) * math.cos(traj.zenith)
    w = traj.omega

    def profile(t):
        ph = w * np.asarray(t, dtype=np.float64) + traj.phase0 - azimuth_n
        ndl = A * np.cos(ph) + B
        ndd = -A * w * np.sin(ph)
        if offset_ratio > 0:
            return np.where(ndl > 0, ndd / (np.maximum(ndl, 0.0) + offset_ratio), 0.0)
        return ndd / ndl

    return A, B, profile


def _as_vector(normal) -> np.ndarray:
    if isinstance(normal, SurfaceNormal):
        return normal.vector
    return np.asarray(normal, dtype=np.float64).reshape(3)


def _weights(profile: Profile, mask: TemporalMask | np.ndarray | None) -> np.ndarray:
    if mask is None:
        m = np.ones(profile.n, dtype=bool)
    elif isinstance(mask, TemporalMask):
        m = mask.sample(profile.n)
    else:
        m = np.asarray(mask, dtype=bool)
    return profile.valid & m


def cost(normal, profile: Profile, mask: TemporalMask | None, traj: LightTrajectory,
         offset_ratio: float) -> float:
    """Mean squared residual between ideal and reconstructed profiles over
    valid, unmasked samples where the ideal profile is defined."""
    n = _as_vector(normal)
    t = profile.times
    w = _weights(profile, mask)
    ideal, support = _ideal(traj.direction(t) @ n, traj.derivative(t) @ n, offset_ratio)
    use = w & support
    M = int(use.sum())
    if M == 0:
        raise EmptySupportError("no samples left to compare")
    r = ideal[use] - profile.values[use]
    return float(np.mean(r * r))


# ---------------------------------------------------------------------------
# batched optimisation


class _Fitter:
    """Fits many profiles sampled at the same times against one trajectory."""

    def __init__(self, traj: LightTrajectory, period: float, n: int, cfg: SolverConfig):
        self.cfg = cfg
        self.t = np.arange(n) * (period / n)
        self.L = traj.direction(self.t)
        self.Ld = traj.derivative(self.t)
        self.eps = cfg.offset_ratio
        az = np.arange(cfg.grid_azimuth) * (2 * math.pi / cfg.grid_azimuth)
        zen = np.linspace(0.0, math.pi / 2, cfg.grid_zenith)
        ZZ, AA = np.meshgrid(zen, az, indexing="ij")
        self.grid_zen = ZZ.ravel()
        self.grid_az = AA.ravel()
        self.step_az = 2 * math.pi / cfg.grid_azimuth
        self.step_zen = (math.pi / 2) / (cfg.grid_zenith - 1)

    def _costs(self, zen, az, V, W):
        """Cost of candidates ``(zen, az)`` of shape (P, C) for each pixel row."""
        nrm = normal_from_angles(zen, az)                     # (P, C, 3)
        ndl = nrm @ self.L.T                                  # (P, C, N)
        ndd = nrm @ self.Ld.T
        ideal, support = _ideal(ndl, ndd, self.eps)
        use = support & W[:, None, :]
        r = np.where(use, ideal - V[:, None, :], 0.0)
        M = use.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.einsum("pcn,pcn->pc", r, r) / M
        return np.where(M > 0, c, np.inf), M

    def grid_search(self, V, W):
        nrm = normal_from_angles(self.grid_zen, self.grid_az)   # (C, 3)
        ideal, support = _ideal(nrm @ self.L.T, nrm @ self.Ld.T, self.eps)
        S = support.astype(np.float64)
        Wf = W.astype(np.float64)
        WV = Wf * V
        M = S @ Wf.T                                            # (C, P)
        num = (S * ideal ** 2) @ Wf.T - 2.0 * (S * ideal) @ WV.T + S @ (WV * V).T
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.maximum(num, 0.0) / M
        c = np.where(M > 0, c, np.inf)
        best = np.argmin(c, axis=0)
        P = V.shape[0]
        return self.grid_zen[best], self.grid_az[best], c[best, np.arange(P)]

    def refine(self, V, W, zen, az, c0, history: list | None = None):
        cfg = self.cfg
        P = len(zen)
        zen, az, cur = zen.copy(), az.copy(), c0.copy()
        s_az = np.full(P, self.step_az)
        s_zen = np.full(P, self.step_zen)
        active = np.isfinite(cur)
        half_pi = math.pi / 2
        if history is not None:
            history.append((cur.copy(), np.ones(P, dtype=bool)))
        for _ in range(cfg.refine_iters):
            a = np.flatnonzero(active)
            if not len(a):
                break
            # a zenith step below 0 crosses the pole to the opposite azimuth
            down = zen[a] - s_zen[a]
            cz = np.stack([zen[a], zen[a], np.minimum(zen[a] + s_zen[a], half_pi),
                           np.abs(down)], axis=1)
            ca = np.stack([az[a] + s_az[a], az[a] - s_az[a], az[a],
                           np.where(down < 0, az[a] + math.pi, az[a])], axis=1)
            c, _ = self._costs(cz, ca, V[a], W[a])
            k = np.argmin(c, axis=1)
            cbest = c[np.arange(len(a)), k]
            move = cbest < cur[a]
            mv = a[move]
            zen[mv] = cz[move, k[move]]
            az[mv] = np.mod(ca[move, k[move]], 2 * math.pi)
            cur[mv] = cbest[move]
            st = a[~move]
            s_az[st] *= 0.5
            s_zen[st] *= 0.5
            if history is not None:
                history.append((cur.copy(), np.isin(np.arange(P), mv)))
            active[st] = np.maximum(s_az[st], s_zen[st]) >= cfg.refine_tol
        return zen, az, cur

    def solve(self, V, W, history: list | None = None):
        """Returns normals (P, 3), costs (P,) and support counts (P,)."""
        V = np.where(W, np.nan_to_num(V), 0.0)
        zen, az, c = self.grid_search(V, W)
        zen, az, c = self.refine(V, W, zen, az, c, history)
        _, M = self._costs(zen[:, None], az[:, None], V, W)
        return normal_from_angles(zen, az), c, M[:, 0]


def solve_normal(profile: Profile, mask: TemporalMask | None, traj: LightTrajectory,
                 cfg: SolverConfig, *, label: MaskLabel = MaskLabel.COLLAPSED,
                 stage: int = 1) -> SolveResult:
    """Single-stage fit of one profile under one mask."""
    W = _weights(profile, mask)[None]
    if not W.any():
        raise UnsolvablePixelError("no valid unmasked samples")
    history: list = []
    fitter = _Fitter(traj, profile.period, profile.n, cfg)
    nrm, c, M = fitter.solve(profile.values[None], W, history)
    if not np.isfinite(c[0]):
        raise UnsolvablePixelError("the cost has empty support at every grid cell")
    # grid cost followed by the cost after every accepted move
    hist = tuple(float(c_it[0]) for c_it, moved in history if moved[0])
    return SolveResult(SurfaceNormal.from_vector(nrm[0]), float(c[0]), MaskLabel(label), stage,
                       int(M[0]), hist)


# ---------------------------------------------------------------------------
# full frame


@dataclass
class FrameResult:
    """Per-pixel outputs of :func:`solve_pixelwise`.

    ``labels`` holds a :class:`MaskLabel` value, ``LABEL_UNSOLVED`` or
    ``LABEL_ABSENT``. ``stage1_normals`` are the first-stage estimates before
    any outlier mask replaced the collapsed-event mask.
    """

    normals: np.ndarray
    costs: np.ndarray
    labels: np.ndarray
    stages: np.ndarray
    first_costs: np.ndarray
    stage1_normals: np.ndarray
    peaks: np.ndarray

    def __iter__(self):
        return iter((self.normals, self.costs, self.labels))


def pixel_profile(times, pols, h_p: float, h_n: float, period: float, cycle_starts,
                  n_samples: int) -> Profile:
    """Average of the per-cycle profiles whose cycles start at ``cycle_starts``."""
    return average_profiles(cycle_profiles(times, pols, h_p, h_n, period, cycle_starts, n_samples))


def solve_pixelwise(stream: EventStream, thresholds: PixelThresholds, traj: LightTrajectory,
                    cfg: SolverConfig, k_cycles: int, *, foreground: np.ndarray | None = None
                    ) -> FrameResult:
    """Two-stage profile fit for every pixel.

    Cycles ``1..k_cycles`` are averaged (the first recorded cycle is
    discarded). Stage 1 keeps the samples between the top and bottom peaks;
    pixels whose cost then exceeds ``cfg.mask_cfg.cost_threshold`` are refit
    under the specular or cast-shadow mask. Pixels that cannot be solved get
    ``LABEL_UNSOLVED`` and a zero normal.
    """
    H, W_ = stream.height, stream.width
    if thresholds.shape != (H, W_):
        raise ConfigurationError("threshold maps do not match the stream")
    normals = np.zeros((H, W_, 3))
    costs = np.full((H, W_), np.nan)
    first = np.full((H, W_), np.nan)
    labels = np.full((H, W_), LABEL_ABSENT, dtype=np.int64)
    stages = np.zeros((H, W_), dtype=np.int64)
    s1_normals = np.zeros((H, W_, 3))
    peaks = np.full((H, W_, 2), np.nan)

    per_pixel = stream.pixel_events()
    if foreground is None:
        fg = np.zeros((H, W_), dtype=bool)
        for (x, y) in per_pixel:
            fg[y, x] = True
    else:
        fg = np.asarray(foreground, dtype=bool)
    labels[fg] = LABEL_UNSOLVED
    if not fg.any():
        return FrameResult(normals, costs, labels, stages, first, s1_normals, peaks)

    if stream.n_cycles < k_cycles + 2:
        # too few cycles for any pixel: everything stays unsolved
        return FrameResult(normals, costs, labels, stages, first, s1_normals, peaks)
    T = traj.period
    starts = stream.cycle_syncs[1:k_cycles + 1]
    n = cfg.n_samples
    mcfg = cfg.mask_cfg

    pix, V, Wt, tpk = [], [], [], []
    empty = (np.zeros(0), np.zeros(0, np.int8))
    for y, x in zip(*np.nonzero(fg)):
        hp, hn = thresholds.at(x, y)
        if not (np.isfinite(hp) and np.isfinite(hn)):
            continue
        times, pols = per_pixel.get((x, y), empty)
        prof = pixel_profile(times, pols, hp, hn, T, starts, n)
        try:
            t_t, t_b = find_peaks(prof)
        except DegenerateProfileError:
            continue
        m = mask_collapsed(t_t, t_b, T).sample(n) & prof.valid
        if not m.any():
            continue
        pix.append((y, x))
        V.append(prof.values)
        Wt.append(prof.valid)
        tpk.append((t_t, t_b))
    if not pix:
        return FrameResult(normals, costs, labels, stages, first, s1_normals, peaks)

    ys, xs = np.array(pix).T
    V = np.array(V)
    valid = np.array(Wt)
    tpk = np.array(tpk)
    W1 = np.stack([mask_collapsed(tt, tb, T).sample(n) for tt, tb in tpk]) & valid
    fitter = _Fitter(traj, T, n, cfg)
    n1, c1, _ = fitter.solve(V, W1)
    ok1 = np.isfinite(c1)

    normals[ys[ok1], xs[ok1]] = n1[ok1]
    s1_normals[ys[ok1], xs[ok1]] = n1[ok1]
    costs[ys[ok1], xs[ok1]] = c1[ok1]
    first[ys[ok1], xs[ok1]] = c1[ok1]
    labels[ys[ok1], xs[ok1]] = MaskLabel.COLLAPSED
    stages[ys[ok1], xs[ok1]] = 1
    peaks[ys, xs] = tpk

    redo, W2 = [], []
    for i in np.flatnonzero(ok1 & (c1 > mcfg.cost_threshold)):
        tt, tb = tpk[i]
        lab = select_mask(float(c1[i]), tt, tb, mcfg, T)
        labels[ys[i], xs[i]] = lab
        try:
            w = build_mask(lab, tt, tb, mcfg, T).sample(n) & valid[i]
        except AllMaskedError:
            continue
        # too few inliers left: the refit is ill-conditioned, keep stage 1
        if w.sum() < cfg.min_inlier_fraction * n:
            continue
        redo.append(i)
        W2.append(w)
    if redo:
        redo = np.array(redo)
        n2, c2, _ = fitter.solve(V[redo], np.array(W2))
        for j, i in enumerate(redo):
            if not np.isfinite(c2[j]):
                continue
            y, x = ys[i], xs[i]
            normals[y, x] = n2[j]
            costs[y, x] = c2[j]
            stages[y, x] = 2
    return FrameResult(normals, costs, labels, stages, first, s1_normals, peaks)


def calibrate_cost_threshold(stream: EventStream, thresholds: PixelThresholds,
                             traj: LightTrajectory, cfg: SolverConfig, k_cycles: int = 1,
                             percentile: float = 95.0, foreground=None) -> float:
    """Percentile of first-stage costs on a reference (outlier-free) stream."""
    res = solve_pixelwise(stream, thresholds, traj, cfg, k_cycles, foreground=foreground)
    c = res.first_costs[np.isfinite(res.first_costs)]
    if not len(c):
        raise UnsolvablePixelError("no pixel could be solved on the reference stream")
    return float(np.percentile(c, percentile))


# ---------------------------------------------------------------------------
# null-space baseline


def eventps_rows(times, pols, h_p: float, h_n: float, traj: LightTrajectory) -> np.ndarray:
    """One row ``l(t_i) - exp(h_i) l(t_{i-1})`` per consecutive event pair."""
    t = np.asarray(times, dtype=np.float64)
    p = np.asarray(pols)
    if len(t) < 2:
        return np.zeros((0, 3))
    h = np.where(p[1:] > 0, h_p, h_n)
    L = traj.direction(t)
    return L[1:] - np.exp(h)[:, None] * L[:-1]


def eventps_baseline(times, pols, h_p: float, h_n: float, traj: LightTrajectory) -> SurfaceNormal:
    """Unit vector minimising ``|R n|`` over the stacked event-pair rows,
    oriented toward the camera."""
    R = eventps_rows(times, pols, h_p, h_n, traj)
    return SurfaceNormal.from_vector(_null_direction(R))


def _null_direction(R: np.ndarray) -> np.ndarray:
    if len(R) < 2:
        raise AmbiguousNormalError("need at least two event pairs")
    _, s, vt = np.linalg.svd(R, full_matrices=False)
    if s[0] == 0 or np.sum(s > s[0] * 1e-10) < 2:
        raise AmbiguousNormalError("event-pair rows have rank < 2")
    n = vt[-1]
    return -n if n[2] < 0 else n


def eventps_frame(stream: EventStream, thresholds: PixelThresholds, traj: LightTrajectory,
                  foreground: np.ndarray | None = None) -> np.ndarray:
    """Baseline normal map; zero vectors where the pixel is ambiguous or absent."""
    out = np.zeros((stream.height, stream.width, 3))
    for (x, y), (times, pols) in stream.pixel_events().items():
        if foreground is not None and not foreground[y, x]:
            continue
        hp, hn = thresholds.at(x, y)
        if not (np.isfinite(hp) and np.isfinite(hn)):
            continue
        try:
            out[y, x] = _null_direction(eventps_rows(times, pols, hp, hn, traj))
        except AmbiguousNormalError:
            pass
    return out


def apply_azimuth_offset(normal_map: np.ndarray, offset: float) -> np.ndarray:
    """Rotate every normal about the camera axis by ``offset`` radians."""
    if not abs(offset) < math.pi:
        raise ConfigurationError("|offset| must be < pi")
    n = np.asarray(normal_map, dtype=np.float64)
    c, s = math.cos(offset), math.sin(offset)
    out = n.copy()
    out[..., 0] = c * n[..., 0] - s * n[..., 1]
    out[..., 1] = s * n[..., 0] + c * n[..., 1]
    return out
