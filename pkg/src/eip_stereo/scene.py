"""Synthetic ground-truth scenes and their time-varying radiance.

Scene coordinates: pixel ``(x, y)`` has its centre at
``X = x + 0.5 - width/2``, ``Y = height/2 - (y + 0.5)`` (Y points up), and
``z`` points toward the orthographic camera. One scene unit is one pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import LightTrajectory
from .errors import ConfigurationError, DomainError

VIEW = np.array([0.0, 0.0, 1.0])
PRESETS = ("diffuse", "glossy", "pole", "two-tone")


@dataclass(frozen=True)
class Cylinder:
    """Vertical (z-aligned) occluder standing on the z = 0 plane."""

    center_x: float   # pixel column of the axis
    center_y: float   # pixel row of the axis
    radius: float
    height: float


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    normal_map: np.ndarray              # (H, W, 3); zeros on background
    albedo_map: np.ndarray              # (H, W)
    depth_map: np.ndarray               # (H, W) surface z, used for cast shadows
    light_power: float = 1.0
    offset_light: float = 0.0
    specular_strength: np.ndarray | None = None   # (H, W), default 0
    specular_exponent: np.ndarray | None = None   # (H, W), default 1
    occluders: tuple[Cylinder, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        H, W = self.height, self.width
        nm = np.array(self.normal_map, dtype=np.float64)
        if nm.shape != (H, W, 3):
            raise ConfigurationError("normal map must have shape (height, width, 3)")
        fg = np.linalg.norm(nm, axis=-1) > 0.5
        if np.any(np.abs(np.linalg.norm(nm[fg], axis=-1) - 1.0) > 1e-9):
            raise ConfigurationError("foreground normals must be unit vectors")
        alb = np.array(self.albedo_map, dtype=np.float64)
        if np.any((alb[fg] <= 0) | (alb[fg] > 1)):
            raise ConfigurationError("albedo must lie in (0, 1] on the foreground")
        if not self.light_power > 0 or self.offset_light < 0:
            raise ConfigurationError("need light_power > 0 and offset_light >= 0")
        ks = np.zeros((H, W)) if self.specular_strength is None else np.array(self.specular_strength, float)
        alpha = np.ones((H, W)) if self.specular_exponent is None else np.array(self.specular_exponent, float)
        if np.any(ks < 0) or np.any(alpha < 1):
            raise ConfigurationError("need specular_strength >= 0 and specular_exponent >= 1")
        for name, arr in (("normal_map", nm), ("albedo_map", alb),
                          ("depth_map", np.array(self.depth_map, float)),
                          ("specular_strength", ks), ("specular_exponent", alpha)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "occluders", tuple(self.occluders))

    @property
    def foreground(self) -> np.ndarray:
        return np.linalg.norm(self.normal_map, axis=-1) > 0.5

    def is_foreground(self, x: int, y: int) -> bool:
        return bool(0 <= x < self.width and 0 <= y < self.height and self.foreground[y, x])


def make_sphere_scene(resolution: int = 64, preset: str = "diffuse", *,
                      light_power: float = 1.0, offset_light: float = 0.0) -> SceneSpec:
    """Orthographic sphere filling most of a square image.

    Presets: ``diffuse`` (Lambertian, albedo 1), ``glossy`` (adds a Blinn
    lobe, k_s = 0.8, exponent 64), ``pole`` (diffuse plus a thin pole next to
    the rim that casts a moving shadow) and ``two-tone`` (albedo 0.9 on the
    upper half, 0.4 on the lower half).
    """
    if resolution < 16:
        raise ConfigurationError("resolution must be >= 16")
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown scene preset {preset!r}; choose from {PRESETS}")
    H = W = int(resolution)
    R = W / 2 - 1.0
    X, Y = pixel_to_scene(np.arange(W)[None, :], np.arange(H)[:, None], W, H)
    X, Y = np.broadcast_arrays(X, Y)
    r2 = (X ** 2 + Y ** 2) / R ** 2
    fg = r2 < 1.0
    Z = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    normals = np.where(fg[..., None], np.stack([X / R, Y / R, Z], axis=-1), 0.0)
    normals[fg] /= np.linalg.norm(normals[fg], axis=-1, keepdims=True)
    depth = np.where(fg, Z * R, 0.0)

    albedo = np.where(fg, 1.0, 0.0)
    ks = np.zeros((H, W))
    alpha = np.ones((H, W))
    occluders: tuple[Cylinder, ...] = ()
    if preset == "glossy":
        ks[fg] = 0.8
        alpha[fg] = 64.0
    elif preset == "pole":
        # thin pole just outside the rim, lower right
        ang = -math.pi / 6
        radius = 0.08 * R
        cx, cy = scene_to_pixel((R + radius) * math.cos(ang), (R + radius) * math.sin(ang), W, H)
        occluders = (Cylinder(cx, cy, radius, 1.5 * R),)
    elif preset == "two-tone":
        albedo = np.where(fg, np.where(Y > 0, 0.9, 0.4), 0.0)
    return SceneSpec(W, H, normals, albedo, depth, light_power, offset_light,
                     ks, alpha, occluders, name=preset)


def pixel_to_scene(x, y, width: int, height: int):
    return np.asarray(x) + 0.5 - width / 2, height / 2 - (np.asarray(y) + 0.5)


def scene_to_pixel(X, Y, width: int, height: int):
    return X - 0.5 + width / 2, height / 2 - Y - 0.5


class PixelBatch:
    """Flattened foreground pixels of a scene for vectorised rendering.

    ``radiance(idx, t)`` evaluates the radiance of foreground pixel ``idx[k]``
    at time ``t[k]`` (arrays broadcast together).
    """

    def __init__(self, scene: SceneSpec, traj: LightTrajectory, pixels=None):
        self.scene = scene
        self.traj = traj
        if pixels is None:
            ys, xs = np.nonzero(scene.foreground)
        else:
            xs, ys = (np.asarray(a, dtype=np.int64).reshape(-1) for a in pixels)
        self.xs, self.ys = xs, ys
        self.normals = scene.normal_map[ys, xs]
        self.albedo = scene.albedo_map[ys, xs]
        self.ks = scene.specular_strength[ys, xs]
        self.alpha = scene.specular_exponent[ys, xs]
        X, Y = pixel_to_scene(xs, ys, scene.width, scene.height)
        self.points = np.stack([X, Y, scene.depth_map[ys, xs]], axis=-1)
        self.has_specular = bool(np.any(self.ks > 0))
        cyl = []
        for c in scene.occluders:
            cx, cy = pixel_to_scene(c.center_x, c.center_y, scene.width, scene.height)
            cyl.append((float(cx), float(cy), c.radius, c.height))
        self.cylinders = cyl

    def __len__(self) -> int:
        return len(self.xs)

    def visibility(self, idx, light: np.ndarray) -> np.ndarray:
        """1.0 where the ray from the surface point toward ``light`` misses every occluder."""
        idx = np.asarray(idx)
        vis = np.ones(np.broadcast_shapes(idx.shape, light.shape[:-1]))
        if not self.cylinders:
            return vis
        P = self.points[idx]
        for cx, cy, rad, top in self.cylinders:
            blocked = ray_hits_cylinder(P, light, cx, cy, rad, top)
            vis = np.where(blocked, 0.0, vis)
        return vis

    def radiance(self, idx, t) -> np.ndarray:
        s = self.scene.light_power
        light = self.traj.direction(t)
        n = self.normals[idx]
        ndotl = np.sum(n * light, axis=-1)
        vis = self.visibility(idx, light)
        out = s * self.albedo[idx] * np.maximum(ndotl, 0.0)
        if self.has_specular:
            half = light + VIEW
            half /= np.linalg.norm(half, axis=-1, keepdims=True)
            hn = np.maximum(np.sum(half * n, axis=-1), 0.0)
            out = out + s * self.ks[idx] * hn ** self.alpha[idx]
        return out * vis + self.scene.offset_light

    def specular_term(self, idx, t) -> np.ndarray:
        light = self.traj.direction(t)
        half = light + VIEW
        half /= np.linalg.norm(half, axis=-1, keepdims=True)
        n = self.normals[idx]
        hn = np.maximum(np.sum(half * n, axis=-1), 0.0)
        return self.scene.light_power * self.ks[idx] * hn ** self.alpha[idx] * self.visibility(idx, light)

    def diffuse_term(self, idx, t) -> np.ndarray:
        light = self.traj.direction(t)
        ndotl = np.sum(self.normals[idx] * light, axis=-1)
        return (self.scene.light_power * self.albedo[idx] * np.maximum(ndotl, 0.0)
                * self.visibility(idx, light))


def ray_hits_cylinder(P: np.ndarray, d: np.ndarray, cx: float, cy: float,
                      radius: float, top: float) -> np.ndarray:
    """Does the ray ``P + s d`` (s > 0) pass through the cylinder
    ``(x-cx)^2 + (y-cy)^2 <= radius^2``, ``0 <= z <= top``?"""
    px = P[..., 0] - cx
    py = P[..., 1] - cy
    pz = P[..., 2]
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    a = dx * dx + dy * dy
    b = 2.0 * (px * dx + py * dy)
    c = px * px + py * py - radius * radius
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 1e-15)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    a_safe = np.where(a > 1e-15, a, 1.0)
    s_in = (-b - sq) / (2.0 * a_safe)
    s_out = (-b + sq) / (2.0 * a_safe)
    s_lo = np.maximum(s_in, 0.0)
    ok &= s_out > 0
    # z along the ray grows when dz > 0; test the overlap with [0, top]
    z_lo = pz + s_lo * dz
    z_hi = pz + s_out * dz
    ok &= (np.minimum(z_lo, z_hi) <= top) & (np.maximum(z_lo, z_hi) >= 0.0)
    return ok


def render_radiance(scene: SceneSpec, pixel: tuple[int, int], traj: LightTrajectory, t):
    """Radiance of one foreground pixel at time(s) ``t``.

    ``s*rho*max(n.l, 0)*V + s*k_s*max(h.n, 0)**alpha*V + L_offset`` with the
    Blinn half vector ``h`` and binary cast-shadow visibility ``V``.
    """
    x, y = pixel
    if not scene.is_foreground(x, y):
        raise DomainError(f"pixel {pixel} is background")
    batch = PixelBatch(scene, traj, ([x], [y]))
    t_arr = np.asarray(t, dtype=np.float64)
    out = batch.radiance(np.zeros(t_arr.shape, dtype=np.int64), t_arr)
    return float(out) if out.ndim == 0 else out
