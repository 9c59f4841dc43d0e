"""End-to-end acceptance checks on synthetic fixtures, one test per criterion."""
import math
import time

import numpy as np
import pytest

from eip_stereo.calib import estimate_thresholds, simulate_ramp_stream
from eip_stereo.circuit import CircuitConfig, simulate_pixel_events, simulate_stream
from eip_stereo.cli import main
from eip_stereo.core_types import LightTrajectory, PixelThresholds, SurfaceNormal, normal_from_angles
from eip_stereo.eip import find_peaks
from eip_stereo.io import RunConfig, angular_error, evaluate_mae
from eip_stereo.masks import MaskConfig, MaskLabel, mask_collapsed
from eip_stereo.normal_solver import (SolverConfig, calibrate_cost_threshold, closed_form_circular,
                                      cost, eventps_frame, pixel_profile, solve_pixelwise)
from eip_stereo.scene import PixelBatch, make_sphere_scene

RES = 64
N = 256
DENSE = np.arange(1024) / 1024


def traj(zenith_deg: float) -> LightTrajectory:
    return LightTrajectory.circular(math.radians(zenith_deg), 1.0)


def uniform(h: float, res: int = RES) -> PixelThresholds:
    return PixelThresholds.uniform(res, res, h, -h)


def over_time(batch: PixelBatch, fn) -> np.ndarray:
    """``fn(idx, t)`` for every foreground pixel at each dense time, shape ``(P, 1024)``."""
    idx = np.arange(len(batch))
    return np.stack([fn(idx, np.full(len(batch), t)) for t in DENSE], axis=1)


def outlier_fixture(preset: str, zenith_deg: float, eps: float, h: float, dead_time: float):
    """Solve ``preset`` with a cost threshold calibrated on its diffuse twin."""
    tr = traj(zenith_deg)
    th = uniform(h)
    cc = CircuitConfig(thresholds=th, dead_time=dead_time)
    twin = make_sphere_scene(RES, "diffuse", offset_light=eps)
    c = calibrate_cost_threshold(simulate_stream(twin, tr, 3, cc), th, tr,
                                 SolverConfig(offset_ratio=eps), 1, foreground=twin.foreground)
    scene = make_sphere_scene(RES, preset, offset_light=eps)
    stream = simulate_stream(scene, tr, 3, cc)
    cfg = SolverConfig(offset_ratio=eps, mask_cfg=MaskConfig(cost_threshold=c))
    res = solve_pixelwise(stream, th, tr, cfg, 1, foreground=scene.foreground)
    return tr, th, scene, stream, res, c


@pytest.fixture(scope="module")
def lambertian_pair():
    """Uniform and two-tone spheres without offset light, fine thresholds."""
    tr = traj(45)
    th = uniform(0.0125)
    cc = CircuitConfig(thresholds=th, logamp_floor=1e-6)
    cfg = SolverConfig(offset_ratio=0.0)
    out = {}
    for preset in ("diffuse", "two-tone"):
        scene = make_sphere_scene(RES, preset)
        stream = simulate_stream(scene, tr, 3, cc)
        out[preset] = (scene, stream, solve_pixelwise(stream, th, tr, cfg, 1,
                                                      foreground=scene.foreground))
    normals = out["diffuse"][0].normal_map
    lit = normals @ tr.direction(DENSE).T
    never_shadowed = out["diffuse"][0].foreground & (lit.min(axis=-1) > 1e-9)
    return tr, th, out, never_shadowed


def test_clean_roundtrip(report):
    tr = traj(45)
    th = uniform(0.05)
    scene = make_sphere_scene(RES, "diffuse", offset_light=0.1)
    t0 = time.process_time()
    stream = simulate_stream(scene, tr, 3, CircuitConfig(thresholds=th))
    res = solve_pixelwise(stream, th, tr, SolverConfig(offset_ratio=0.1), 1,
                          foreground=scene.foreground)
    elapsed = time.process_time() - t0
    mae = evaluate_mae(res.normals, scene.normal_map, scene.foreground).mae
    ok = mae < 1.0 and elapsed < 120.0
    assert report("clean roundtrip", ok, f"MAE {mae:.3f} deg (< 1.0), {elapsed:.1f} s (< 120)")


def test_albedo_invariance(report, lambertian_pair):
    _, _, out, never = lambertian_pair
    a = out["diffuse"][2]
    b = out["two-tone"][2]
    solved = (a.labels >= 0) & (b.labels >= 0)
    err = angular_error(a.normals[never & solved], b.normals[never & solved])
    missing = int((never & ~solved).sum())
    ok = missing == 0 and err.max() < 0.1
    assert report("albedo invariance", ok,
                  f"max disagreement {err.max():.2e} deg over {err.size} pixels (< 0.1), "
                  f"{missing} unsolved")


def test_specular_robustness(report):
    tr, th, scene, stream, res, c = outlier_fixture("glossy", 30, 1.0, 0.00625, 0.0)
    fg = scene.foreground
    batch = PixelBatch(scene, tr)
    peak_diffuse = over_time(batch, batch.diffuse_term).max(axis=1)
    affected = over_time(batch, batch.specular_term).max(axis=1) > 0.1 * peak_diffuse
    labels = res.labels[fg]
    frac = float(np.mean(labels[affected] == MaskLabel.SPECULAR))
    masked = evaluate_mae(res.normals, scene.normal_map, fg).mae
    unmasked = evaluate_mae(res.stage1_normals, scene.normal_map, fg).mae
    base = evaluate_mae(eventps_frame(stream, th, tr, fg), scene.normal_map, fg).mae
    ok = frac >= 0.9 and masked < unmasked and masked < base
    assert report("specular robustness", ok,
                  f"specular label on {frac:.1%} of {int(affected.sum())} affected pixels (>= 90%), "
                  f"masked {masked:.2f} < unmasked {unmasked:.2f} and baseline {base:.2f} deg")


def test_cast_shadow_robustness(report):
    tr, th, scene, stream, res, c = outlier_fixture("pole", 45, 0.1, 0.05, 5e-4)
    fg = scene.foreground
    batch = PixelBatch(scene, tr)
    light = tr.direction(DENSE)
    vis = np.stack([batch.visibility(np.arange(len(batch)), np.broadcast_to(l, (len(batch), 3)))
                    for l in light], axis=1)
    crossing = (vis == 0).any(axis=1)
    frac = float(np.mean(res.labels[fg][crossing] == MaskLabel.CAST))
    masked = evaluate_mae(res.normals, scene.normal_map, fg).mae
    unmasked = evaluate_mae(res.stage1_normals, scene.normal_map, fg).mae
    ok = masked < unmasked and frac >= 0.9
    assert report("cast-shadow robustness", ok,
                  f"masked {masked:.2f} < unmasked {unmasked:.2f} deg, cast label on {frac:.1%} "
                  f"of {int(crossing.sum())} shadow-crossing pixels (>= 90%)")


def test_averaging_trend(report):
    tr = traj(45)
    th = uniform(0.05)
    scene = make_sphere_scene(RES, "diffuse", offset_light=0.1)
    stream = simulate_stream(scene, tr, 18, CircuitConfig(thresholds=th, noise_sigma=0.03,
                                                           rng_seed=7))
    mae = {}
    for K in (1, 4, 16):
        res = solve_pixelwise(stream, th, tr, SolverConfig(offset_ratio=0.1), K,
                              foreground=scene.foreground)
        mae[K] = evaluate_mae(res.normals, scene.normal_map, scene.foreground).mae
    gaps = (1 - mae[4] / mae[1], 1 - mae[16] / mae[4])
    ok = min(gaps) > 0.05
    assert report("averaging trend", ok,
                  f"MAE K=1 {mae[1]:.2f}, K=4 {mae[4]:.2f}, K=16 {mae[16]:.2f} deg, "
                  f"relative gaps {gaps[0]:.1%} and {gaps[1]:.1%} (> 5%)")


def test_eip_oracle(report):
    tr = traj(45)
    zen, az = math.radians(40), math.radians(123)
    n = normal_from_angles(zen, az)
    _, _, analytic = closed_form_circular(zen, az, tr, 0.1)
    f = lambda t: np.maximum(tr.direction(t) @ n, 0.0) + 0.1
    sup = []
    for h in (0.1, 0.05, 0.025):
        t, p = simulate_pixel_events(f, CircuitConfig(None), h, -h, 0.0, 3.0, period=1.0)
        prof = pixel_profile(t, p, h, -h, 1.0, [1.0], N)
        t_top, t_bottom = find_peaks(prof)
        s = prof.times
        dist = lambda a: np.minimum(np.abs(s - a) % 1.0, 1.0 - np.abs(s - a) % 1.0)
        use = prof.valid & (dist(t_top) >= 1 / 8) & (dist(t_bottom) >= 1 / 8)
        sup.append(float(np.abs(prof.values[use] - analytic(s[use])).max()))
    ok = sup[0] > sup[1] > sup[2]
    assert report("EIP oracle", ok,
                  "sup error h=0.1 {:.3f}, h=0.05 {:.3f}, h=0.025 {:.3f} (decreasing)".format(*sup))


def test_threshold_calibration(report):
    th = PixelThresholds.uniform(8, 8, 0.08, -0.08)
    stream = simulate_ramp_stream(8, 8, 6.0, 10, CircuitConfig(thresholds=th))
    est = estimate_thresholds(stream, 6.0, 10)
    rel = max(float(np.abs(est.h_p / 0.08 - 1).max()), float(np.abs(est.h_n / -0.08 - 1).max()))
    ok = rel < 0.05
    assert report("threshold calibration", ok, f"worst relative error {rel:.2%} (< 5%)")


def test_baseline_correctness(report, lambertian_pair):
    tr, th, out, never = lambertian_pair
    scene, stream, res = out["diffuse"]
    base = eventps_frame(stream, th, tr, scene.foreground)
    solved = res.labels >= 0
    err = angular_error(base[never & solved], res.normals[never & solved])
    missing = int((never & ~solved).sum())
    ok = missing == 0 and err.max() < 1.0
    assert report("baseline correctness", ok,
                  f"max disagreement {err.max():.3f} deg over {err.size} pixels (< 1), "
                  f"{missing} unsolved")


def test_gradient_check(report):
    tr = traj(45)
    scene = make_sphere_scene(16, "diffuse", offset_light=0.1)
    th = uniform(0.05, 16)
    stream = simulate_stream(scene, tr, 3, CircuitConfig(thresholds=th))
    t, p = stream.pixel_events()[(10, 6)]
    prof = pixel_profile(t, p, 0.05, -0.05, 1.0, stream.cycle_syncs[1:2], N)
    mask = mask_collapsed(*find_peaks(prof), 1.0)

    def f(az, zen):
        return cost(SurfaceNormal.from_angles(zen, az), prof, mask, tr, 0.1)

    def grad(az, zen, e):
        return np.array([(f(az + e, zen) - f(az - e, zen)) / (2 * e),
                         (f(az, zen + e) - f(az, zen - e)) / (2 * e)])

    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        az, zen = rng.uniform(0, 2 * math.pi), rng.uniform(0.05, 0.7)
        g1, g2 = grad(az, zen, 1e-4), grad(az, zen, 1e-5)
        worst = max(worst, float(np.linalg.norm(g1 - g2) / max(np.linalg.norm(g1), 1e-12)))
    ok = worst < 1e-3
    assert report("gradient check", ok, f"worst relative step-size gap {worst:.2e} (< 1e-3)")


def test_determinism(report, tmp_path):
    def pipeline(d):
        d.mkdir()
        RunConfig(resolution=32, noise_sigma=0.01, seed=42).save(d / "run.cfg")
        cfg, ev = str(d / "run.cfg"), str(d / "ev.bin")
        steps = (["simulate", "--config", cfg, "--out", ev, "--truth", str(d / "gt.pfm")],
                 ["solve", "--config", cfg, "--events", ev, "--out-dir", str(d / "out")],
                 ["baseline", "--config", cfg, "--events", ev, "--out", str(d / "base.pfm")],
                 ["eval", "--result", str(d / "out" / "normals.pfm"), "--truth", str(d / "gt.pfm"),
                  "--out-dir", str(d / "eval")])
        for argv in steps:
            assert main(argv) == 0
        return {str(f.relative_to(d)): f.read_bytes() for f in sorted(d.rglob("*")) if f.is_file()}

    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    differ = sorted(k for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differ
    assert report("determinism", ok, f"{len(a)} output files compared, {len(differ)} differ")
