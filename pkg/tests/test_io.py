import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eip_stereo.core_types import EventStream, PixelThresholds
from eip_stereo.errors import ConfigurationError, ParseError
from eip_stereo.io import (RunConfig, angular_error, evaluate_mae, read_events, read_pfm,
                           read_thresholds, write_events, write_pfm, write_thresholds)


def random_stream(rng, n, w=640, h=480, cycles=4):
    t = np.sort(rng.integers(0, cycles * 10**9, n)) * 1e-9
    return EventStream(w, h, rng.integers(0, w, n), rng.integers(0, h, n), t,
                       rng.choice([-1, 1], n), np.arange(cycles + 1) * 1.0)


class TestEvents:
    def test_text_line(self, tmp_path):
        s = EventStream(8, 8, [3], [4], [0.5], [1], [0.0, 1.0])
        path = tmp_path / "ev.txt"
        write_events(path, s)
        assert path.read_text().splitlines() == ["x,y,t_us,p", "3,4,500000,1"]
        assert (tmp_path / "ev.txt.sync").read_text().splitlines() == ["# sensor 8 8", "0", "1000000"]

    @pytest.mark.parametrize("name", ["ev.txt", "ev.bin"])
    def test_empty_roundtrip(self, tmp_path, name):
        s = EventStream.empty(5, 7, [0.0, 2.0])
        write_events(tmp_path / name, s)
        back = read_events(tmp_path / name)
        assert back == s and (back.width, back.height) == (5, 7)

    def test_binary_header(self, tmp_path):
        write_events(tmp_path / "e.bin", EventStream.empty(5, 7))
        assert (tmp_path / "e.bin").read_bytes() == b"EVT1" + (5).to_bytes(4, "little") + \
            (7).to_bytes(4, "little") + (0).to_bytes(8, "little")

    def test_binary_large_roundtrip(self, tmp_path, rng):
        s = random_stream(rng, 100_000)
        write_events(tmp_path / "a.bin", s)
        back = read_events(tmp_path / "a.bin")
        assert back == s
        write_events(tmp_path / "b.bin", back)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_text_roundtrip_at_microseconds(self, tmp_path, rng):
        s = random_stream(rng, 2000, 32, 32)
        q = EventStream(32, 32, s.x, s.y, np.round(s.t * 1e6) * 1e-6, s.p, s.cycle_syncs)
        write_events(tmp_path / "e.txt", s)
        assert read_events(tmp_path / "e.txt") == q

    def test_cross_format(self, tmp_path, rng):
        s = random_stream(rng, 3000, 32, 32)
        write_events(tmp_path / "e.txt", s)
        via_text = read_events(tmp_path / "e.txt")
        write_events(tmp_path / "e.bin", via_text)
        via_bin = read_events(tmp_path / "e.bin")
        np.testing.assert_array_equal(np.round(via_bin.t * 1e6), np.round(via_text.t * 1e6))
        assert np.array_equal(via_bin.x, via_text.x) and np.array_equal(via_bin.p, via_text.p)

    def test_bad_header(self, tmp_path):
        (tmp_path / "e.txt").write_text("x,y,t,p\n1,2,3,1\n")
        with pytest.raises(ParseError, match="line 1"):
            read_events(tmp_path / "e.txt")

    def test_unsorted(self, tmp_path):
        (tmp_path / "e.txt").write_text("x,y,t_us,p\n1,2,30,1\n1,2,40,1\n1,2,20,-1\n")
        with pytest.raises(ParseError, match="line 4"):
            read_events(tmp_path / "e.txt")

    def test_malformed_line(self, tmp_path):
        (tmp_path / "e.txt").write_text("x,y,t_us,p\n1,2,30,1\n1,2,x,1\n")
        with pytest.raises(ParseError, match="line 3"):
            read_events(tmp_path / "e.txt")

    def test_bad_polarity(self, tmp_path):
        (tmp_path / "e.txt").write_text("x,y,t_us,p\n1,2,30,0\n")
        with pytest.raises(ParseError, match="line 2"):
            read_events(tmp_path / "e.txt")

    def test_out_of_range(self, tmp_path):
        s = EventStream(8, 8, [3, 7], [4, 7], [0.5, 0.6], [1, 1])
        write_events(tmp_path / "e.txt", s)
        (tmp_path / "e.txt.sync").write_text("# sensor 6 6\n")
        with pytest.raises(ParseError, match="line 3"):
            read_events(tmp_path / "e.txt")

    def test_binary_errors(self, tmp_path, rng):
        s = random_stream(rng, 10, 8, 8)
        write_events(tmp_path / "e.bin", s)
        data = bytearray((tmp_path / "e.bin").read_bytes())
        (tmp_path / "t.bin").write_bytes(bytes(data[:-3]))
        with pytest.raises(ParseError, match="records"):
            read_events(tmp_path / "t.bin")
        bad = bytearray(data)
        bad[0:4] = b"EVT2"
        (tmp_path / "m.bin").write_bytes(bytes(bad))
        with pytest.raises(ParseError, match="magic"):
            read_events(tmp_path / "m.bin")
        bad = bytearray(data)
        bad[20 + 14 * 3] = 9  # x of record 3 (records are 14 bytes)
        bad[20 + 14 * 3 + 1] = 0
        (tmp_path / "r.bin").write_bytes(bytes(bad))
        with pytest.raises(ParseError, match="record 3"):
            read_events(tmp_path / "r.bin")


class TestPFM:
    def test_scalar(self, tmp_path):
        write_pfm(tmp_path / "a.pfm", np.array([[2.0]]))
        assert (tmp_path / "a.pfm").read_bytes() == b"Pf\n1 1\n-1.0\n" + np.float32(2.0).tobytes()
        assert read_pfm(tmp_path / "a.pfm")[0, 0] == 2.0

    def test_normal_map(self, tmp_path, rng):
        m = rng.normal(size=(2, 2, 3))
        m /= np.linalg.norm(m, axis=-1, keepdims=True)
        write_pfm(tmp_path / "n.pfm", m)
        back = read_pfm(tmp_path / "n.pfm")
        np.testing.assert_array_equal(back, m.astype(np.float32))
        assert np.all(np.abs(back - m) <= np.spacing(np.float32(1.0)))

    def test_rows_bottom_to_top(self, tmp_path):
        write_pfm(tmp_path / "r.pfm", np.array([[1.0, 2.0], [3.0, 4.0]]))
        body = np.frombuffer((tmp_path / "r.pfm").read_bytes()[-16:], "<f4")
        np.testing.assert_array_equal(body, [3, 4, 1, 2])

    def test_background_distinct(self, tmp_path):
        m = np.zeros((1, 2, 3))
        m[0, 1] = [0, 0, 1]
        write_pfm(tmp_path / "b.pfm", m)
        nrm = np.linalg.norm(read_pfm(tmp_path / "b.pfm"), axis=-1)
        assert nrm[0, 0] == 0 and nrm[0, 1] == 1

    def test_big_endian_read(self, tmp_path):
        (tmp_path / "be.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + np.array([1.5, -2], ">f4").tobytes())
        np.testing.assert_array_equal(read_pfm(tmp_path / "be.pfm"), [[1.5, -2]])

    @pytest.mark.parametrize("data", [b"P6\n1 1\n-1.0\n" + bytes(4), b"Pf\n1 1\n0.0\n" + bytes(4),
                                      b"Pf\n1 x\n-1.0\n" + bytes(4), b"Pf\n2 2\n-1.0\n" + bytes(4)])
    def test_bad_files(self, tmp_path, data):
        (tmp_path / "x.pfm").write_bytes(data)
        with pytest.raises(ParseError):
            read_pfm(tmp_path / "x.pfm")

    def test_bad_shape(self, tmp_path):
        with pytest.raises(ConfigurationError):
            write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 9), st.integers(1, 9), st.booleans(), st.integers(0, 2**31 - 1))
    def test_roundtrip_property(self, tmp_path_factory, w, h, color, seed):
        img = np.random.default_rng(seed).normal(size=(h, w, 3) if color else (h, w))
        path = tmp_path_factory.mktemp("pfm") / "p.pfm"
        write_pfm(path, img)
        np.testing.assert_array_equal(read_pfm(path), img.astype(np.float32))

    def test_thresholds(self, tmp_path):
        th = PixelThresholds(np.array([[0.05, np.nan]]), np.array([[-0.04, -0.06]]))
        write_thresholds(tmp_path / "cal", th)
        back = read_thresholds(tmp_path / "cal")
        np.testing.assert_array_equal(back.valid, th.valid)
        np.testing.assert_allclose(back.h_n, th.h_n.astype(np.float32))


class TestRunConfig:
    def test_roundtrip(self, tmp_path):
        cfg = RunConfig(scene="glossy", noise_sigma=0.03, cost_threshold=0.0123, cycles=6,
                        average_cycles=4)
        cfg.save(tmp_path / "run.cfg")
        assert RunConfig.load(tmp_path / "run.cfg") == cfg

    def test_every_key_written(self):
        text = RunConfig().to_text()
        assert [l.split(" = ")[0] for l in text.splitlines()] == RunConfig.keys()

    def test_unknown_key(self):
        with pytest.raises(ParseError, match="unknown key"):
            RunConfig.from_text(RunConfig().to_text() + "colour = red\n")

    def test_missing_key(self):
        text = "".join(l + "\n" for l in RunConfig().to_text().splitlines() if not l.startswith("seed"))
        with pytest.raises(ParseError, match="seed"):
            RunConfig.from_text(text)

    def test_duplicate_key(self):
        with pytest.raises(ParseError, match="duplicate"):
            RunConfig.from_text(RunConfig().to_text() + "seed = 3\n")

    def test_bad_value(self):
        text = RunConfig().to_text().replace("resolution = 64", "resolution = big")
        with pytest.raises(ParseError, match="resolution"):
            RunConfig.from_text(text)

    def test_comments(self):
        text = "# run\n" + RunConfig().to_text().replace("seed = 0", "seed = 5  # fixed")
        assert RunConfig.from_text(text).seed == 5

    def test_cycles_rule(self):
        with pytest.raises(ConfigurationError):
            RunConfig(cycles=3, average_cycles=2)

    def test_builders(self):
        cfg = RunConfig(light_zenith_deg=30.0, cost_threshold=0.01, min_inlier_fraction=0.25)
        assert cfg.trajectory().zenith == pytest.approx(math.pi / 6)
        sc = cfg.solver_config()
        assert sc.mask_cfg.cost_threshold == 0.01 and sc.min_inlier_fraction == 0.25
        th = cfg.pixel_thresholds(4, 3)
        assert th.shape == (3, 4) and cfg.circuit_config(th).thresholds is th

    def test_threshold_prefix(self, tmp_path):
        write_thresholds(tmp_path / "cal", PixelThresholds.uniform(4, 3, 0.07, -0.06))
        cfg = RunConfig(thresholds="cal")
        assert cfg.pixel_thresholds(4, 3, tmp_path).h_p[0, 0] == pytest.approx(0.07)
        with pytest.raises(ConfigurationError):
            cfg.pixel_thresholds(5, 3, tmp_path)


class TestMAE:
    def test_identical(self, rng):
        m = rng.normal(size=(4, 4, 3))
        m /= np.linalg.norm(m, axis=-1, keepdims=True)
        rep = evaluate_mae(m, m, np.ones((4, 4), bool))
        assert rep.mae == pytest.approx(0.0, abs=1e-5)

    def test_five_degrees(self):
        truth = np.broadcast_to([0.0, 0, 1], (3, 3, 3))
        r = math.radians(5)
        res = np.broadcast_to([0.0, math.sin(r), math.cos(r)], (3, 3, 3))
        assert evaluate_mae(res, truth, np.ones((3, 3), bool)).mae == pytest.approx(5.0)

    def test_azimuth_rotation_oracle(self, rng):
        zen = rng.uniform(0.05, 1.5, (5, 5))
        az = rng.uniform(0, 2 * math.pi, (5, 5))
        d = 0.3
        st_ = np.sin(zen)
        truth = np.stack([st_ * np.cos(az), st_ * np.sin(az), np.cos(zen)], -1)
        res = np.stack([st_ * np.cos(az + d), st_ * np.sin(az + d), np.cos(zen)], -1)
        rep = evaluate_mae(res, truth, np.ones((5, 5), bool))
        expect = np.degrees(np.arccos(np.cos(zen) ** 2 + np.sin(zen) ** 2 * math.cos(d)))
        np.testing.assert_allclose(rep.error_map, expect, atol=1e-6)

    def test_sentinels_counted(self):
        truth = np.broadcast_to([0.0, 0, 1], (2, 2, 3)).copy()
        res = truth.copy()
        res[0, 0] = 0
        fg = np.ones((2, 2), bool)
        fg[1, 1] = False
        rep = evaluate_mae(res, truth, fg)
        assert rep.n_sentinel == 1 and rep.n_evaluated == 2
        assert "sentinel = 1" in rep.summary()

    def test_empty_mask(self):
        with pytest.raises(ConfigurationError):
            evaluate_mae(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((2, 2), bool))

    def test_clamped_dot(self):
        a = np.array([[0.0, 0.0, 1.0]])
        assert angular_error(a, a * (1 + 1e-12))[0] == 0.0
