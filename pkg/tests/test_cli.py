import subprocess
import sys

import numpy as np
import pytest

from cfmw_kit.cli import main
from cfmw_kit.fusion import count_ops
from cfmw_kit.imageio import write_ppm


def _clean_image(h=32, w=32):
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.rint(yy * 255.0 / (h - 1))
    g = np.rint(xx * 255.0 / (w - 1))
    b = ((yy + xx) % 16) * 12.0
    return np.stack([r, g, b], axis=2).astype(np.float64)


@pytest.fixture
def clean_ppm(tmp_path):
    path = tmp_path / "clean.ppm"
    write_ppm(path, _clean_image())
    return path


def _run(*argv):
    return main([str(a) for a in argv])


class TestSchedule:
    def test_rows_and_endpoints(self, tmp_path):
        assert _run("schedule", "--kind", "linear", "--t-count", 100,
                    "--out", tmp_path) == 0
        lines = (tmp_path / "schedule.csv").read_text().splitlines()
        assert lines[0] == "t,beta,alpha,alpha_bar"
        assert len(lines) == 101
        assert lines[1].startswith("1,0.001,")
        assert lines[-1].split(",")[1] == "0.02"

    def test_alpha_bar_decreasing(self, tmp_path):
        _run("schedule", "--kind", "cosine", "--t-count", 50, "--out", tmp_path)
        rows = (tmp_path / "schedule.csv").read_text().splitlines()[1:]
        abars = [float(r.split(",")[3]) for r in rows]
        assert all(b < a for a, b in zip(abars, abars[1:]))

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        _run("schedule", "--t-count", 20, "--out", a)
        _run("schedule", "--t-count", 20, "--out", b)
        assert (a / "schedule.csv").read_bytes() == (b / "schedule.csv").read_bytes()

    def test_bad_bounds_exit_code(self, tmp_path, capsys):
        code = _run("schedule", "--beta-start", 0.5, "--beta-end", 0.1,
                    "--out", tmp_path)
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestSynth:
    def test_fog_beta_zero_identity(self, tmp_path, clean_ppm):
        out = tmp_path / "out"
        assert _run("synth", "--input", clean_ppm, "--weather", "fog",
                    "--beta", 0.0, "--out", out) == 0
        degraded = out / "clean_fog.ppm"
        assert degraded.read_bytes() == clean_ppm.read_bytes()

    def test_deterministic_rerun(self, tmp_path, clean_ppm):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            _run("synth", "--input", clean_ppm, "--weather", "rain",
                 "--density", 0.01, "--seed", 7, "--out", out)
        assert (a / "clean_rain.ppm").read_bytes() == (b / "clean_rain.ppm").read_bytes()
        assert (a / "synth_manifest.txt").read_bytes() \
            == (b / "synth_manifest.txt").read_bytes()

    def test_manifest_line_per_image(self, tmp_path):
        imgs = []
        for i in range(3):
            p = tmp_path / f"img{i}.ppm"
            write_ppm(p, _clean_image(16, 16))
            imgs.append(p)
        out = tmp_path / "out"
        assert _run("synth", "--input", *imgs, "--weather", "snow",
                    "--density", 0.02, "--out", out) == 0
        lines = (out / "synth_manifest.txt").read_text().splitlines()
        assert len(lines) == 3
        assert all("weather=snow" in ln and "clean=" in ln for ln in lines)

    def test_weather_changes_pixels(self, tmp_path, clean_ppm):
        out = tmp_path / "out"
        _run("synth", "--input", clean_ppm, "--weather", "fog", "--beta", 0.8,
             "--depth-mode", "radial", "--max-depth", 3.0, "--out", out)
        assert (out / "clean_fog.ppm").read_bytes() != clean_ppm.read_bytes()

    def test_unreadable_input(self, tmp_path, capsys):
        code = _run("synth", "--input", tmp_path / "missing.ppm",
                    "--weather", "fog", "--out", tmp_path)
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestRestore:
    def test_oracle_round_trip(self, tmp_path, clean_ppm):
        out = tmp_path / "out"
        _run("synth", "--input", clean_ppm, "--weather", "fog", "--beta", 0.5,
             "--out", out)
        degraded = out / "clean_fog.ppm"
        assert _run("restore", "--input", degraded, "--predictor", "oracle",
                    "--clean", clean_ppm, "--out", out) == 0
        restored = out / "clean_fog_restored.ppm"
        assert restored.read_bytes() == clean_ppm.read_bytes()
        residuals = (out / "clean_fog_residuals.csv").read_text().splitlines()
        assert residuals[0] == "t,t_prev,update_l2"
        assert len(residuals) == 51  # 50 sampling steps
        assert residuals[-1].startswith("1,0,")

    def test_single_step(self, tmp_path, clean_ppm):
        out = tmp_path / "out"
        _run("synth", "--input", clean_ppm, "--weather", "fog", "--beta", 0.5,
             "--out", out)
        assert _run("restore", "--input", out / "clean_fog.ppm",
                    "--predictor", "oracle", "--clean", clean_ppm,
                    "--steps", 1, "--out", out) == 0
        rows = (out / "clean_fog_residuals.csv").read_text().splitlines()
        assert len(rows) == 2 and rows[1].startswith("1000,0,")

    def test_tinymlp_smoke_deterministic(self, tmp_path, clean_ppm):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert _run("restore", "--input", clean_ppm, "--predictor", "tinymlp",
                        "--steps", 5, "--t-count", 50, "--out", out) == 0
        assert (a / "clean_restored.ppm").read_bytes() \
            == (b / "clean_restored.ppm").read_bytes()

    def test_oracle_requires_clean(self, tmp_path, clean_ppm, capsys):
        code = _run("restore", "--input", clean_ppm, "--predictor", "oracle",
                    "--out", tmp_path)
        assert code == 1
        assert "clean" in capsys.readouterr().err


class TestFuse:
    def test_zero_images_zero_stats(self, tmp_path):
        zero = tmp_path / "zero.ppm"
        write_ppm(zero, np.zeros((16, 16, 3)))
        out = tmp_path / "out"
        assert _run("fuse", "--rgb", zero, "--thermal", zero, "--patch", 8,
                    "--dim", 4, "--out", out) == 0
        rows = (out / "fuse_stats.csv").read_text().splitlines()[1:]
        assert len(rows) == 8  # two modalities x four channels
        for row in rows:
            _, _, mean, var = row.split(",")
            assert float(mean) == 0.0 and float(var) == 0.0

    def test_shapes_and_determinism(self, tmp_path, clean_ppm):
        thermal = tmp_path / "thermal.ppm"
        write_ppm(thermal, _clean_image()[:, :, ::-1])
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert _run("fuse", "--rgb", clean_ppm, "--thermal", thermal,
                        "--patch", 8, "--dim", 6, "--seed", 3, "--out", out) == 0
        from cfmw_kit.tensor_io import read_tensor
        fused = read_tensor(a / "fused_rgb.tsr")
        assert fused.shape == (1, 16, 6)
        assert (a / "fused_rgb.tsr").read_bytes() == (b / "fused_rgb.tsr").read_bytes()
        assert (a / "fuse_stats.csv").read_bytes() == (b / "fuse_stats.csv").read_bytes()

    def test_golden_stats(self, tmp_path, clean_ppm):
        import json
        from pathlib import Path
        thermal = tmp_path / "thermal.ppm"
        write_ppm(thermal, 255.0 - _clean_image())
        out = tmp_path / "out"
        assert _run("fuse", "--rgb", clean_ppm, "--thermal", thermal,
                    "--patch", 16, "--dim", 4, "--seed", 42, "--out", out) == 0
        got = (out / "fuse_stats.csv").read_text().splitlines()
        golden = json.loads(
            (Path(__file__).parent / "golden" / "fuse_stats_golden.json").read_text())
        assert got[0] == "modality,channel,mean,variance"
        assert len(got) == len(golden["rows"]) + 1
        for row, want in zip(got[1:], golden["rows"]):
            mod, ch, mean, var = row.split(",")
            assert [mod, int(ch)] == want[:2]
            assert float(mean) == pytest.approx(want[2], rel=1e-9, abs=1e-12)
            assert float(var) == pytest.approx(want[3], rel=1e-9, abs=1e-12)

    def test_mismatched_images_rejected(self, tmp_path, clean_ppm, capsys):
        small = tmp_path / "small.ppm"
        write_ppm(small, np.zeros((16, 16, 3)))
        assert _run("fuse", "--rgb", clean_ppm, "--thermal", small,
                    "--out", tmp_path) == 1
        assert "error:" in capsys.readouterr().err


class TestBench:
    def test_small_grid(self, tmp_path):
        out = tmp_path / "out"
        assert _run("bench", "--n-min", 8, "--n-max", 64, "--c", 4,
                    "--d-state", 2, "--repeats", 1, "--out", out) == 0
        rows = (out / "bench.csv").read_text().splitlines()
        assert rows[0] == "path,N,C,ops,wall_ns"
        assert len(rows) == 9  # 4 sizes x 2 paths
        for row in rows[1:]:
            path, n, c, ops, wall = row.split(",")
            assert int(ops) == count_ops(path, int(n), int(c), 2)
            assert int(wall) > 0
        slopes = (out / "bench_slopes.csv").read_text().splitlines()
        assert slopes[0] == "path,ops_slope,wall_slope"
        assert len(slopes) == 3

    def test_ops_column_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            _run("bench", "--n-min", 8, "--n-max", 64, "--c", 4,
                 "--d-state", 2, "--repeats", 1, "--out", out)

        def ops_only(p):
            return [r.rsplit(",", 1)[0] for r in (p / "bench.csv").read_text().splitlines()]

        assert ops_only(a) == ops_only(b)

    def test_attention_to_ss2d_ops_ratio_grows(self, tmp_path):
        out = tmp_path / "out"
        _run("bench", "--n-min", 8, "--n-max", 64, "--c", 4,
             "--d-state", 2, "--repeats", 1, "--out", out)
        ops = {}
        for row in (out / "bench.csv").read_text().splitlines()[1:]:
            path, n, _, val, _ = row.split(",")
            ops.setdefault(int(n), {})[path] = int(val)
        ratios = [ops[n]["attention_fusion"] / ops[n]["ss2d_fusion"]
                  for n in sorted(ops)]
        assert all(b > a for a, b in zip(ratios, ratios[1:]))

    def test_too_small_grid_rejected(self, tmp_path, capsys):
        assert _run("bench", "--n-min", 8, "--n-max", 16, "--out", tmp_path) == 1
        assert "at least 4" in capsys.readouterr().err


class TestEval:
    def test_identical_pair(self, tmp_path, clean_ppm, capsys):
        out = tmp_path / "out"
        assert _run("eval", "--clean", clean_ppm, "--image", clean_ppm,
                    "--out", out) == 0
        text = (out / "metrics.csv").read_text()
        assert "psnr,99.0\n" in text
        assert "ssim,1.0\n" in text

    def test_perfect_detections(self, tmp_path):
        dets_dir = tmp_path / "dets"
        gts_dir = tmp_path / "gts"
        dets_dir.mkdir()
        gts_dir.mkdir()
        (dets_dir / "img1.txt").write_text("0 0 0 10 10 0.9\n1 20 20 30 30 0.8\n")
        (gts_dir / "img1.txt").write_text("0 0 0 10 10\n1 20 20 30 30\n")
        (dets_dir / "img2.txt").write_text("0 5 5 15 15 0.7\n")
        (gts_dir / "img2.txt").write_text("0 5 5 15 15\n")
        out = tmp_path / "out"
        assert _run("eval", "--dets", dets_dir, "--gts", gts_dir, "--out", out) == 0
        text = (out / "metrics.csv").read_text()
        assert "map50,1.0\n" in text
        assert "map75,1.0\n" in text
        assert "map,1.0\n" in text

    def test_max_area_filter(self, tmp_path):
        dets_dir = tmp_path / "dets"
        gts_dir = tmp_path / "gts"
        dets_dir.mkdir()
        gts_dir.mkdir()
        # the large-box pair is missed; the small box is detected perfectly
        (dets_dir / "a.txt").write_text("0 0 0 10 10 0.9\n")
        (gts_dir / "a.txt").write_text("0 0 0 10 10\n0 100 100 200 200\n")
        out_all = tmp_path / "all"
        out_small = tmp_path / "small"
        _run("eval", "--dets", dets_dir, "--gts", gts_dir, "--out", out_all)
        _run("eval", "--dets", dets_dir, "--gts", gts_dir,
             "--max-area", 2500, "--out", out_small)
        def get(p, key):
            for line in (p / "metrics.csv").read_text().splitlines():
                if line.startswith(key + ","):
                    return float(line.split(",")[1])
        assert get(out_all, "map50") == 0.5
        assert get(out_small, "map50") == 1.0

    def test_unpaired_files_rejected(self, tmp_path, capsys):
        dets_dir = tmp_path / "dets"
        gts_dir = tmp_path / "gts"
        dets_dir.mkdir()
        gts_dir.mkdir()
        (dets_dir / "a.txt").write_text("0 0 0 10 10 0.9\n")
        (gts_dir / "b.txt").write_text("0 0 0 10 10\n")
        assert _run("eval", "--dets", dets_dir, "--gts", gts_dir,
                    "--out", tmp_path) == 1
        assert "unpaired" in capsys.readouterr().err

    def test_nothing_to_do_rejected(self, tmp_path, capsys):
        assert _run("eval", "--out", tmp_path) == 1
        assert "error:" in capsys.readouterr().err


class TestCliPlumbing:
    def test_failed_run_leaves_no_partial_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = _run("eval", "--clean", tmp_path / "missing.ppm",
                    "--image", tmp_path / "missing.ppm", "--out", out)
        assert code == 1
        capsys.readouterr()
        assert not out.exists() or list(out.iterdir()) == []

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("t-count=30\nkind=linear\n")
        out_a = tmp_path / "a"
        _run("schedule", "--config", cfg, "--out", out_a)
        assert len((out_a / "schedule.csv").read_text().splitlines()) == 31
        out_b = tmp_path / "b"
        _run("schedule", "--config", cfg, "--t-count", 10, "--out", out_b)
        assert len((out_b / "schedule.csv").read_text().splitlines()) == 11

    def test_threads_env_fallback(self, tmp_path, clean_ppm, monkeypatch):
        monkeypatch.setenv("CFMW_KIT_THREADS", "2")
        out = tmp_path / "out"
        assert _run("synth", "--input", clean_ppm, "--weather", "fog",
                    "--beta", 0.2, "--out", out) == 0
        assert (out / "clean_fog.ppm").exists()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "cfmw_kit", "schedule", "--t-count", "5",
             "--out", str(tmp_path)],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert (tmp_path / "schedule.csv").exists()
