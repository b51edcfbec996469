import json

import numpy as np
import pytest

from mlnpose.cli import main
from mlnpose.fileio import read_ppm, read_tensor, write_ppm, write_tensor

# A compact scene/config setup so CLI round trips stay fast.
SMALL_SCENE = {"scene": {"image_dims": [400, 600], "person_count": [2, 3],
                         "min_spacing": 120.0}}
SMALL_NET = {"network": {"block_channels": 8, "transfer_blocks": 1,
                         "refine_blocks": 1, "branch_mid_channels": 16,
                         "transfer_output_channels": 8}}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


class TestSynthDecodeEval:
    def test_pipeline_reaches_perfect_ap(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL_SCENE)
        scenes = tmp_path / "scenes"
        assert run("synth", "--config", cfg, "--seed", 3, "--scenes", 4,
                   "--out", scenes) == 0
        assert (scenes / "annotations.json").exists()
        assert (scenes / "scene_0001_joints.mlnt").exists()

        results = tmp_path / "results.json"
        assert run("decode", "--config", cfg, "--maps", scenes,
                   "--out", results) == 0
        dets = json.loads(results.read_text())
        gts = json.loads((scenes / "annotations.json").read_text())
        assert len(dets) == len(gts["annotations"])

        out = tmp_path / "metrics.json"
        assert run("eval", "--config", cfg, "--results", results,
                   "--annotations", scenes / "annotations.json",
                   "--out", out) == 0
        metrics = json.loads(out.read_text())
        assert metrics["AP"] == pytest.approx(1.0)
        assert metrics["AP50"] == pytest.approx(1.0)
        assert "AP" in capsys.readouterr().out

    def test_synth_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SCENE)
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--config", cfg, "--seed", 9, "--scenes", 3,
                       "--out", out) == 0
        for name in ("annotations.json", "scene_0002_joints.mlnt",
                     "scene_0002_limbs.mlnt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_synth_thread_count_does_not_change_output(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SCENE)
        a, b = tmp_path / "t1", tmp_path / "t4"
        assert run("synth", "--config", cfg, "--seed", 9, "--scenes", 3,
                   "--out", a, "--threads", 1) == 0
        assert run("synth", "--config", cfg, "--seed", 9, "--scenes", 3,
                   "--out", b, "--threads", 4) == 0
        assert (a / "annotations.json").read_bytes() == (b / "annotations.json").read_bytes()
        assert (a / "scene_0003_joints.mlnt").read_bytes() == \
               (b / "scene_0003_joints.mlnt").read_bytes()

    def test_render_gt_matches_synth(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SCENE)
        scenes = tmp_path / "scenes"
        rendered = tmp_path / "rendered"
        assert run("synth", "--config", cfg, "--seed", 2, "--scenes", 2,
                   "--out", scenes) == 0
        assert run("render-gt", "--config", cfg,
                   "--annotations", scenes / "annotations.json",
                   "--out", rendered) == 0
        a = read_tensor(scenes / "scene_0001_joints.mlnt")
        b = read_tensor(rendered / "scene_0001_joints.mlnt")
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_decode_empty_maps(self, tmp_path):
        joints = tmp_path / "j.mlnt"
        limbs = tmp_path / "l.mlnt"
        write_tensor(joints, np.zeros((1, 19, 10, 10), dtype=np.float32))
        write_tensor(limbs, np.zeros((1, 38, 10, 10), dtype=np.float32))
        out = tmp_path / "results.json"
        assert run("decode", "--joints", joints, "--limbs", limbs,
                   "--out", out) == 0
        assert json.loads(out.read_text()) == []

    def test_decode_filters_flag(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SCENE)
        scenes = tmp_path / "scenes"
        assert run("synth", "--config", cfg, "--seed", 4, "--scenes", 1,
                   "--out", scenes) == 0
        on, off = tmp_path / "on.json", tmp_path / "off.json"
        assert run("decode", "--config", cfg, "--maps", scenes,
                   "--filters", "on", "--out", on) == 0
        assert run("decode", "--config", cfg, "--maps", scenes,
                   "--filters", "off", "--out", off) == 0
        assert len(json.loads(off.read_text())) >= len(json.loads(on.read_text()))


class TestForward:
    def test_forward_on_tensor_input(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL_NET)
        image = tmp_path / "img.mlnt"
        rng = np.random.default_rng(0)
        write_tensor(image, rng.normal(size=(1, 3, 32, 32)).astype(np.float32))
        out = tmp_path / "maps"
        assert run("forward", "--config", cfg, "--image", image,
                   "--out", out, "--seed", 1) == 0
        joints = read_tensor(out / "joints.mlnt")
        limbs = read_tensor(out / "limbs.mlnt")
        assert joints.shape == (1, 19, 4, 4)
        assert limbs.shape == (1, 38, 4, 4)
        assert np.isfinite(joints).all() and np.isfinite(limbs).all()

    def test_forward_on_ppm_input(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_NET)
        image = tmp_path / "img.ppm"
        rng = np.random.default_rng(1)
        write_ppm(image, rng.integers(0, 256, size=(16, 24, 3)).astype(np.uint8))
        out = tmp_path / "maps"
        assert run("forward", "--config", cfg, "--image", image, "--out", out) == 0
        assert read_tensor(out / "joints.mlnt").shape == (1, 19, 2, 3)

    def test_forward_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_NET)
        image = tmp_path / "img.mlnt"
        write_tensor(image, np.random.default_rng(2)
                     .normal(size=(1, 3, 16, 16)).astype(np.float32))
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("forward", "--config", cfg, "--image", image,
                       "--out", out, "--seed", 5) == 0
        assert (a / "joints.mlnt").read_bytes() == (b / "joints.mlnt").read_bytes()
        assert (a / "limbs.mlnt").read_bytes() == (b / "limbs.mlnt").read_bytes()

    def test_bad_image_dims(self, tmp_path, capsys):
        cfg = write_config(tmp_path, SMALL_NET)
        image = tmp_path / "img.mlnt"
        write_tensor(image, np.zeros((1, 3, 15, 16), dtype=np.float32))
        assert run("forward", "--config", cfg, "--image", image,
                   "--out", tmp_path / "maps") == 1
        assert "error:" in capsys.readouterr().err


class TestReports:
    def test_complexity(self, tmp_path, capsys):
        out = tmp_path / "complexity.json"
        assert run("complexity", "--input-dims", "368x432", "--out", out) == 0
        report = json.loads(out.read_text())
        assert report["total_params"] == sum(r["params"] for r in report["per_layer"])
        text = capsys.readouterr().out
        assert "TOTAL" in text and "headline" in text

    def test_complexity_flop_convention(self, tmp_path, capsys):
        assert run("complexity", "--input-dims", "64x64",
                   "--flop-convention", "mac1") == 0
        assert "(mac1)" in capsys.readouterr().out

    def test_bench_smoke(self, tmp_path, capsys):
        out = tmp_path / "bench.json"
        assert run("bench", "--people", 2, "--reps", 3, "--out", out) == 0
        report = json.loads(out.read_text())
        assert report["people"] == 2
        assert set(report["stages_ms"]) == {"nms", "scoring", "assembly", "grouping"}
        assert "reference grouping times" in capsys.readouterr().out


class TestOverlay:
    def test_overlay(self, tmp_path):
        cfg = write_config(tmp_path, SMALL_SCENE)
        scenes = tmp_path / "scenes"
        assert run("synth", "--config", cfg, "--seed", 6, "--scenes", 1,
                   "--out", scenes) == 0
        out = tmp_path / "overlay.ppm"
        assert run("overlay", "--annotations", scenes / "annotations.json",
                   "--image-id", 1, "--out", out) == 0
        img = read_ppm(out)
        assert img.shape == (400, 600, 3)
        assert img.any()


class TestErrors:
    def test_missing_config(self, tmp_path, capsys):
        assert run("synth", "--config", tmp_path / "nope.json",
                   "--out", tmp_path / "x") == 1
        assert "error:" in capsys.readouterr().err

    def test_decode_requires_inputs(self, tmp_path, capsys):
        assert run("decode", "--out", tmp_path / "r.json") == 1
        assert "error:" in capsys.readouterr().err

    def test_decode_missing_limbs_file(self, tmp_path, capsys):
        write_tensor(tmp_path / "scene_0001_joints.mlnt",
                     np.zeros((1, 19, 4, 4), dtype=np.float32))
        assert run("decode", "--maps", tmp_path, "--out", tmp_path / "r.json") == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])
