import json
import subprocess
import sys

import numpy as np
import pytest

from canopy.cli import main
from canopy.detections_io import read_detections
from canopy.raster import save_png

from conftest import SCENE_DISKS, make_disk_scene


@pytest.fixture
def scene_png(tmp_path):
    scene, counts = make_disk_scene(300, 300, SCENE_DISKS)
    path = tmp_path / "scene.png"
    save_png(scene, path)
    return path, counts


def detect_args(scene, out, *extra):
    return ["detect", "--image", str(scene), "--out", str(out),
            "--predictor", "oracle", "--points-per-side", "8",
            "--tile-size", "300", "--overlap", "0", *extra]


class TestDetect:
    def test_fixture_scene_five_features(self, scene_png, tmp_path):
        scene, _ = scene_png
        out = tmp_path / "dets.geojson"
        assert main(detect_args(scene, out)) == 0
        dset = read_detections(out)
        assert len(dset.detections) == 5
        manifest = json.loads((tmp_path / "dets.geojson.manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert len(manifest["tiles"]) == 1
        assert manifest["tiles"][0]["status"] == "ok"

    def test_missing_image_exits_3_with_path(self, tmp_path, capsys):
        out = tmp_path / "dets.geojson"
        code = main(detect_args(tmp_path / "missing.png", out))
        assert code == 3
        assert "missing.png" in capsys.readouterr().err

    def test_invalid_overlap_exits_2(self, scene_png, tmp_path):
        scene, _ = scene_png
        out = tmp_path / "dets.geojson"
        code = main(["detect", "--image", str(scene), "--out", str(out),
                     "--predictor", "oracle", "--overlap", "1024", "--tile-size", "512"])
        assert code == 2

    def test_missing_predictor_exits_2(self, scene_png, tmp_path, monkeypatch):
        monkeypatch.delenv("CANOPY_PREDICTOR", raising=False)
        scene, _ = scene_png
        code = main(["detect", "--image", str(scene), "--out", str(tmp_path / "d.geojson")])
        assert code == 2

    def test_env_var_default_predictor(self, scene_png, tmp_path, monkeypatch):
        monkeypatch.setenv("CANOPY_PREDICTOR", "oracle")
        scene, _ = scene_png
        out = tmp_path / "dets.geojson"
        code = main(["detect", "--image", str(scene), "--out", str(out),
                     "--points-per-side", "8", "--tile-size", "300", "--overlap", "0"])
        assert code == 0
        assert len(read_detections(out).detections) == 5

    def test_manifest_echoes_default_thresholds(self, scene_png, tmp_path):
        scene, _ = scene_png
        out = tmp_path / "dets.geojson"
        assert main(detect_args(scene, out)) == 0
        manifest = json.loads((out.parent / "dets.geojson.manifest.json").read_text())
        assert manifest["config"]["nms_iou"] == 0.05
        assert manifest["config"]["min_score"] == 0.1
        assert manifest["config"]["nms_mode"] == "polygon"

    def test_reruns_are_byte_identical(self, scene_png, tmp_path):
        scene, _ = scene_png
        out1, out2 = tmp_path / "a.geojson", tmp_path / "b.geojson"
        assert main(detect_args(scene, out1)) == 0
        assert main(detect_args(scene, out2)) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_config_file_and_flag_override(self, scene_png, tmp_path):
        scene, _ = scene_png
        cfg = tmp_path / "run.toml"
        cfg.write_text("[pipeline]\n"
                       "nms_iou = 0.5\n"
                       "points_per_side = 8\n"
                       "tile_size = 300\n"
                       "overlap = 0\n"
                       "[predictor]\n"
                       'command = "oracle"\n')
        out1 = tmp_path / "file_only.geojson"
        assert main(["detect", "--image", str(scene), "--out", str(out1),
                     "--config", str(cfg)]) == 0
        m1 = json.loads((tmp_path / "file_only.geojson.manifest.json").read_text())
        assert m1["config"]["nms_iou"] == 0.5

        out2 = tmp_path / "flag_wins.geojson"
        assert main(["detect", "--image", str(scene), "--out", str(out2),
                     "--config", str(cfg), "--nms-iou", "0.05"]) == 0
        m2 = json.loads((tmp_path / "flag_wins.geojson.manifest.json").read_text())
        assert m2["config"]["nms_iou"] == 0.05

    def test_world_frame_output_with_sidecar(self, tmp_path):
        scene, _ = make_disk_scene(100, 100, ((50, 50, 20),))
        path = tmp_path / "geo.png"
        save_png(scene, path)
        (tmp_path / "geo.wld").write_text("0.5\n0\n0\n-0.5\n1000\n2000\n")
        out = tmp_path / "dets.geojson"
        assert main(["detect", "--image", str(path), "--out", str(out),
                     "--predictor", "oracle", "--points-per-side", "8",
                     "--tile-size", "100", "--overlap", "0"]) == 0
        dset = read_detections(out)
        assert dset.frame == "world"
        det = dset.detections[0]
        assert 1000 <= det.bbox.xmin <= 1050
        assert 1950 <= det.bbox.ymin <= 2000

    def test_pixel_frame_forced(self, tmp_path):
        scene, _ = make_disk_scene(100, 100, ((50, 50, 20),))
        path = tmp_path / "geo.png"
        save_png(scene, path)
        (tmp_path / "geo.wld").write_text("0.5\n0\n0\n-0.5\n1000\n2000\n")
        out = tmp_path / "dets.geojson"
        assert main(["detect", "--image", str(path), "--out", str(out),
                     "--predictor", "oracle", "--points-per-side", "8",
                     "--tile-size", "100", "--overlap", "0", "--frame", "pixel"]) == 0
        assert read_detections(out).frame == "image"

    def test_bbox_prompted_via_flag(self, scene_png, tmp_path):
        scene, _ = scene_png
        lines = ["image_id,xmin,ymin,xmax,ymax,score"]
        for cx, cy, r in SCENE_DISKS:
            lines.append(f"scene,{cx - r},{cy - r},{cx + r},{cy + r},0.9")
        boxes = tmp_path / "boxes.csv"
        boxes.write_text("\n".join(lines) + "\n")
        out = tmp_path / "dets.geojson"
        assert main(["detect", "--image", str(scene), "--out", str(out),
                     "--predictor", "oracle", "--tile-size", "300", "--overlap", "0",
                     "--prompt-boxes", str(boxes)]) == 0
        dset = read_detections(out)
        assert len(dset.detections) == 5
        assert all(d.source == "bbox-prompted" for d in dset.detections)

    def test_failed_run_writes_manifest(self, scene_png, tmp_path):
        scene, _ = scene_png
        dies = tmp_path / "dies.py"
        dies.write_text("import sys\nsys.exit(9)\n")
        out = tmp_path / "dets.geojson"
        code = main(["detect", "--image", str(scene), "--out", str(out),
                     "--predictor", f"{sys.executable} {dies}",
                     "--tile-size", "300", "--overlap", "0"])
        assert code == 4
        manifest = json.loads((tmp_path / "dets.geojson.manifest.json").read_text())
        assert manifest["status"] == "failed"
        assert "tile 0" in manifest["error"]


class TestEval:
    def test_fixture_pair_reproduces_expected_report(self, golden_dir, tmp_path):
        report = tmp_path / "report.json"
        code = main(["eval", "--pred", str(golden_dir / "eval" / "predictions.geojson"),
                     "--gt", str(golden_dir / "eval" / "ground_truth.csv"),
                     "--report", str(report)])
        assert code == 0
        assert report.read_bytes() == (golden_dir / "eval" / "expected_report.json").read_bytes()

    def test_perfect_match_prints_unit_metrics(self, golden_dir, tmp_path, capsys):
        pred = golden_dir / "detections.geojson"
        code = main(["eval", "--pred", str(pred), "--gt", str(pred)])
        assert code == 0
        out = capsys.readouterr().out
        assert "macro" in out
        assert "1.000  1.000" in out.replace("   ", "  ")

    def test_empty_predictions_zero_recall(self, golden_dir, tmp_path, capsys):
        empty = tmp_path / "empty.geojson"
        empty.write_text('{"type": "FeatureCollection", "frame": "image", '
                         '"provenance": {}, "features": []}')
        code = main(["eval", "--pred", str(empty),
                     "--gt", str(golden_dir / "eval" / "ground_truth.csv")])
        assert code == 0
        out = capsys.readouterr().out
        assert "macro" in out
        assert "0.000" in out.splitlines()[-1]

    def test_world_frame_predictions_rejected(self, tmp_path, golden_dir):
        from canopy.detections_io import DetectionSet, write_detections
        from canopy.geometry import Detection, Polygon
        poly = Polygon([(500000, 4400000), (500010, 4400000),
                        (500010, 4400010), (500000, 4400010)], frame="world")
        dset = DetectionSet(image_id="img_a",
                            detections=(Detection.from_polygon(
                                poly, 0.9, "external-detector"),),
                            frame="world", crs_id="EPSG:32610")
        world = tmp_path / "world.geojson"
        write_detections(dset, world)
        code = main(["eval", "--pred", str(world),
                     "--gt", str(golden_dir / "eval" / "ground_truth.csv")])
        assert code == 2


class TestTile:
    def test_four_tiles_and_plan(self, tmp_path):
        scene, _ = make_disk_scene(100, 100, ((50, 50, 20),))
        path = tmp_path / "scene.png"
        save_png(scene, path)
        out_dir = tmp_path / "tiles"
        code = main(["tile", "--image", str(path), "--out-dir", str(out_dir),
                     "--tile-size", "50", "--overlap", "0"])
        assert code == 0
        pngs = sorted(out_dir.glob("tile_*.png"))
        assert len(pngs) == 4
        plan = json.loads((out_dir / "plan.json").read_text())
        assert plan["windows"] == [[0, 0, 50, 50], [50, 0, 50, 50],
                                   [0, 50, 50, 50], [50, 50, 50, 50]]

    def test_plan_respects_invariants(self, tmp_path):
        scene, _ = make_disk_scene(130, 70, ((30, 30, 10),))
        path = tmp_path / "scene.png"
        save_png(scene, path)
        out_dir = tmp_path / "tiles"
        assert main(["tile", "--image", str(path), "--out-dir", str(out_dir),
                     "--tile-size", "64", "--overlap", "16"]) == 0
        plan = json.loads((out_dir / "plan.json").read_text())
        covered = np.zeros((70, 130), bool)
        for x0, y0, w, h in plan["windows"]:
            covered[y0:y0 + h, x0:x0 + w] = True
        assert covered.all()

    def test_nine_tiles_1000px(self, tmp_path):
        scene, _ = make_disk_scene(1000, 1000, ((500, 500, 40),))
        path = tmp_path / "big.png"
        save_png(scene, path)
        out_dir = tmp_path / "tiles"
        assert main(["tile", "--image", str(path), "--out-dir", str(out_dir),
                     "--tile-size", "512", "--overlap", "64"]) == 0
        assert len(list(out_dir.glob("tile_*.png"))) == 9


class TestConvert:
    def test_csv_to_geojson_and_back(self, tmp_path):
        csv_in = tmp_path / "in.csv"
        csv_in.write_text("image_id,xmin,ymin,xmax,ymax,score\n"
                          "imgA,0,0,10,10,0.9\n"
                          "imgA,5,5,25,25,0.5\n"
                          "imgB,1,1,4,4,0.7\n")
        geojson = tmp_path / "mid.geojson"
        csv_out = tmp_path / "out.csv"
        assert main(["convert", "--in", str(csv_in), "--out", str(geojson)]) == 0
        assert main(["convert", "--in", str(geojson), "--out", str(csv_out)]) == 0
        assert csv_out.read_text() == csv_in.read_text()

    def test_geojson_to_csv(self, golden_dir, tmp_path):
        out = tmp_path / "dets.csv"
        assert main(["convert", "--in", str(golden_dir / "detections.geojson"),
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "image_id,xmin,ymin,xmax,ymax,score"
        assert len(lines) == 4


class TestEntryPoint:
    def test_module_invocation(self, golden_dir):
        result = subprocess.run(
            [sys.executable, "-m", "canopy.cli", "eval",
             "--pred", str(golden_dir / "eval" / "predictions.geojson"),
             "--gt", str(golden_dir / "eval" / "ground_truth.csv")],
            capture_output=True, text=True)
        assert result.returncode == 0
        assert "macro" in result.stdout

    def test_unknown_flag_exits_2(self):
        assert main(["detect", "--nonsense"]) == 2
