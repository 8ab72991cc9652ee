import numpy as np
import pytest

from canopy.errors import ConfigError, FrameError
from canopy.evaluation import (EvalConfig, GroundTruthSet, evaluate, match_detections,
                               read_ground_truth)
from canopy.geometry import BBox, Detection, Polygon

from oracles import brute_force_match


def pred(x0, y0, x1, y1, score, frame="image"):
    poly = Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], frame=frame)
    return Detection.from_polygon(poly, score=score, source="external-detector")


def gt(x0, y0, x1, y1):
    return BBox(x0, y0, x1, y1, frame="image")


CFG = EvalConfig()


class TestMatchDetections:
    def test_exact_match(self):
        tp, fp, fn, pairs = match_detections([pred(0, 0, 10, 10, 0.9)],
                                             [gt(0, 0, 10, 10)], CFG)
        assert (tp, fp, fn) == (1, 0, 0)
        assert pairs == [(0, 0)]

    def test_duplicate_cannot_rematch(self):
        preds = [pred(0, 0, 10, 10, 0.9), pred(0, 0, 10, 10, 0.8)]
        tp, fp, fn, _ = match_detections(preds, [gt(0, 0, 10, 10)], CFG)
        assert (tp, fp, fn) == (1, 1, 0)

    def test_single_pred_two_gts_takes_higher_iou(self):
        from canopy.geometry import bbox_iou
        p = pred(0, 0, 10, 10, 0.9)
        weaker = gt(4, 0, 14, 10)    # IOU 60/140 ~ 0.43
        stronger = gt(2, 0, 12, 10)  # IOU 80/120 ~ 0.67
        assert bbox_iou(p.bbox, weaker) == pytest.approx(60 / 140)
        assert bbox_iou(p.bbox, stronger) == pytest.approx(80 / 120)
        tp, fp, fn, pairs = match_detections([p], [weaker, stronger], CFG)
        assert (tp, fp, fn) == (1, 0, 1)
        assert pairs == [(0, 1)]

    def test_below_threshold_not_matched(self):
        tp, fp, fn, _ = match_detections([pred(0, 0, 10, 10, 0.9)],
                                         [gt(7, 0, 17, 10)], CFG)  # IOU 3/17 < 0.4
        assert (tp, fp, fn) == (0, 1, 1)

    def test_min_score_filtering(self):
        preds = [pred(0, 0, 10, 10, 0.05)]
        tp, fp, fn, _ = match_detections(preds, [gt(0, 0, 10, 10)], CFG)
        assert (tp, fp, fn) == (0, 0, 1)

    def test_iou_at_threshold_matches(self):
        # IOU exactly 0.4: inter 40, union 100
        cfg = EvalConfig(iou_threshold=0.4, min_score=0.0)
        p = pred(0, 0, 10, 7, 0.9)
        g = gt(0, 3, 10, 10)
        tp, _, _, _ = match_detections([p], [g], cfg)
        assert tp == 1

    def test_frame_mismatch(self):
        with pytest.raises(FrameError):
            match_detections([pred(0, 0, 1, 1, 0.9)],
                             [BBox(0, 0, 1, 1, frame="world")], CFG)

    def test_counting_identities(self):
        rng = np.random.default_rng(211)
        for _ in range(50):
            preds = [pred(*sorted_box(rng), float(rng.uniform(0, 1))) for _ in range(8)]
            gts = [gt(*sorted_box(rng)) for _ in range(6)]
            tp, fp, fn, _ = match_detections(preds, gts, CFG)
            assert tp + fn == len(gts)
            assert tp + fp == sum(1 for p in preds if p.score >= CFG.min_score)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(223)
        for _ in range(30):
            preds = [pred(*sorted_box(rng), float(rng.uniform(0.2, 1))) for _ in range(8)]
            gts = [gt(*sorted_box(rng)) for _ in range(6)]
            tps = [match_detections(preds, gts, EvalConfig(iou_threshold=t, min_score=0.1))[0]
                   for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
            assert tps == sorted(tps, reverse=True)

    def test_adding_prediction_never_decreases_tp(self):
        rng = np.random.default_rng(227)
        for _ in range(30):
            preds = [pred(*sorted_box(rng), float(rng.uniform(0.2, 1))) for _ in range(7)]
            gts = [gt(*sorted_box(rng)) for _ in range(5)]
            tp_before = match_detections(preds[:-1], gts, CFG)[0]
            tp_after = match_detections(preds, gts, CFG)[0]
            assert tp_after >= tp_before


def sorted_box(rng, span=60):
    x0, y0 = rng.uniform(0, span, size=2)
    w, h = rng.uniform(2, 20, size=2)
    return x0, y0, x0 + w, y0 + h


class TestEvaluate:
    def test_macro_arithmetic(self):
        preds = {
            "a": [pred(0, 0, 10, 10, 0.9), pred(50, 50, 60, 60, 0.8)],  # 1 TP 1 FP of 2 GT
            "b": [pred(0, 0, 10, 10, 0.9), pred(0, 0, 10, 10, 0.8)],    # P=0.5 R=1.0
        }
        gts = {
            "a": GroundTruthSet("a", (gt(0, 0, 10, 10), gt(20, 20, 30, 30))),
            "b": GroundTruthSet("b", (gt(0, 0, 10, 10),)),
        }
        report = evaluate(preds, gts, CFG)
        by_id = {m.image_id: m for m in report.per_image}
        assert (by_id["a"].precision, by_id["a"].recall) == (0.5, 0.5)
        assert (by_id["b"].precision, by_id["b"].recall) == (0.5, 1.0)
        assert report.macro_precision == 0.5
        assert report.macro_recall == 0.75

    def test_perfect_predictions(self):
        boxes = [gt(0, 0, 10, 10), gt(20, 20, 34, 34)]
        preds = {"a": [pred(0, 0, 10, 10, 0.9), pred(20, 20, 34, 34, 0.8)]}
        gts = {"a": GroundTruthSet("a", tuple(boxes))}
        report = evaluate(preds, gts, CFG)
        assert report.macro_precision == 1.0
        assert report.macro_recall == 1.0

    def test_empty_image_convention(self):
        preds = {"empty": [], "full": [pred(0, 0, 10, 10, 0.9)]}
        gts = {"empty": GroundTruthSet("empty", ()),
               "full": GroundTruthSet("full", (gt(0, 0, 10, 10),))}
        report = evaluate(preds, gts, CFG)
        by_id = {m.image_id: m for m in report.per_image}
        assert (by_id["empty"].precision, by_id["empty"].recall) == (1.0, 1.0)
        assert report.macro_precision == 1.0

    def test_no_predictions_on_nonempty_gt(self):
        preds = {"a": []}
        gts = {"a": GroundTruthSet("a", (gt(0, 0, 10, 10),))}
        report = evaluate(preds, gts, CFG)
        assert report.per_image[0].precision == 0.0
        assert report.per_image[0].recall == 0.0

    def test_missing_prediction_key_rejected(self):
        gts = {"a": GroundTruthSet("a", (gt(0, 0, 10, 10),))}
        with pytest.raises(ConfigError, match="missing"):
            evaluate({}, gts, CFG)

    def test_extra_prediction_images_counted(self):
        preds = {"a": [], "mystery": [pred(0, 0, 5, 5, 0.9)]}
        gts = {"a": GroundTruthSet("a", ())}
        report = evaluate(preds, gts, CFG)
        assert report.ignored_images == 1
        assert len(report.per_image) == 1

    def test_macro_is_permutation_invariant(self):
        rng = np.random.default_rng(229)
        preds, gts = {}, {}
        for i in range(6):
            img = f"img{i}"
            preds[img] = [pred(*sorted_box(rng), float(rng.uniform(0.2, 1)))
                          for _ in range(int(rng.integers(0, 6)))]
            gts[img] = GroundTruthSet(img, tuple(gt(*sorted_box(rng))
                                                 for _ in range(int(rng.integers(0, 5)))))
        base = evaluate(preds, gts, CFG)
        order = list(reversed(list(preds)))
        again = evaluate({k: preds[k] for k in order},
                         {k: gts[k] for k in order}, CFG)
        assert again == base

    def test_matches_brute_force_reference(self):
        rng = np.random.default_rng(233)
        for _ in range(40):
            preds = [pred(*sorted_box(rng), float(rng.uniform(0, 1)))
                     for _ in range(int(rng.integers(0, 12)))]
            gts = [gt(*sorted_box(rng)) for _ in range(int(rng.integers(0, 8)))]
            tp, fp, fn, _ = match_detections(preds, gts, CFG)
            ref = brute_force_match(
                [(p.score, p.polygon.area, p.polygon.vertices,
                  (p.bbox.xmin, p.bbox.ymin, p.bbox.xmax, p.bbox.ymax)) for p in preds],
                [(g.xmin, g.ymin, g.xmax, g.ymax) for g in gts],
                CFG.iou_threshold, CFG.min_score)
            assert (tp, fp, fn) == ref

    def test_polygon_geometry_reserved(self):
        with pytest.raises(ConfigError, match="reserved"):
            EvalConfig(geometry="polygon")


class TestGroundTruthLoading:
    def test_csv(self, tmp_path):
        path = tmp_path / "gt.csv"
        path.write_text("image_id,xmin,ymin,xmax,ymax\n"
                        "a,0,0,10,10\n"
                        "a,20,20,30,30\n"
                        "b,1,1,2,2\n")
        gts = read_ground_truth(path)
        assert set(gts) == {"a", "b"}
        assert len(gts["a"].boxes) == 2
        assert gts["b"].boxes[0] == gt(1, 1, 2, 2)

    def test_geojson(self, golden_dir):
        gts = read_ground_truth(golden_dir / "detections.geojson")
        assert set(gts) == {"golden-scene"}
        assert len(gts["golden-scene"].boxes) == 3
        assert gts["golden-scene"].polygons is not None

    def test_missing_file(self, tmp_path):
        from canopy.errors import ParseError
        with pytest.raises(ParseError, match="not found"):
            read_ground_truth(tmp_path / "nope.csv")

    def test_report_table_layout(self):
        preds = {"a": [pred(0, 0, 10, 10, 0.9)]}
        gts = {"a": GroundTruthSet("a", (gt(0, 0, 10, 10),))}
        table = evaluate(preds, gts, CFG).to_text_table()
        lines = table.splitlines()
        assert "precision" in lines[0] and "recall" in lines[0]
        assert lines[-1].startswith("macro")
        assert "1.000" in lines[-1]
