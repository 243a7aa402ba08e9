"""End-to-end benchmark runs: determinism, failure handling, reductions,
upper-bound dominance, and ablation sweeps."""

import json

import numpy as np
import pytest

from grounding_kit.benchmark import (
    ablation_csv,
    ablation_values,
    run_ablation,
    run_benchmark,
    summarize_rows,
    write_report,
)
from grounding_kit.core import Expression, cosine, fuse
from grounding_kit.encoders import build_encoders
from grounding_kit.errors import SchemaError
from grounding_kit.maskio import load_proposals, load_records, rle_decode
from grounding_kit.visual import local_visual_feature
from grounding_kit.text import global_local_text_feature, load_parses

from conftest import MOCK_SEED, build_scene, scene_config


def _report_bytes(report):
    return json.dumps(report, sort_keys=True, separators=(",", ":")).encode()


class TestRunBenchmark:
    def test_summary_recomputable_from_rows(self, scene):
        report = run_benchmark(scene_config(scene))
        assert report["summary"] == summarize_rows(report["examples"])
        assert report["summary"]["failures"] == 0
        assert 0.0 <= report["summary"]["oiou"] <= 1.0

    def test_rerun_byte_identical(self, scene):
        a = run_benchmark(scene_config(scene))
        b = run_benchmark(scene_config(scene))
        assert _report_bytes(a) == _report_bytes(b)

    def test_parallel_byte_identical(self, tmp_path):
        paths = build_scene(tmp_path, n_images=5)
        serial = run_benchmark(scene_config(paths, workers=1))
        parallel = run_benchmark(scene_config(paths, workers=4))
        assert _report_bytes(serial) == _report_bytes(parallel)

    def test_alpha_zero_equals_cropping_baseline(self, scene):
        pipeline = run_benchmark(scene_config(scene, alpha=0.0))
        baseline = run_benchmark(scene_config(scene, baseline="cropping"))
        assert pipeline["summary"]["oiou"] == baseline["summary"]["oiou"]
        assert pipeline["summary"]["miou"] == baseline["summary"]["miou"]
        for a, b in zip(pipeline["examples"], baseline["examples"]):
            assert a["chosen"] == b["chosen"]
            assert abs(a["score"] - b["score"]) <= 1e-9

    def test_upper_bound_dominates(self, scene):
        report = run_benchmark(scene_config(scene))
        assert report["summary"]["oiou"] <= report["summary"]["upper_bound_oiou"] + 1e-12

    def test_missing_proposals_is_reported_failure(self, tmp_path):
        paths = build_scene(tmp_path, n_images=3)
        doc = json.loads(open(paths["proposals"]).read())
        doc["images"] = doc["images"][:2]  # drop the last image's proposals
        open(paths["proposals"], "w").write(json.dumps(doc))
        report = run_benchmark(scene_config(paths))
        assert report["summary"]["failures"] == 1
        failed = [r for r in report["examples"] if "error" in r]
        assert len(failed) == 1
        assert failed[0]["chosen"] == -1 and failed[0]["iou"] == 0.0
        # the failed example still pushes its gt area into the oIoU union
        assert failed[0]["union"] > 0 and failed[0]["inter"] == 0

    def test_class_metrics_present(self, scene):
        report = run_benchmark(scene_config(scene))
        assert report["summary"]["mc_acc"] is not None
        assert report["summary"]["cc_oiou"] is not None

    def test_no_classes_yields_null_metrics(self, tmp_path):
        paths = build_scene(tmp_path, with_classes=False)
        report = run_benchmark(scene_config(paths))
        assert report["summary"]["mc_acc"] is None
        assert report["summary"]["cc_oiou"] is None

    def test_config_requires_inputs(self):
        with pytest.raises(SchemaError, match="records"):
            run_benchmark({"proposals": "x.json", "encoder_config": {}})

    def test_seed_override_changes_scores(self, scene):
        a = run_benchmark(scene_config(scene))
        b = run_benchmark(scene_config(scene, seed=MOCK_SEED + 1))
        scores_a = [r["score"] for r in a["examples"]]
        scores_b = [r["score"] for r in b["examples"]]
        assert scores_a != scores_b

    def test_workers_not_embedded_in_config(self, scene):
        report = run_benchmark(scene_config(scene, workers=3))
        assert "workers" not in report["config"]

    def test_report_written_atomically(self, scene, tmp_path):
        report = run_benchmark(scene_config(scene))
        out = tmp_path / "report.json"
        write_report(report, str(out))
        persisted = json.loads(out.read_text())
        assert persisted == json.loads(_report_bytes(report))


class TestPipelineOracle:
    def test_rows_match_manual_rescoring(self, scene):
        """Recompute one example end to end with direct calls."""
        cfg = scene_config(scene)
        report = run_benchmark(cfg)
        records = load_records(cfg["records"])
        proposals = load_proposals(cfg["proposals"])
        parses = load_parses(cfg["parses"])
        vh, th = build_encoders(dict(cfg["encoder_config"]))

        from grounding_kit.benchmark import load_image, _resolve_path
        import os

        r = records[0]
        base = os.path.dirname(os.path.abspath(cfg["records"]))
        img = load_image(_resolve_path(base, r.image_path))
        gt = rle_decode(r.gt_mask)
        t = global_local_text_feature(th, Expression(text=r.expression),
                                      parses.get(r.expression), cfg["beta"])
        from grounding_kit.visual import MaskingConfig, global_local_visual_feature, FeatureCache

        best_score = -2.0
        best_idx = -1
        cache = FeatureCache()
        for i, m in enumerate(proposals[r.image_id]):
            feats = global_local_visual_feature(
                vh, img, m, cfg["alpha"], MaskingConfig(mask_layers=cfg["mask_layers"]), cache
            )
            s = cosine(t, feats.fused)
            if s > best_score:
                best_score, best_idx = s, i
        row = report["examples"][0]
        assert row["chosen"] == best_idx
        assert row["score"] == pytest.approx(best_score, abs=1e-12)

    def test_mask_layers_zero_matches_vanilla_feature_oracle(self, scene):
        """k=0 degenerates the global path to the vanilla whole-image
        feature; rescore with that oracle directly."""
        cfg = scene_config(scene, mask_layers=0, alpha=0.6)
        report = run_benchmark(cfg)
        records = load_records(cfg["records"])
        proposals = load_proposals(cfg["proposals"])
        parses = load_parses(cfg["parses"])
        vh, th = build_encoders(dict(cfg["encoder_config"]))
        from grounding_kit.benchmark import load_image, _resolve_path
        import os

        base = os.path.dirname(os.path.abspath(cfg["records"]))
        for row, r in zip(report["examples"], records):
            img = load_image(_resolve_path(base, r.image_path))
            vanilla = vh.encode_image(img)
            t = global_local_text_feature(th, Expression(text=r.expression),
                                          parses.get(r.expression), cfg["beta"])
            scores = []
            for m in proposals[r.image_id]:
                local = local_visual_feature(vh, img, m)
                scores.append(cosine(t, fuse(vanilla, local, cfg["alpha"])))
            assert row["score"] == pytest.approx(max(scores), abs=1e-9)
            assert row["chosen"] == int(np.argmax(scores))


class TestAblation:
    def test_grid_sizes(self, scene):
        assert len(ablation_values("alpha", scene_config(scene))) == 21
        assert len(ablation_values("beta", scene_config(scene))) == 21
        k_values = ablation_values("mask_layers", scene_config(scene))
        assert k_values == [0, 1, 2, 3, 4]

    def test_sweep_row_count_and_csv(self, scene):
        rows = run_ablation(scene_config(scene), "alpha", [0.0, 0.5, 1.0])
        assert len(rows) == 3
        csv_text = ablation_csv(rows)
        assert csv_text.count("\n") == 4  # header + 3 rows
        assert csv_text.startswith("axis,value,oiou,miou,failures")

    def test_alpha_zero_row_equals_cropping_row(self, scene):
        rows = run_ablation(scene_config(scene), "alpha", [0.0])
        baseline = run_benchmark(scene_config(scene, baseline="cropping"))
        assert rows[0]["oiou"] == baseline["summary"]["oiou"]
        assert rows[0]["miou"] == baseline["summary"]["miou"]

    def test_unknown_axis_rejected(self, scene):
        with pytest.raises(SchemaError, match="axis"):
            run_ablation(scene_config(scene), "gamma", [0.1])
