import json
import sys
import textwrap

import numpy as np
import pytest
from PIL import Image

from her2score.cli import main

from conftest import planted_case

TILE = 32


@pytest.fixture
def case_dir(tmp_path):
    """Planted 4x4 case written to disk with its run config."""
    he, ihc = planted_case(rows=4, cols=4, tile=TILE, case_id="demo")
    he_path = tmp_path / "demo_he.png"
    ihc_path = tmp_path / "demo_ihc.png"
    Image.fromarray(he.pixels).save(he_path)
    Image.fromarray(ihc.pixels).save(ihc_path)
    config = tmp_path / "run.toml"
    config.write_text(
        textwrap.dedent(
            f"""
            case_id = "demo"
            he_slide = "demo_he.png"
            ihc_slide = "demo_ihc.png"
            tile_size_px = {TILE}
            output_dir = "out"

            [mapping]
            kind = "identity"
            """
        )
    )
    return tmp_path


class TestTile:
    def test_tiles_both_slides_with_manifest(self, case_dir):
        assert main(["tile", "--config", str(case_dir / "run.toml")]) == 0
        manifest = json.loads((case_dir / "out/demo/he/manifest.json").read_text())
        assert (manifest["rows"], manifest["cols"]) == (4, 4)
        assert len(list((case_dir / "out/demo/ihc").glob("r*_c*.png"))) == 16

    def test_four_patch_example(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        for name in ("a_he.png", "a_ihc.png"):
            Image.fromarray(pixels).save(tmp_path / name)
        code = main(
            [
                "tile",
                "--he-slide", str(tmp_path / "a_he.png"),
                "--ihc-slide", str(tmp_path / "a_ihc.png"),
                "--case-id", "a",
                "--tile-size", "32",
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code == 0
        manifest = json.loads((tmp_path / "out/a/he/manifest.json").read_text())
        assert (manifest["rows"], manifest["cols"]) == (2, 2)
        assert len(manifest["patches"]) == 4

    def test_nonexistent_path_exit_2(self, tmp_path, capsys):
        code = main(
            [
                "tile",
                "--he-slide", str(tmp_path / "missing.png"),
                "--ihc-slide", str(tmp_path / "missing.png"),
            ]
        )
        assert code == 2
        assert "missing.png" in capsys.readouterr().err

    def test_rerun_identical_manifest_bytes(self, case_dir):
        config = str(case_dir / "run.toml")
        assert main(["tile", "--config", config]) == 0
        manifest = case_dir / "out/demo/he/manifest.json"
        first = manifest.read_bytes()
        assert main(["tile", "--config", config]) == 0
        assert manifest.read_bytes() == first


class TestRun:
    def test_planted_case_report(self, case_dir):
        assert main(["run", "--config", str(case_dir / "run.toml")]) == 0
        report = json.loads((case_dir / "out/demo/report.json").read_text())
        assert report["wsi_score"] == "3+"
        assert report["coverage_pct"] == 25.0
        assert report["binary_status"] == "positive"
        assert (case_dir / "out/demo/report.csv").exists()
        assert (case_dir / "out/demo/score_map.png").exists()
        assert (case_dir / "out/demo/overlays/r0_c0.png").exists()
        assert (case_dir / "out/demo/mosaics/overlays.png").exists()

    def test_blank_case_scores_zero(self, tmp_path):
        blank = np.full((64, 64, 3), 255, dtype=np.uint8)
        for name in ("b_he.png", "b_ihc.png"):
            Image.fromarray(blank).save(tmp_path / name)
        code = main(
            [
                "run",
                "--he-slide", str(tmp_path / "b_he.png"),
                "--ihc-slide", str(tmp_path / "b_ihc.png"),
                "--case-id", "b",
                "--tile-size", "32",
                "--out", str(tmp_path / "out"),
                "--no-artifacts",
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "out/b/report.json").read_text())
        assert report["wsi_score"] == "0"
        assert report["coverage_pct"] == 0.0

    def test_worker_count_does_not_change_bytes(self, case_dir):
        config = str(case_dir / "run.toml")
        assert main(["run", "--config", config, "--workers", "1"]) == 0
        single = (case_dir / "out/demo/report.json").read_bytes()
        single_csv = (case_dir / "out/demo/report.csv").read_bytes()
        assert main(["run", "--config", config, "--workers", "8"]) == 0
        assert (case_dir / "out/demo/report.json").read_bytes() == single
        assert (case_dir / "out/demo/report.csv").read_bytes() == single_csv

    def test_bijection_failure_exit_3(self, case_dir, capsys):
        config = case_dir / "bad.toml"
        config.write_text(
            textwrap.dedent(
                f"""
                case_id = "demo"
                he_slide = "demo_he.png"
                ihc_slide = "demo_ihc.png"
                tile_size_px = {TILE}
                output_dir = "out"

                [mapping]
                kind = "affine_grid"
                scale = [0.0, 0.0]
                """
            )
        )
        assert main(["run", "--config", str(config)]) == 3
        assert "bijection" in capsys.readouterr().err

    def test_backend_failure_exit_4(self, case_dir, tmp_path):
        script = tmp_path / "dead_sidecar.py"
        script.write_text("import sys; sys.exit(3)\n")
        code = main(
            [
                "run",
                "--config", str(case_dir / "run.toml"),
                "--no-artifacts",
                "--sidecar-segment", f"{sys.executable} {script}",
            ]
        )
        assert code == 4


class TestVerifyMapping:
    def test_identity_ok(self, case_dir, capsys):
        assert main(["verify-mapping", "--config", str(case_dir / "run.toml")]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["bijective"] is True

    def test_collapsing_map_exit_3(self, case_dir, capsys):
        config = case_dir / "bad.toml"
        config.write_text(
            textwrap.dedent(
                f"""
                he_slide = "demo_he.png"
                ihc_slide = "demo_ihc.png"
                tile_size_px = {TILE}

                [mapping]
                kind = "affine_grid"
                scale = 0.0
                """
            )
        )
        assert main(["verify-mapping", "--config", str(config)]) == 3
        out = json.loads(capsys.readouterr().out)
        assert out["collisions"]


class TestRender:
    def test_mosaics_from_tiled_case(self, case_dir):
        assert main(["tile", "--config", str(case_dir / "run.toml")]) == 0
        code = main(
            ["render", "--out", str(case_dir / "out"), "--case-id", "demo"]
        )
        assert code == 0
        sheet = np.asarray(Image.open(case_dir / "out/demo/mosaics/ihc_tiles.png"))
        assert sheet.shape == (4 * TILE + 3, 4 * TILE + 3, 3)

    def test_missing_case_exit_2(self, tmp_path):
        assert main(["render", "--out", str(tmp_path), "--case-id", "ghost"]) == 2


class TestEval:
    def test_perfect_predictions(self, tmp_path):
        pred = tmp_path / "pred.csv"
        pred.write_text(
            "id,true_label,pred_label,prob_pos,prob_neg\n"
            + "".join(
                f"s{i},{l},{l},{0.9 if l == 'pos' else 0.1},{0.1 if l == 'pos' else 0.9}\n"
                for i, l in enumerate(["pos", "neg"] * 10)
            )
        )
        out = tmp_path / "eval"
        assert main(["eval", "--pred", str(pred), "--out", str(out), "--roc", "--dca"]) == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["per_label"]["pos"]["accuracy"] == 1.0
        assert payload["auc"]["pos"] == 1.0
        assert (out / "roc_pos.csv").exists()
        assert (out / "dca_pos.csv").exists()
        assert (out / "roc.png").exists()
        assert (out / "confusion.png").exists()

    def test_single_class_truth_with_roc_exit_5(self, tmp_path, capsys):
        pred = tmp_path / "pred.csv"
        pred.write_text(
            "id,true_label,pred_label,prob_pos,prob_neg\n"
            "s1,pos,pos,0.9,0.1\n"
            "s2,pos,neg,0.2,0.8\n"
        )
        assert main(["eval", "--pred", str(pred), "--out", str(tmp_path / "e"), "--roc"]) == 5
        assert "ROC" in capsys.readouterr().err

    def test_malformed_csv_exit_2_names_line(self, tmp_path, capsys):
        pred = tmp_path / "pred.csv"
        pred.write_text("id,true_label,pred_label,prob_a\ns1,a,a,0.5\ns2,a\n")
        assert main(["eval", "--pred", str(pred), "--out", str(tmp_path / "e")]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_metrics_match_sklearn_on_random_csv(self, tmp_path, rng):
        from sklearn import metrics as sk

        labels = ["x", "y"]
        true = [labels[i] for i in rng.integers(0, 2, size=60)]
        pred_labels = [labels[i] for i in rng.integers(0, 2, size=60)]
        probs = [float(p) for p in rng.random(size=60)]
        path = tmp_path / "pred.csv"
        path.write_text(
            "id,true_label,pred_label,prob_x,prob_y\n"
            + "".join(
                f"s{i},{t},{p},{px!r},{1 - px!r}\n"
                for i, (t, p, px) in enumerate(zip(true, pred_labels, probs))
            )
        )
        out = tmp_path / "eval"
        assert main(["eval", "--pred", str(path), "--out", str(out), "--roc"]) == 0
        payload = json.loads((out / "metrics.json").read_text())
        y_true = [1 if t == "x" else 0 for t in true]
        y_pred = [1 if p == "x" else 0 for p in pred_labels]
        assert payload["per_label"]["x"]["accuracy"] == pytest.approx(
            sk.accuracy_score(y_true, y_pred), abs=1e-12
        )
        assert payload["per_label"]["x"]["f1"] == pytest.approx(
            sk.f1_score(y_true, y_pred, zero_division=0), abs=1e-12
        )
        assert payload["auc"]["x"] == pytest.approx(
            sk.roc_auc_score(y_true, probs), abs=1e-9
        )

    def test_truth_file_overrides_labels(self, tmp_path):
        pred = tmp_path / "pred.csv"
        pred.write_text(
            "id,true_label,pred_label,prob_pos,prob_neg\n"
            "s1,unknown,pos,0.9,0.1\n"
            "s2,unknown,neg,0.2,0.8\n"
        )
        truth = tmp_path / "truth.csv"
        truth.write_text("id,true_label\ns1,pos\ns2,neg\n")
        out = tmp_path / "eval"
        assert main(["eval", "--pred", str(pred), "--truth", str(truth), "--out", str(out)]) == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["per_label"]["pos"]["accuracy"] == 1.0
