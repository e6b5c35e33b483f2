"""Command-line interface.

Subcommands: tile, run, eval, render, verify-mapping. Runs are driven by a
TOML config (see config module) with flag overrides. Exit codes: 0 success,
2 input error, 3 mapping error, 4 backend error, 5 metric-domain error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import figures, metrics, render
from .config import RunConfig, config_from_dict, load_config
from .errors import (
    BackendUnavailableError,
    IncompleteGridError,
    InvalidArgumentError,
    MappingOutOfRangeError,
    NotInvertibleError,
    ProtocolViolationError,
    UndefinedRocError,
)
from .mapping import verify_bijection
from .models import Backend, ModelBinding, ModelRole
from .scoring import run_pipeline
from .tiling import (
    Modality,
    compute_grid_spec,
    extract_patches,
    load_patch_grid,
    read_slide,
    save_patch_grid,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MAPPING = 3
EXIT_BACKEND = 4
EXIT_METRIC = 5


def _load_run_config(args) -> RunConfig:
    if args.config:
        config = load_config(args.config)
    else:
        if not (getattr(args, "he_slide", None) and getattr(args, "ihc_slide", None)):
            raise InvalidArgumentError("provide --config or both --he-slide and --ihc-slide")
        config = config_from_dict(
            {"he_slide": args.he_slide, "ihc_slide": args.ihc_slide}
        )
    if getattr(args, "he_slide", None):
        config.he_slide_path = Path(args.he_slide)
    if getattr(args, "ihc_slide", None):
        config.ihc_slide_path = Path(args.ihc_slide)
    if getattr(args, "case_id", None):
        config.case_id = args.case_id
    if getattr(args, "tile_size", None):
        config.tile_size_px = args.tile_size
    if getattr(args, "out", None):
        config.output_dir = Path(args.out)
    if getattr(args, "workers", None):
        config.workers = args.workers
    if getattr(args, "mode", None):
        config.scoring_mode = {"fourway": "fourway", "binary": "binary"}[args.mode]
        from .scoring import ScoringMode

        config.scoring_mode = ScoringMode(config.scoring_mode)
    for role, flag in (
        (ModelRole.TUMOR, "sidecar_tumor"),
        (ModelRole.STAIN, "sidecar_stain"),
        (ModelRole.SEGMENT, "sidecar_segment"),
    ):
        command = getattr(args, flag, None)
        if command:
            old = config.bindings[role]
            config.bindings[role] = ModelBinding(
                role=role,
                backend=Backend.SIDECAR,
                input_size_px=old.input_size_px,
                sidecar_command=command,
            )
    config.validate_paths()
    return config


def _slide_pair(config: RunConfig):
    he = read_slide(config.he_slide_path, config.case_id, Modality.HE)
    ihc = read_slide(config.ihc_slide_path, config.case_id, Modality.IHC)
    return he, ihc


def _build_mapping(config: RunConfig, he, ihc):
    he_spec = compute_grid_spec(he.width_px, he.height_px, config.tile_size_px)
    ihc_spec = compute_grid_spec(ihc.width_px, ihc.height_px, config.tile_size_px)
    return config.mapping.build(he_spec, ihc_spec)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_tile(args) -> int:
    config = _load_run_config(args)
    he, ihc = _slide_pair(config)
    for slide in (he, ihc):
        spec = compute_grid_spec(slide.width_px, slide.height_px, config.tile_size_px)
        grid = extract_patches(slide, spec)
        manifest = save_patch_grid(grid, config.output_dir)
        print(f"{slide.modality.value}: {spec.rows}x{spec.cols} patches -> {manifest}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load_run_config(args)
    he, ihc = _slide_pair(config)
    mapping = _build_mapping(config, he, ihc)
    case_dir = config.output_dir / config.case_id
    case_dir.mkdir(parents=True, exist_ok=True)

    patch_sink = None
    if not args.no_artifacts:
        patch_sink = render.ArtifactWriter(config.output_dir, config.case_id)

    report = run_pipeline(
        he,
        ihc,
        mapping,
        config.bindings,
        workers=config.workers,
        mode=config.scoring_mode,
        patch_sink=patch_sink,
    )

    artifacts = {}
    if patch_sink is not None:
        artifacts.update(_mosaics_from_artifacts(patch_sink, mapping.ihc_spec, case_dir))
    score_map = figures.save_score_map(report.slide, mapping.ihc_spec, case_dir / "score_map.png")
    artifacts["score_map"] = score_map.name
    report.artifacts = {k: str(v) for k, v in sorted(artifacts.items())}

    (case_dir / "report.json").write_text(report.to_json())
    (case_dir / "report.csv").write_text(report.to_csv())
    print(
        f"{config.case_id}: wsi_score {report.slide.wsi_score.text}, "
        f"coverage {report.slide.coverage_pct:.1f}%, "
        f"{report.slide.binary_status.value} -> {case_dir / 'report.json'}"
    )
    return EXIT_OK


def _mosaics_from_artifacts(sink: render.ArtifactWriter, spec, case_dir: Path) -> dict:
    mosaics_dir = case_dir / "mosaics"
    mosaics_dir.mkdir(parents=True, exist_ok=True)
    out = {}
    for kind in ("overlays", "heatmaps"):
        images = {}
        for coord in spec.coords():
            path = sink.case_dir / kind / f"r{coord.row}_c{coord.col}.png"
            images[coord] = np.asarray(Image.open(path).convert("RGB"))
        sheet = render.mosaic(images, spec, grid_lines=True)
        path = mosaics_dir / f"{kind}.png"
        Image.fromarray(sheet).save(path, format="PNG")
        out[f"mosaic_{kind}"] = str(Path("mosaics") / path.name)
    return out


def cmd_verify_mapping(args) -> int:
    config = _load_run_config(args)
    with Image.open(config.he_slide_path) as img:
        he_w, he_h = img.size
    with Image.open(config.ihc_slide_path) as img:
        ihc_w, ihc_h = img.size
    he_spec = compute_grid_spec(he_w, he_h, config.tile_size_px)
    ihc_spec = compute_grid_spec(ihc_w, ihc_h, config.tile_size_px)
    mapping = config.mapping.build(he_spec, ihc_spec)
    report = verify_bijection(mapping)
    print(
        json.dumps(
            {
                "bijective": report.bijective,
                "injective": report.injective,
                "surjective": report.surjective,
                "collisions": [
                    {"target": list(t), "sources": [list(s) for s in srcs]}
                    for t, srcs in report.collisions
                ],
                "unreached": [list(c) for c in report.unreached],
                "out_of_range": [list(c) for c in report.out_of_range],
            },
            indent=2,
        )
    )
    return EXIT_OK if report.bijective else EXIT_MAPPING


def cmd_render(args) -> int:
    out_dir = Path(args.out)
    case_dir = out_dir / args.case_id
    rendered = []
    mosaics_dir = case_dir / "mosaics"
    for modality in (Modality.HE, Modality.IHC):
        manifest = case_dir / modality.value / "manifest.json"
        if not manifest.exists():
            continue
        grid = load_patch_grid(manifest)
        sheet = render.grid_mosaic(grid, grid_lines=True)
        mosaics_dir.mkdir(parents=True, exist_ok=True)
        path = mosaics_dir / f"{modality.value}_tiles.png"
        Image.fromarray(sheet).save(path, format="PNG")
        rendered.append(path)
    if not rendered:
        raise InvalidArgumentError(f"no patch manifests under {case_dir}")
    for path in rendered:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = metrics.read_predictions(args.pred)
    if args.truth:
        truth_by_id = _read_truth(Path(args.truth))
        try:
            preds.true_labels = [truth_by_id[i] for i in preds.ids]
        except KeyError as exc:
            raise InvalidArgumentError(f"truth file lacks id {exc.args[0]!r}") from exc

    label_order = preds.labels or sorted(set(preds.true_labels) | set(preds.pred_labels))
    matrix = metrics.confusion(preds.true_labels, preds.pred_labels, label_order)
    per_label = {}
    for label in label_order:
        binary = matrix if len(label_order) == 2 else metrics.one_vs_rest(matrix, label)
        per_label[label] = metrics.classification_metrics(binary, label).as_dict()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "samples": matrix.total,
        "labels": label_order,
        "confusion": [[int(v) for v in row] for row in matrix.counts],
        "per_label": per_label,
    }

    roc_curves, dca_curves = {}, {}
    if args.roc or args.dca:
        if not preds.probabilities:
            raise InvalidArgumentError("prediction file has no prob_<label> columns")
    if args.roc:
        for label in preds.labels:
            curve = metrics.roc(preds.binary_scores(label))
            roc_curves[label] = curve
            (out_dir / f"roc_{label}.csv").write_text(metrics.roc_csv(curve))
        payload["auc"] = {label: curve.auc for label, curve in roc_curves.items()}
        figures.save_roc_figure(roc_curves, out_dir / "roc.png")
    if args.dca:
        for label in preds.labels:
            curve = metrics.dca(preds.binary_scores(label))
            dca_curves[label] = curve
            (out_dir / f"dca_{label}.csv").write_text(metrics.dca_csv(curve))
        figures.save_dca_figure(dca_curves, out_dir / "dca.png")

    figures.save_confusion_figure(matrix, out_dir / "confusion.png")
    (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {out_dir / 'metrics.json'}")
    return EXIT_OK


def _read_truth(path: Path) -> dict:
    if not path.exists():
        raise InvalidArgumentError(f"truth file not found: {path}")
    import csv

    out = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "true_label"]:
            raise InvalidArgumentError(f"{path}: line 1: header must start with id,true_label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise InvalidArgumentError(f"{path}: line {lineno}: expected id,true_label")
            out[row[0]] = row[1]
    return out


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_run_options(sub, include_workers=True):
    sub.add_argument("--config", help="TOML run config")
    sub.add_argument("--he-slide", help="H&E slide raster (PNG/TIFF)")
    sub.add_argument("--ihc-slide", help="IHC slide raster (PNG/TIFF)")
    sub.add_argument("--case-id", help="case identifier (default: H&E file stem)")
    sub.add_argument("--tile-size", type=int, help="patch edge in pixels (default 512)")
    sub.add_argument("--out", help="output directory")
    if include_workers:
        sub.add_argument("--workers", type=int, help="worker count (default 1)")
        sub.add_argument("--mode", choices=["fourway", "binary"], help="scoring mode")
        sub.add_argument("--sidecar-tumor", help="sidecar command for the tumor classifier")
        sub.add_argument("--sidecar-stain", help="sidecar command for the stain classifier")
        sub.add_argument("--sidecar-segment", help="sidecar command for the segmenter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="her2score",
        description="Patch-grid HER2 scoring of paired H&E/IHC slide rasters",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    tile = subs.add_parser("tile", help="tile both slides into patch directories")
    _add_run_options(tile, include_workers=False)
    tile.set_defaults(func=cmd_tile)

    run = subs.add_parser("run", help="score a case end to end")
    _add_run_options(run)
    run.add_argument("--no-artifacts", action="store_true", help="skip per-patch PNGs")
    run.set_defaults(func=cmd_run)

    verify = subs.add_parser("verify-mapping", help="check the inter-modality mapping")
    _add_run_options(verify, include_workers=False)
    verify.set_defaults(func=cmd_verify_mapping)

    rend = subs.add_parser("render", help="render mosaics from tiled patches")
    rend.add_argument("--out", required=True, help="output directory used by tile/run")
    rend.add_argument("--case-id", required=True)
    rend.set_defaults(func=cmd_render)

    ev = subs.add_parser("eval", help="evaluate a prediction CSV")
    ev.add_argument("--pred", required=True, help="CSV: id,true_label,pred_label,prob_<label>...")
    ev.add_argument("--truth", help="optional CSV overriding true labels: id,true_label")
    ev.add_argument("--out", default="eval_out", help="output directory")
    ev.add_argument("--roc", action="store_true", help="emit ROC curves and AUC")
    ev.add_argument("--dca", action="store_true", help="emit decision curve analysis")
    ev.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidArgumentError, IncompleteGridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MappingOutOfRangeError, NotInvertibleError) as exc:
        print(f"mapping error: {exc}", file=sys.stderr)
        return EXIT_MAPPING
    except (BackendUnavailableError, ProtocolViolationError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except UndefinedRocError as exc:
        print(f"metric error: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
