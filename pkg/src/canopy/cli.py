"""Operator entry points: ``canopy tile | detect | eval | convert``.

Every flag has a config-file equivalent (TOML with ``[pipeline]``,
``[predictor]`` and ``[eval]`` sections); flags override the file. The
effective configuration is echoed into the run manifest. Exit codes:
0 success, 2 config error, 3 I/O error, 4 predictor error, 5 internal
error.
"""

from __future__ import annotations

import os
import sys
import time
import traceback
from pathlib import Path
from typing import Dict, List, Optional

import click

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import canonical, detections_io, evaluation
from .errors import (CanopyError, ConfigError, ParseError, PredictorError,
                     ProtocolError, RasterError)
from .pipeline import PipelineConfig, run
from .raster import load_raster, read_window, save_png
from .tiling import plan_tiles

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PREDICTOR = 4
EXIT_INTERNAL = 5

PREDICTOR_ENV_VAR = "CANOPY_PREDICTOR"


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc


def _pick(flag_value, section: dict, key: str, default):
    """Effective value: flag beats config file beats built-in default."""
    if flag_value is not None:
        return flag_value
    if key in section:
        return section[key]
    return default


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_manifest(path: Path, doc: dict) -> None:
    _atomic_write(path, canonical.dumps(doc) + "\n")


@click.group(name="canopy")
def cli() -> None:
    """Zero-shot tree crown delineation pipeline."""


@cli.command("detect")
@click.option("--image", "image_path", required=True, help="Input PNG or GeoTIFF.")
@click.option("--out", "out_path", required=True, help="Output detections GeoJSON.")
@click.option("--image-id", default=None, help="Image id recorded in outputs "
              "(default: image filename stem).")
@click.option("--config", "config_path", default=None, help="TOML config file.")
@click.option("--manifest", "manifest_path", default=None,
              help="Run manifest path (default: <out>.manifest.json).")
@click.option("--predictor", default=None,
              help="Predictor command, or 'oracle' for the built-in test segmenter "
                   f"(default: ${PREDICTOR_ENV_VAR}).")
@click.option("--tile-size", type=int, default=None)
@click.option("--overlap", type=int, default=None)
@click.option("--points-per-side", type=int, default=None)
@click.option("--prompt-mode", type=click.Choice(["automatic-grid", "bbox-prompted"]),
              default=None)
@click.option("--prompt-boxes", default=None,
              help="Detections file (GeoJSON or CSV) supplying box prompts; "
                   "implies --prompt-mode bbox-prompted.")
@click.option("--prompt-min-score", type=float, default=None)
@click.option("--nms-iou", type=float, default=None)
@click.option("--nms-mode", type=click.Choice(["polygon", "bbox"]), default=None)
@click.option("--min-score", type=float, default=None)
@click.option("--min-area-px", type=float, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--timeout", type=float, default=None, help="Per-request predictor timeout (s).")
@click.option("--oracle-threshold", type=float, default=None,
              help="Luminance threshold of the built-in oracle predictor.")
@click.option("--predictor-param", "predictor_params", multiple=True,
              help="key=value passed through to the predictor (repeatable).")
@click.option("--frame", type=click.Choice(["auto", "pixel", "world"]), default=None,
              help="Output frame: auto = world when geo-referenced, else pixel.")
def cmd_detect(image_path, out_path, image_id, config_path, manifest_path, predictor,
               tile_size, overlap, points_per_side, prompt_mode, prompt_boxes,
               prompt_min_score, nms_iou, nms_mode, min_score, min_area_px, workers,
               timeout, oracle_threshold, predictor_params, frame) -> None:
    """Run the delineation pipeline on one image."""
    file_cfg = _load_config_file(config_path)
    pipe_cfg = file_cfg.get("pipeline", {})
    pred_cfg = file_cfg.get("predictor", {})

    params: Dict[str, str] = {str(k): str(v) for k, v in pred_cfg.get("params", {}).items()}
    for item in predictor_params:
        if "=" not in item:
            raise ConfigError(f"--predictor-param expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        params[key] = value

    prompt_boxes = _pick(prompt_boxes, pipe_cfg, "prompt_boxes", None)
    mode_default = "bbox-prompted" if prompt_boxes else "automatic-grid"
    command = _pick(predictor, pred_cfg, "command",
                    os.environ.get(PREDICTOR_ENV_VAR, "")) or ""

    config = PipelineConfig(
        tile_size=int(_pick(tile_size, pipe_cfg, "tile_size", 1024)),
        overlap=int(_pick(overlap, pipe_cfg, "overlap", 128)),
        points_per_side=int(_pick(points_per_side, pipe_cfg, "points_per_side", 32)),
        prompt_mode=_pick(prompt_mode, pipe_cfg, "prompt_mode", mode_default),
        prompt_detections_path=prompt_boxes,
        prompt_min_score=float(_pick(prompt_min_score, pipe_cfg, "prompt_min_score", 0.1)),
        nms_iou=float(_pick(nms_iou, pipe_cfg, "nms_iou", 0.05)),
        nms_mode=_pick(nms_mode, pipe_cfg, "nms_mode", "polygon"),
        min_score=float(_pick(min_score, pipe_cfg, "min_score", 0.1)),
        min_area_px=float(_pick(min_area_px, pipe_cfg, "min_area_px", 0.0)),
        predictor_command=str(command),
        predictor_params=params,
        predictor_timeout=float(_pick(timeout, pred_cfg, "timeout", 300.0)),
        oracle_threshold=float(_pick(oracle_threshold, pred_cfg, "oracle_threshold", 128.0)),
        worker_count=int(_pick(workers, pipe_cfg, "workers", 1)),
    )
    config.validate()
    out_frame = _pick(frame, pipe_cfg, "frame", "auto")
    if out_frame not in ("auto", "pixel", "world"):
        raise ConfigError(f"frame must be auto, pixel or world, got {out_frame!r}")
    image_id = image_id or Path(image_path).stem
    manifest_file = Path(manifest_path) if manifest_path else Path(out_path + ".manifest.json")

    raster = load_raster(image_path)
    tiles: List[dict] = []
    started = time.time()
    manifest: dict = {
        "tool": "canopy detect",
        "status": "failed",
        "error": None,
        "inputs": {"image": str(image_path), "prompt_boxes": prompt_boxes,
                   "config_file": config_path},
        "outputs": {"detections": str(out_path), "frame": out_frame},
        "config": config.to_json_value(),
        "predictor": config.predictor_command,
        "timing": {"started_at_unix": started, "elapsed_seconds": 0.0},
        "tiles": tiles,
    }
    try:
        dset = run(raster, config, image_id=image_id,
                   on_tile=lambda status: tiles.append(status))
        if out_frame == "world" or (out_frame == "auto" and dset.geo_transform is not None):
            out_set = dset.to_world()
            manifest["outputs"]["frame"] = "world"
        else:
            out_set = dset
            manifest["outputs"]["frame"] = "pixel"
        detections_io.write_detections(out_set, out_path)
    except BaseException as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["timing"]["elapsed_seconds"] = time.time() - started
        tiles.sort(key=lambda t: t["tile_index"])
        _write_manifest(manifest_file, manifest)
        raise
    manifest["status"] = "ok"
    manifest["timing"]["elapsed_seconds"] = time.time() - started
    tiles.sort(key=lambda t: t["tile_index"])
    _write_manifest(manifest_file, manifest)
    click.echo(f"wrote {len(out_set.detections)} detections to {out_path} "
               f"({manifest['outputs']['frame']} frame); manifest: {manifest_file}")


@cli.command("eval")
@click.option("--pred", "pred_path", required=True, help="Detections file (GeoJSON or CSV).")
@click.option("--gt", "gt_path", required=True, help="Ground truth (CSV or GeoJSON).")
@click.option("--report", "report_path", default=None, help="Write the JSON report here.")
@click.option("--config", "config_path", default=None, help="TOML config file.")
@click.option("--iou", "iou_threshold", type=float, default=None,
              help="Matching IOU threshold (default 0.4).")
@click.option("--min-score", type=float, default=None,
              help="Minimum detection confidence (default 0.1).")
def cmd_eval(pred_path, gt_path, report_path, config_path, iou_threshold, min_score) -> None:
    """Score detections against ground truth (per-image P/R, macro average)."""
    file_cfg = _load_config_file(config_path).get("eval", {})
    cfg = evaluation.EvalConfig(
        iou_threshold=float(_pick(iou_threshold, file_cfg, "iou_threshold", 0.4)),
        min_score=float(_pick(min_score, file_cfg, "min_score", 0.1)))
    if Path(pred_path).suffix.lower() == ".csv":
        preds = detections_io.read_csv_detections(pred_path)
    else:
        pred_sets = detections_io.read_detections_grouped(pred_path)
        for dset in pred_sets.values():
            if dset.frame != "image":
                raise ConfigError(f"{pred_path} is in the {dset.frame!r} frame; "
                                  f"evaluation needs image-pixel detections")
        preds = {image_id: list(s.detections) for image_id, s in pred_sets.items()}
    gts = evaluation.read_ground_truth(gt_path)
    preds_by_image = {image_id: preds.get(image_id, []) for image_id in gts}
    extra = sorted(set(preds) - set(gts))
    if extra:
        click.echo(f"warning: ignoring {len(extra)} image(s) without ground truth: "
                   f"{', '.join(extra[:5])}{'...' if len(extra) > 5 else ''}", err=True)
    full_preds = dict(preds_by_image)
    for image_id in extra:
        full_preds[image_id] = preds[image_id]
    report = evaluation.evaluate(full_preds, gts, cfg)
    if report_path:
        evaluation.write_report(report, cfg, report_path)
    click.echo(report.to_text_table())


@cli.command("tile")
@click.option("--image", "image_path", required=True)
@click.option("--out-dir", "out_dir", required=True)
@click.option("--config", "config_path", default=None)
@click.option("--tile-size", type=int, default=None)
@click.option("--overlap", type=int, default=None)
def cmd_tile(image_path, out_dir, config_path, tile_size, overlap) -> None:
    """Write tile PNGs plus the tiling plan JSON (debug utility)."""
    pipe_cfg = _load_config_file(config_path).get("pipeline", {})
    tile_size = int(_pick(tile_size, pipe_cfg, "tile_size", 1024))
    overlap = int(_pick(overlap, pipe_cfg, "overlap", 128))
    raster = load_raster(image_path)
    plan = plan_tiles(raster.width, raster.height, tile_size, overlap)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for idx, window in enumerate(plan.windows):
        save_png(read_window(raster, window), out / f"tile_{idx:05d}.png")
    doc = {"image": str(image_path), "width": raster.width, "height": raster.height}
    doc.update(plan.to_json_value())
    _atomic_write(out / "plan.json", canonical.dumps(doc) + "\n")
    click.echo(f"wrote {len(plan.windows)} tiles and plan.json to {out}")


@cli.command("convert")
@click.option("--in", "in_path", required=True, help="Input detections (GeoJSON or CSV).")
@click.option("--out", "out_path", required=True, help="Output detections (GeoJSON or CSV).")
def cmd_convert(in_path, out_path) -> None:
    """Convert detections between GeoJSON and DeepForest-style CSV."""
    src, dst = Path(in_path), Path(out_path)
    grouped = detections_io.read_detections_any(src)
    if dst.suffix.lower() == ".csv":
        detections_io.write_csv_detections(grouped, dst)
    else:
        provenance = {"tool": "canopy convert", "source_format": src.suffix.lstrip(".").lower(),
                      "source": src.name}
        detections_io.write_detections_grouped(grouped, dst, frame="image",
                                               provenance=provenance)
    total = sum(len(v) for v in grouped.values())
    click.echo(f"converted {total} detections from {src} to {dst}")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (RasterError, ParseError, FileNotFoundError, OSError)):
        return EXIT_IO
    if isinstance(exc, (PredictorError, ProtocolError)):
        return EXIT_PREDICTOR
    return EXIT_INTERNAL


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return EXIT_CONFIG
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return EXIT_CONFIG
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except CanopyError as exc:
        click.echo(f"canopy: error: {exc}", err=True)
        return exit_code_for(exc)
    except OSError as exc:
        click.echo(f"canopy: I/O error: {exc}", err=True)
        return EXIT_IO
    except Exception as exc:
        click.echo(f"canopy: internal error: {type(exc).__name__}: {exc}", err=True)
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
