"""Command-line tool wrapping the library end to end.

Subcommands:
    synth        sample a synthetic dataset: ground-truth label files plus
                 per-frame measurement files
    shape-learn  fit the morphable landmark model to a dataset's landmarks
    fit          refine every measurement file into predicted label files
                 with confidence scores, plus per-instance diagnostics
    eval         score predicted labels against ground-truth labels
    ablate       fit all four energy variants and tabulate the comparison

Configuration precedence: command-line flag, then a `key = value` line in
the --config file, then the built-in default.  The effective configuration
is echoed to <out>/manifest.cfg by every run that writes files.

All outputs are plain text.  Floats use shortest round-trip formatting,
every file is written to a temp name and renamed into place, and parallel
work is collected in frame order, so reruns are byte-identical for a fixed
seed at any --jobs setting.

Exit status: 0 on full success; 1 on any failure (bad configuration, I/O,
mismatched frame sets, or per-instance fit failures -- the run still
completes and records what it can); 2 for command-line usage errors.
"""
from __future__ import annotations

import argparse
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from .energy import ABLATION_VARIANTS, EnergyConfig, Measurement
from .geometry import BehindCameraError, Box2D, CameraIntrinsics, GroundPlane, footprint
from .metrics import DIFFICULTIES, alp, ap_2d_aos, ap_3d, ap_bev, pr_curve
from .refine import InitializationError, SolverOptions, refine_ablation
from .scene_io import (
    CAR_MODEL,
    GenerationError,
    LabelFormatError,
    NoiseSpec,
    SceneParams,
    emit_labels,
    format_config,
    generate_scene,
    label_to_pose,
    parse_config_text,
    parse_labels,
    pose_to_label,
    read_config,
)
from .shape import InsufficientDataError, LandmarkObservations, LearnOptions, learn_em, load_model, save_model


class CLIError(RuntimeError):
    """User-facing failure: reported to stderr, exit status 1."""


# ---------------------------------------------------------------------------
# Option plumbing: one table per subcommand, shared by argparse and the
# config-file reader so precedence is uniform.
# ---------------------------------------------------------------------------

def _as_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _as_float_or_none(text: str):
    lowered = str(text).strip().lower()
    return None if lowered == "none" else float(text)


def _as_float_list(text: str) -> tuple:
    values = tuple(float(part) for part in str(text).split(",") if part.strip())
    if not values:
        raise ValueError("expected a comma-separated list of numbers")
    return values


def _fmt_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


# (name, converter, default, help); name uses underscores, the flag dashes
_COMMON_FIT = [
    ("variant", str, "v4", "energy variant v1..v4"),
    ("jobs", int, 1, "worker processes for per-frame work"),
    ("lambda1", float, 0.3, "landmark term weight"),
    ("lambda2", float, 0.001, "depth term weight"),
    ("lambda3", float, 10.0, "ground-plane term weight"),
    ("lambda4", float, 8.0, "shape-regularity term weight"),
    ("max_iterations", int, 50, "solver iteration cap"),
]

_OPTIONS = {
    "synth": [
        ("seed", int, None, "dataset seed (required)"),
        ("frames", int, 50, "number of frames to generate"),
        ("instances", int, 5, "instances per frame"),
        ("with_depth", _as_bool, True, "include a crop-depth pseudo-measurement"),
        ("landmark_px", float, 2.0, "landmark noise, pixels"),
        ("occlusion_rate", float, 0.2, "landmark drop probability"),
        ("box_px", float, 3.0, "2D box corner noise, pixels"),
        ("theta_deg", float, 8.0, "yaw hypothesis noise, degrees"),
        ("sigma_log", float, 0.1, "log-extent hypothesis noise"),
        ("depth_rel", float, 0.07, "relative depth noise"),
    ],
    "shape-learn": [
        ("data", str, None, "dataset directory from synth (required)"),
        ("basis", int, 2, "number of basis shapes"),
        ("max_iterations", int, 500, "EM iteration cap"),
        ("tol", float, 1e-6, "relative log-likelihood stop"),
    ],
    "fit": [("data", str, None, "dataset directory from synth (required)"),
            ("model", str, None, "morphable model file (default: built-in)")]
    + _COMMON_FIT,
    "eval": [
        ("pred", str, None, "predicted labels: directory or fit output (required)"),
        ("gt", str, None, "ground-truth labels: directory or dataset (required)"),
        ("alp_thresholds", _as_float_list, (1.0, 2.0, 3.0), "ALP meters, comma-separated"),
        ("iou3d_thresholds", _as_float_list, (0.25, 0.5, 0.7), "3D IoU thresholds"),
        ("bev_thresholds", _as_float_list, (0.5, 0.7), "bird's-eye IoU thresholds"),
        ("iou2d_threshold", float, 0.7, "2D AP/AOS IoU threshold"),
        ("alp_gate", _as_float_or_none, 0.7, "2D IoU gate for ALP, or 'none'"),
        ("points", int, 11, "AP interpolation points (11 or 41)"),
        ("curves", _as_bool, False, "write PR curve point files"),
        ("plot_data", _as_bool, False, "write footprint/wireframe polylines"),
    ],
    "ablate": [
        ("data", str, None, "dataset directory from synth (required)"),
        ("model", str, None, "morphable model file (default: built-in)"),
        ("jobs", int, 1, "worker processes"),
        ("lambda1", float, 0.3, "landmark term weight"),
        ("lambda2", float, 0.001, "depth term weight"),
        ("lambda3", float, 10.0, "ground-plane term weight"),
        ("lambda4", float, 8.0, "shape-regularity term weight"),
        ("max_iterations", int, 50, "solver iteration cap"),
        ("alp_threshold", float, 1.0, "ALP distance for the table, meters"),
        ("iou3d_threshold", float, 0.25, "3D IoU for the table"),
        ("bev_threshold", float, 0.5, "bird's-eye IoU for the table"),
        ("points", int, 11, "AP interpolation points"),
    ],
}


def _resolve_options(command: str, args) -> dict:
    table = _OPTIONS[command]
    file_cfg = {}
    if args.config:
        try:
            file_cfg = read_config(args.config)
        except (OSError, ValueError) as exc:
            raise CLIError(f"cannot read config {args.config}: {exc}")
    known = {name for name, _, _, _ in table} | {"command", "out"}
    unknown = sorted(set(file_cfg) - known)
    if unknown:
        raise CLIError(f"unknown config keys: {', '.join(unknown)}")
    effective = {}
    for name, conv, default, _ in table:
        cli_value = getattr(args, name)
        if cli_value is not None:
            effective[name] = cli_value
        elif name in file_cfg:
            try:
                effective[name] = conv(file_cfg[name])
            except ValueError as exc:
                raise CLIError(f"config key {name}: {exc}")
        else:
            effective[name] = default
    return effective


def _require(effective: dict, command: str, *names):
    for name in names:
        if effective.get(name) is None:
            raise CLIError(f"{command} requires --{name.replace('_', '-')}")


# ---------------------------------------------------------------------------
# File helpers.
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_manifest(out_dir: Path, command: str, effective: dict) -> None:
    payload = {"command": command}
    payload.update({k: _fmt_value(v) for k, v in effective.items()})
    _atomic_write(out_dir / "manifest.cfg", format_config(payload))


def _labels_dir(path_text: str) -> Path:
    path = Path(path_text)
    if (path / "labels").is_dir():
        return path / "labels"
    if path.is_dir():
        return path
    raise CLIError(f"no label directory at {path}")


def _read_label_file(path: Path):
    try:
        return parse_labels(path.read_text(encoding="utf-8"))
    except LabelFormatError as exc:
        raise CLIError(f"{path}: {exc}")
    except OSError as exc:
        raise CLIError(str(exc))


# ---------------------------------------------------------------------------
# Measurement files: one per frame, carrying the camera, ground plane and
# each instance's pseudo-measurements in `key = value` form.
# ---------------------------------------------------------------------------

def _measurements_text(cam: CameraIntrinsics, ground: GroundPlane, measurements) -> str:
    payload = {
        "camera": " ".join(repr(v) for v in (cam.fx, cam.fy, cam.cx, cam.cy)),
        "ground": " ".join(repr(float(v)) for v in ground.N),
        "instances": str(len(measurements)),
    }
    for i, meas in enumerate(measurements):
        prefix = f"i{i}."
        corners = meas.box2d.corners()
        payload[prefix + "box"] = " ".join(repr(float(v)) for v in corners)
        payload[prefix + "theta0"] = repr(float(meas.theta0))
        payload[prefix + "sigma0"] = " ".join(repr(float(v)) for v in meas.sigma0)
        payload[prefix + "landmarks"] = " ".join(
            repr(float(v)) for v in meas.landmarks_uv.reshape(-1)
        )
        payload[prefix + "visible"] = " ".join(
            "1" if v else "0" for v in meas.landmarks_visible
        )
        if meas.depth_zb is not None:
            payload[prefix + "depth"] = repr(float(meas.depth_zb))
    return format_config(payload)


def _measurements_from_text(text: str):
    mapping = parse_config_text(text)
    fx, fy, cx, cy = (float(v) for v in mapping["camera"].split())
    cam = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)
    ground = GroundPlane(N=np.array([float(v) for v in mapping["ground"].split()]))
    measurements = []
    for i in range(int(mapping["instances"])):
        prefix = f"i{i}."
        left, top, right, bottom = (float(v) for v in mapping[prefix + "box"].split())
        uv = np.array([float(v) for v in mapping[prefix + "landmarks"].split()])
        visible = np.array([v == "1" for v in mapping[prefix + "visible"].split()])
        depth = float(mapping[prefix + "depth"]) if prefix + "depth" in mapping else None
        measurements.append(
            Measurement(
                box2d=Box2D.from_corners(left, top, right, bottom),
                landmarks_uv=uv.reshape(-1, 2),
                landmarks_visible=visible,
                theta0=float(mapping[prefix + "theta0"]),
                sigma0=np.array([float(v) for v in mapping[prefix + "sigma0"].split()]),
                ground=ground,
                cam=cam,
                depth_zb=depth,
            )
        )
    return cam, ground, measurements


# ---------------------------------------------------------------------------
# Tables.
# ---------------------------------------------------------------------------

def render_table(title: str, headers, rows) -> str:
    """Aligned plain-text table; None renders as '-'.

    rows are (label, values) with one value per non-label header.
    """
    def cell(value):
        if value is None:
            return "-"
        if isinstance(value, str):
            return value
        return f"{value:.4f}"

    grid = [[str(h) for h in headers]]
    for label, values in rows:
        grid.append([str(label)] + [cell(v) for v in values])
    widths = [max(len(row[c]) for row in grid) for c in range(len(grid[0]))]
    lines = [title]
    for row in grid:
        first = row[0].ljust(widths[0])
        rest = "  ".join(cell.rjust(widths[c + 1]) for c, cell in enumerate(row[1:]))
        lines.append((first + "  " + rest).rstrip())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(effective: dict, out_dir: Path) -> int:
    _require(effective, "synth", "seed")
    noise = NoiseSpec(
        landmark_px_sigma=effective["landmark_px"],
        landmark_occlusion_rate=effective["occlusion_rate"],
        box_px_sigma=effective["box_px"],
        theta_sigma_deg=effective["theta_deg"],
        sigma_log_sigma=effective["sigma_log"],
        depth_rel_sigma=effective["depth_rel"],
    )
    params = SceneParams(
        n_instances=effective["instances"], with_depth=effective["with_depth"]
    )
    labels_dir = out_dir / "labels"
    meas_dir = out_dir / "meas"
    labels_dir.mkdir(parents=True, exist_ok=True)
    meas_dir.mkdir(parents=True, exist_ok=True)
    for index in range(effective["frames"]):
        try:
            scene, measurements, labels = generate_scene(
                params, noise, [effective["seed"], index]
            )
        except GenerationError as exc:
            raise CLIError(f"frame {index}: {exc}")
        name = f"{index:06d}"
        _atomic_write(labels_dir / (name + ".txt"), emit_labels(labels))
        _atomic_write(
            meas_dir / (name + ".cfg"),
            _measurements_text(scene.camera, scene.ground, measurements),
        )
    _write_manifest(out_dir, "synth", effective)
    print(f"wrote {effective['frames']} frames to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# fit (worker runs per frame; parent writes in frame order)
# ---------------------------------------------------------------------------

def _fit_frame_task(task):
    frame_id, meas_text, variant, model, lambdas, max_iterations = task
    cam, _, measurements = _measurements_from_text(meas_text)
    base = EnergyConfig(
        lambda1=lambdas[0], lambda2=lambdas[1], lambda3=lambdas[2], lambda4=lambdas[3]
    )
    opts = SolverOptions(max_iterations=max_iterations)
    records = []
    diag = {"variant": variant}
    failures = 0
    for i, meas in enumerate(measurements):
        prefix = f"i{i}."
        try:
            result = refine_ablation(meas, model, variant, opts=opts, base=base)
        except (InitializationError, ValueError) as exc:
            diag[prefix + "error"] = str(exc)
            failures += 1
            continue
        pose = result.vars.pose()
        score = 1.0 / (1.0 + result.final_energy)
        try:
            records.append(pose_to_label(pose, cam, score=score))
        except BehindCameraError:
            diag[prefix + "error"] = "refined box projects behind the camera"
            failures += 1
            continue
        diag[prefix + "converged"] = _fmt_value(bool(result.converged))
        diag[prefix + "iterations"] = str(result.iterations)
        diag[prefix + "reason"] = result.reason
        diag[prefix + "energy"] = repr(float(result.final_energy))
        for term, value in sorted(result.breakdown.items()):
            diag[prefix + "energy_" + term] = repr(float(value))
    diag["failures"] = str(failures)
    return frame_id, emit_labels(records), format_config(diag), failures


def _parallel_map(fn, tasks, jobs: int):
    if jobs > 1 and len(tasks) > 1:
        with multiprocessing.get_context("fork").Pool(processes=jobs) as pool:
            return pool.map(fn, tasks, chunksize=1)
    return [fn(task) for task in tasks]


def _load_fit_model(model_path):
    if model_path:
        try:
            return load_model(model_path)
        except (OSError, ValueError) as exc:
            raise CLIError(f"cannot load model {model_path}: {exc}")
    return CAR_MODEL


def _run_fit(effective: dict, out_dir: Path, variant: str) -> int:
    data = Path(effective["data"])
    meas_files = sorted((data / "meas").glob("*.cfg"))
    if not meas_files:
        raise CLIError(f"no measurement files under {data / 'meas'}")
    model = _load_fit_model(effective.get("model"))
    lambdas = tuple(effective[f"lambda{k}"] for k in (1, 2, 3, 4))
    tasks = [
        (path.stem, path.read_text(encoding="utf-8"), variant, model, lambdas,
         effective["max_iterations"])
        for path in meas_files
    ]
    results = _parallel_map(_fit_frame_task, tasks, effective["jobs"])
    labels_dir = out_dir / "labels"
    diag_dir = out_dir / "diag"
    labels_dir.mkdir(parents=True, exist_ok=True)
    diag_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for frame_id, labels_text, diag_text, frame_failures in results:
        _atomic_write(labels_dir / (frame_id + ".txt"), labels_text)
        _atomic_write(diag_dir / (frame_id + ".cfg"), diag_text)
        failures += frame_failures
    return failures


def cmd_fit(effective: dict, out_dir: Path) -> int:
    _require(effective, "fit", "data")
    if effective["variant"] not in ABLATION_VARIANTS:
        raise CLIError(f"unknown variant {effective['variant']!r}")
    failures = _run_fit(effective, out_dir, effective["variant"])
    _write_manifest(out_dir, "fit", effective)
    print(f"fit complete: {failures} instance failure(s); outputs in {out_dir}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _paired_frames(pred_dir: Path, gt_dir: Path):
    pred_ids = {p.stem: p for p in pred_dir.glob("*.txt")}
    gt_ids = {p.stem: p for p in gt_dir.glob("*.txt")}
    missing_pred = sorted(set(gt_ids) - set(pred_ids))
    missing_gt = sorted(set(pred_ids) - set(gt_ids))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append("missing predictions for: " + ", ".join(missing_pred))
        if missing_gt:
            parts.append("missing ground truth for: " + ", ".join(missing_gt))
        raise CLIError("frame sets differ; " + "; ".join(parts))
    if not gt_ids:
        raise CLIError(f"no label files under {gt_dir}")
    frames = []
    order = sorted(gt_ids)
    for frame_id in order:
        frames.append(
            (tuple(_read_label_file(pred_ids[frame_id])),
             tuple(_read_label_file(gt_ids[frame_id])))
        )
    return order, frames


def _metric_tables(frames, effective: dict):
    points = effective["points"]
    gate = effective["alp_gate"]
    header = ["", *DIFFICULTIES]
    blocks = []
    rows = []
    for threshold in effective["alp_thresholds"]:
        rows.append((f"{threshold:g} m", [
            alp(frames, threshold, d, gate_iou=gate, points=points)
            for d in DIFFICULTIES
        ]))
    blocks.append(render_table("average localization precision (3D center distance)",
                               header, rows))
    rows = []
    for threshold in effective["iou3d_thresholds"]:
        rows.append((f"IoU {threshold:g}", [
            ap_3d(frames, threshold, d, points=points) for d in DIFFICULTIES
        ]))
    blocks.append(render_table("average precision, 3D IoU", header, rows))
    rows = []
    for threshold in effective["bev_thresholds"]:
        rows.append((f"IoU {threshold:g}", [
            ap_bev(frames, threshold, d, points=points) for d in DIFFICULTIES
        ]))
    blocks.append(render_table("average precision, bird's-eye IoU", header, rows))
    threshold = effective["iou2d_threshold"]
    pairs = {d: ap_2d_aos(frames, threshold, d, points=points) for d in DIFFICULTIES}
    rows = [
        (f"AP  IoU {threshold:g}", [pairs[d][0] for d in DIFFICULTIES]),
        (f"AOS IoU {threshold:g}", [pairs[d][1] for d in DIFFICULTIES]),
    ]
    blocks.append(render_table("2D detection", header, rows))
    return "\n".join(blocks)


def _write_curves(frames, effective: dict, out_dir: Path) -> None:
    curve_dir = out_dir / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for threshold in effective["alp_thresholds"]:
        jobs.append(("alp", threshold, effective["alp_gate"]))
    for threshold in effective["iou3d_thresholds"]:
        jobs.append(("ap3d", threshold, None))
    for threshold in effective["bev_thresholds"]:
        jobs.append(("apbev", threshold, None))
    jobs.append(("ap2d", effective["iou2d_threshold"], None))
    for metric, threshold, gate in jobs:
        for difficulty in DIFFICULTIES:
            curve = pr_curve(frames, metric, threshold, difficulty,
                             gate_iou=gate, points=effective["points"])
            if curve is None:
                continue
            payload = {
                "metric": metric,
                "threshold": repr(float(threshold)),
                "difficulty": difficulty,
                "ap": repr(float(curve.ap)),
                "aos": repr(float(curve.aos)),
                "thresholds": " ".join(repr(float(v)) for v in curve.thresholds),
                "recall": " ".join(repr(float(v)) for v in curve.recall),
                "precision": " ".join(repr(float(v)) for v in curve.precision),
                "similarity": " ".join(repr(float(v)) for v in curve.similarity),
            }
            name = f"{metric}_{threshold:g}_{difficulty}.cfg"
            _atomic_write(curve_dir / name, format_config(payload))


def _record_plot_entries(payload: dict, prefix: str, record) -> None:
    # closed ground-plane outline (x z pairs) plus the image-plane box
    left, top, right, bottom = record.bbox
    payload[prefix + "bbox"] = " ".join(repr(float(v)) for v in (left, top, right, bottom))
    if min(record.dimensions) <= 0:
        return
    feet = footprint(label_to_pose(record))
    ring = np.vstack([feet, feet[:1]]).reshape(-1)
    payload[prefix + "bev"] = " ".join(repr(float(v)) for v in ring)


def _write_plot_data(order, frames, out_dir: Path) -> None:
    plot_dir = out_dir / "plot"
    plot_dir.mkdir(parents=True, exist_ok=True)
    for frame_id, (dets, gts) in zip(order, frames):
        payload = {}
        for i, det in enumerate(dets):
            _record_plot_entries(payload, f"pred{i}.", det)
        for i, gt in enumerate(gts):
            _record_plot_entries(payload, f"gt{i}.", gt)
        _atomic_write(plot_dir / (frame_id + ".cfg"), format_config(payload))


def cmd_eval(effective: dict, out_dir: Path | None) -> int:
    _require(effective, "eval", "pred", "gt")
    if effective["points"] < 2:
        raise CLIError("points must be at least 2")
    order, frames = _paired_frames(
        _labels_dir(effective["pred"]), _labels_dir(effective["gt"])
    )
    text = _metric_tables(frames, effective)
    print(text, end="")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write(out_dir / "eval.txt", text)
        if effective["curves"]:
            _write_curves(frames, effective, out_dir)
        if effective["plot_data"]:
            _write_plot_data(order, frames, out_dir)
        _write_manifest(out_dir, "eval", effective)
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def cmd_ablate(effective: dict, out_dir: Path) -> int:
    _require(effective, "ablate", "data")
    gt_dir = _labels_dir(effective["data"])
    total_failures = 0
    per_variant = {}
    for variant in ABLATION_VARIANTS:
        variant_dir = out_dir / f"fit_{variant}"
        total_failures += _run_fit(effective, variant_dir, variant)
        _, frames = _paired_frames(variant_dir / "labels", gt_dir)
        per_variant[variant] = frames
    points = effective["points"]
    tables = []
    for title, fn in (
        (f"ALP @ {effective['alp_threshold']:g} m",
         lambda fr, d: alp(fr, effective["alp_threshold"], d, points=points)),
        (f"AP 3D IoU @ {effective['iou3d_threshold']:g}",
         lambda fr, d: ap_3d(fr, effective["iou3d_threshold"], d, points=points)),
        (f"AP bird's-eye IoU @ {effective['bev_threshold']:g}",
         lambda fr, d: ap_bev(fr, effective["bev_threshold"], d, points=points)),
    ):
        rows = [
            (variant, [fn(per_variant[variant], d) for d in DIFFICULTIES])
            for variant in ABLATION_VARIANTS
        ]
        tables.append(render_table(title, ["", *DIFFICULTIES], rows))
    text = "\n".join(tables)
    print(text, end="")
    _atomic_write(out_dir / "ablation.txt", text)
    _write_manifest(out_dir, "ablate", effective)
    return 1 if total_failures else 0


# ---------------------------------------------------------------------------
# shape-learn
# ---------------------------------------------------------------------------

def cmd_shape_learn(effective: dict, out_dir: Path) -> int:
    _require(effective, "shape-learn", "data")
    data = Path(effective["data"])
    meas_files = sorted((data / "meas").glob("*.cfg"))
    if not meas_files:
        raise CLIError(f"no measurement files under {data / 'meas'}")
    observations = []
    for path in meas_files:
        _, _, measurements = _measurements_from_text(path.read_text(encoding="utf-8"))
        for meas in measurements:
            observations.append(
                LandmarkObservations(uv=meas.landmarks_uv, visible=meas.landmarks_visible)
            )
    opts = LearnOptions(
        tol=effective["tol"], max_iterations=effective["max_iterations"]
    )
    try:
        result = learn_em(observations, effective["basis"], opts)
    except InsufficientDataError as exc:
        raise CLIError(str(exc))
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(result.model, out_dir / "model.txt")
    report = {
        "instances_total": str(len(observations)),
        "instances_used": str(int(result.used_mask.sum())),
        "converged": _fmt_value(bool(result.converged)),
        "iterations": str(result.iterations),
        "final_loglik": repr(float(result.loglik_path[-1])),
        "noise_var": repr(float(result.noise_var)),
        "reproj_rmse_px": repr(float(result.reproj_rmse)),
    }
    _atomic_write(out_dir / "report.cfg", format_config(report))
    _write_manifest(out_dir, "shape-learn", effective)
    print(
        f"learned {effective['basis']}-basis model from "
        f"{int(result.used_mask.sum())} instances; "
        f"reprojection RMSE {result.reproj_rmse:.3f} px"
    )
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vehicle3d",
        description="synthetic 3D vehicle pose benchmark: generate, fit, evaluate",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    needs_out = {"synth": True, "shape-learn": True, "fit": True,
                 "eval": False, "ablate": True}
    summaries = {
        "synth": "generate a synthetic labeled dataset",
        "shape-learn": "learn a morphable model from annotated landmarks",
        "fit": "refine 3D boxes for every frame of a dataset",
        "eval": "score predictions against ground truth",
        "ablate": "run all energy variants and tabulate the metrics",
    }
    for command, table in _OPTIONS.items():
        sub = subparsers.add_parser(command, help=summaries[command])
        sub.add_argument("--config", default=None, help="key = value option file")
        sub.add_argument("--out", default=None, required=needs_out[command],
                         help="output directory")
        for name, conv, default, help_text in table:
            sub.add_argument(
                "--" + name.replace("_", "-"),
                dest=name,
                type=conv,
                default=None,
                help=f"{help_text} (default: {_fmt_value(default)})",
            )
    return parser


_HANDLERS = {
    "synth": cmd_synth,
    "shape-learn": cmd_shape_learn,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        effective = _resolve_options(args.command, args)
        out_dir = Path(args.out) if args.out else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        return _HANDLERS[args.command](effective, out_dir)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
