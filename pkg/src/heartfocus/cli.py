"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error. Every pipeline flag can
also be set through an environment variable ``HEARTFOCUS_<FLAG>`` (upper
case, dashes as underscores); explicit flags win.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .focus import FocusConfig, FusionWeights, run_focus
from .metrics import EvalReport, evaluate, median_time, recall, speedup, threshold_segmenter
from .phantom import PhantomSpec, generate
from .roi import RoiBox, RoiConfig, apply_box, extract_labels, extract_roi
from .tensor import DataError, Volume4D, normalize

log = logging.getLogger("heartfocus")

ENV_PREFIX = "HEARTFOCUS_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} values, got {text!r}")
    return vals


def _weights(text: str) -> tuple[float, float]:
    return _floats(text, 2)


def _target(text: str) -> tuple[int, int] | None:
    if text.lower() in ("none", "box"):
        return None
    try:
        h, w = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("target extents must be positive")
    return h, w


def _bool(text: str) -> bool:
    t = str(text).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _dims(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


PIPELINE_FLAGS = [
    ("--weights", _weights, "0.1,0.9", "static and motion fusion weights ws,wt"),
    ("--percentile", float, "0.9", "quantile for the energy threshold"),
    ("--smooth-sigma", float, "5", "in-plane Gaussian sigma (voxels) applied to the fused map"),
    ("--smooth-sigma-z", float, "0", "through-plane Gaussian sigma (voxels)"),
    ("--k", float, "2", "box half-extent in units of scale * r_max"),
    ("--target", _target, "128x128", "in-plane ROI output shape HxW, or 'box' to keep the box shape"),
    ("--multiple", int, "32", "round the target shape up to this multiple"),
    ("--static-frame", str, "first", "frame feeding the static features: first or time-mean"),
    ("--temporal-boundary", str, "periodic", "temporal derivative boundary: periodic or replicate"),
    ("--masked-center", _bool, "false", "centroid over thresholded voxels only (true/false)"),
]


def _env_default(flag: str, conv, fallback: str):
    name = ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper()
    raw = os.environ.get(name, fallback)
    try:
        return conv(raw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"bad value for {name}: {exc}")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    for flag, conv, fallback, help_ in PIPELINE_FLAGS:
        p.add_argument(flag, type=conv, default=_env_default(flag, conv, fallback), help=help_)


def _add_flag(p, flag, conv, fallback, help_):
    p.add_argument(flag, type=conv, default=_env_default(flag, conv, fallback), help=help_)


def configs_from_args(args) -> tuple[FocusConfig, RoiConfig]:
    try:
        focus = FocusConfig(
            weights=FusionWeights(*args.weights),
            percentile=args.percentile,
            smooth_sigma=args.smooth_sigma,
            smooth_sigma_z=args.smooth_sigma_z,
            static_frame=args.static_frame,
            temporal_boundary=args.temporal_boundary,
            masked_center=args.masked_center,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    if not 0 <= args.percentile <= 1:
        raise UsageError("--percentile must lie in [0, 1]")
    if args.k <= 0 or args.multiple < 1:
        raise UsageError("--k must be positive and --multiple >= 1")
    return focus, RoiConfig(k=args.k, target=args.target, multiple=args.multiple)


def pipeline_config(focus: FocusConfig, roi: RoiConfig) -> dict:
    return {"focus": focus.to_dict(), "roi": roi.to_dict()}


def _stem(path) -> str:
    name = Path(path).name
    for suffix in (".nii.gz", ".nii", ".t4d"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(name).stem


def _focus_one(job) -> dict:
    path, focus_cfg, roi_cfg, out_dir = job
    v = io.load_volume(path)
    f = run_focus(v, focus_cfg)
    roi, box = extract_roi(v, f, roi_cfg)
    stem = _stem(path)
    z = min(max(int(round(f.center.z)), 0), f.shape[0] - 1)
    heatmaps = {}
    for name, arr in (("energy", f.energy), ("rbf", f.rbf), ("mask", f.mask.astype(np.float32))):
        fname = f"{stem}.{name}.z{z}.pgm"
        io.write_heatmap(arr, z, out_dir / fname)
        heatmaps[name] = fname
    return {
        "source": str(path),
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "box": box.to_dict(),
        "center": {"x": f.center.x, "y": f.center.y, "z": f.center.z},
        "scale": f.scale,
        "threshold": f.threshold,
        "mask_voxels": int(f.mask.sum()),
        "fallback": f.fallback,
        "reason": f.reason,
        "heatmaps": heatmaps,
        "roi_dims": list(roi.dims),
    }


def cmd_focus(args) -> int:
    focus_cfg, roi_cfg = configs_from_args(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(p, focus_cfg, roi_cfg, out_dir) for p in args.inputs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            records = list(pool.map(_focus_one, jobs))
    else:
        records = [_focus_one(j) for j in jobs]
    config = pipeline_config(focus_cfg, roi_cfg)
    manifest = {"config": config, "config_digest": io.config_digest(config), "records": records}
    manifest_path = Path(args.manifest) if args.manifest else out_dir / "manifest.json"
    io.write_json(manifest_path, manifest)
    for rec in records:
        c = rec["center"]
        flag = " FALLBACK" if rec["fallback"] else ""
        print(f"{rec['source']}: center=({c['x']:.2f},{c['y']:.2f},{c['z']:.2f}) scale={rec['scale']:.4f}{flag}")
    return 0


def _find_record(manifest: dict, source) -> dict:
    records = manifest["records"]
    for rec in records:
        if rec["source"] == str(source) or Path(rec["source"]).name == Path(source).name:
            return rec
    if len(records) == 1:
        return records[0]
    raise DataError(f"no manifest record for {source}")


def cmd_crop(args) -> int:
    manifest = io.read_manifest(args.manifest)
    rec = _find_record(manifest, args.input)
    box = RoiBox.from_dict(rec["box"])
    roi_cfg = manifest["config"]["roi"]
    v = io.load_volume(args.input)
    out = apply_box(v, box, roi_cfg.get("renormalize", True), roi_cfg.get("epsilon", 1e-7))
    io.write_container(args.out, out)
    if args.labels:
        if not args.labels_out:
            raise UsageError("--labels requires --labels-out")
        labels = io.load_volume(args.labels).data > 0.5
        io.write_container(args.labels_out, Volume4D(extract_labels(labels, box).astype(np.float32), out.spacing))
    print(f"{args.input}: box lo={list(box.lo)} hi={list(box.hi)} -> {list(out.dims)}")
    return 0


def cmd_phantom(args) -> int:
    base = PhantomSpec.from_json(args.config).to_dict() if args.config else PhantomSpec().to_dict()
    if args.seed is not None:
        base["seed"] = args.seed
    if args.dims is not None:
        base["dims"] = list(args.dims)
    if args.center is not None:
        base["center"] = list(args.center)
    if args.noise is not None:
        base["noise"] = args.noise
    spec = PhantomSpec.from_dict(base)
    ph = generate(spec)
    out = Path(args.out)
    mask_out = Path(args.mask_out) if args.mask_out else out.with_name(_stem(out) + ".mask.t4d")
    io.write_container(out, ph.volume)
    io.write_container(mask_out, Volume4D(ph.mask.astype(np.float32), ph.volume.spacing))
    io.write_json(out.with_name(_stem(out) + ".phantom.json"), {"spec": spec.to_dict(), "center": list(ph.center)})
    print(f"wrote {out} and {mask_out}")
    return 0


def cmd_segment(args) -> int:
    v = io.load_volume(args.input)
    pred = threshold_segmenter(normalize(v.data), args.seg_percentile)
    io.write_container(args.out, Volume4D(pred.astype(np.float32), v.spacing))
    return 0


def _mask(path) -> np.ndarray:
    return io.load_volume(path).data > 0.5


def cmd_eval(args) -> int:
    label = _mask(args.label)
    pred = _mask(args.pred)
    base = _mask(args.base_pred) if args.base_pred else None
    report = evaluate(label, pred, args.min_pixels, base)
    if args.base_time is not None and args.ours_time is not None:
        report.base_time, report.ours_time = args.base_time, args.ours_time
        report.speedup = speedup(args.base_time, args.ours_time)
    if args.coverage_label:
        if not args.manifest:
            raise UsageError("--coverage-label requires --manifest")
        manifest = io.read_manifest(args.manifest)
        rec = _find_record(manifest, args.source or args.coverage_label)
        full = _mask(args.coverage_label)
        box = RoiBox.from_dict(rec["box"]).mask()
        report.box_recall = recall(full, np.broadcast_to(box, full.shape))
    _emit_report(report, args)
    return 0


def _emit_report(report: EvalReport, args) -> None:
    text = report.to_text()
    sys.stdout.write(text)
    if args.report:
        io.write_json(args.report, report.to_dict())
    if args.text:
        Path(args.text).write_text(text)


def cmd_bench(args) -> int:
    focus_cfg, roi_cfg = configs_from_args(args)
    v = io.load_volume(args.input)
    f = run_focus(v, focus_cfg)
    roi, box = extract_roi(v, f, roi_cfg)
    full = normalize(v.data)
    base_t = median_time(lambda: threshold_segmenter(full, args.seg_percentile), args.repeats)
    ours_t = median_time(lambda: threshold_segmenter(roi.data, args.seg_percentile), args.repeats)
    print(f"box lo={list(box.lo)} hi={list(box.hi)} target={list(box.target)}")
    print(f"full_voxels={full.size}\nroi_voxels={roi.data.size}")
    print(f"base_time={base_t!r}\nours_time={ours_t!r}\nspeedup={speedup(base_t, ours_t)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="heartfocus", description="Motion-energy heart localisation for 4D cardiac MRI.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("focus", help="locate the heart and write a ROI manifest plus heatmaps")
    s.add_argument("inputs", nargs="+", help="NIfTI-1 (.nii/.nii.gz) or tensor container files")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--manifest", help="manifest path (default OUT_DIR/manifest.json)")
    _add_pipeline_flags(s)
    _add_flag(s, "--jobs", int, "1", "patients processed in parallel")
    s.set_defaults(func=cmd_focus)

    s = sub.add_parser("crop", help="cut and rescale the ROI recorded in a manifest")
    s.add_argument("input")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--labels", help="label volume to crop alongside (nearest-neighbour resize)")
    s.add_argument("--labels-out")
    s.set_defaults(func=cmd_crop)

    s = sub.add_parser("phantom", help="write a synthetic beating-ring phantom and its myocardium mask")
    s.add_argument("--config", help="JSON phantom spec; flags override its fields")
    s.add_argument("--seed", type=int, default=_env_default("--seed", lambda x: None if x == "" else int(x), ""))
    s.add_argument("--dims", type=_dims, help="T,Z,H,W")
    s.add_argument("--center", type=lambda t: _floats(t, 3), help="x,y,z")
    s.add_argument("--noise", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--mask-out")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("segment", help="threshold-segment a volume (stand-in backend)")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    _add_flag(s, "--seg-percentile", float, "0.7", "per-slice quantile above which pixels are marked")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("eval", help="score predictions against labels")
    s.add_argument("--pred", required=True)
    s.add_argument("--label", required=True)
    s.add_argument("--base-pred", help="baseline predictions for McNemar's test")
    _add_flag(s, "--min-pixels", int, "25", "drop label slices with fewer marked pixels")
    s.add_argument("--base-time", type=float)
    s.add_argument("--ours-time", type=float)
    s.add_argument("--manifest", help="manifest whose box is scored for label coverage")
    s.add_argument("--coverage-label", help="full-grid label volume for box coverage")
    s.add_argument("--source", help="manifest source entry to match (default: coverage label name)")
    s.add_argument("--report", help="write the report as JSON")
    s.add_argument("--text", help="write the key=value report to this file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time the segmenter on the full volume and on the ROI")
    s.add_argument("input")
    _add_pipeline_flags(s)
    _add_flag(s, "--seg-percentile", float, "0.7", "segmenter quantile")
    s.add_argument("--repeats", type=int, default=3)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
