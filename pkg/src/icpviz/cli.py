"""Command-line front end: ``icpviz {sweep,filter,features,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from icpviz import __version__
from icpviz.cloud import PointCloud
from icpviz.dataio import (
    KittiSequence,
    load_poses,
    load_velodyne_bin,
    parse_pose_line,
    write_curve_table,
    write_velodyne_bin,
)
from icpviz.features import Label, smoothness
from icpviz.filters import (
    DEFAULT_BLIND_SPOT_RADIUS,
    DEFAULT_VOXEL_SIZE,
    BlindSpotConfig,
    OcfConfig,
    artificial_blind_spot_mask,
    blind_spot_masks,
    ocf_masks,
)
from icpviz.geometry import RigidTransform
from icpviz.scenes import load_scene_spec, make_scene
from icpviz.sweep import (
    ArtificialBlindSpot,
    ClosestPoint,
    ConfigError,
    EgoBlindSpot,
    Objective,
    Ocf,
    PipelineConfig,
    Reciprocal,
    resolve_estimate,
    run_sweep_suite,
)

log = logging.getLogger("icpviz")

OBJECTIVES = [o.value for o in Objective]
MODIFIERS = ("ocf", "ego-overlap", "reciprocal")


class CliError(Exception):
    pass


def parse_variant(
    name: str,
    *,
    voxel_size: float = DEFAULT_VOXEL_SIZE,
    blindspot_radius: float = DEFAULT_BLIND_SPOT_RADIUS,
    artificial: bool = False,
    relaxation: float = 0.0,
    estimate: str = "previous",
    u_min: float = -1.0,
    u_max: float = 2.0,
    samples: int = 100,
) -> PipelineConfig:
    """Turn a legend-style name such as ``point-to-point+ocf+reciprocal`` into a config."""
    head, *mods = name.split("+")
    if head not in OBJECTIVES:
        raise CliError(f"unknown objective {head!r}; valid objectives: {', '.join(OBJECTIVES)}")
    filters: list = [ArtificialBlindSpot(blindspot_radius)] if artificial else []
    corr = ClosestPoint()
    for m in mods:
        if m == "ocf":
            filters.append(Ocf(voxel_size, estimate))
        elif m == "ego-overlap":
            filters.append(EgoBlindSpot(blindspot_radius, estimate))
        elif m == "reciprocal":
            corr = Reciprocal(relaxation)
        else:
            raise CliError(f"unknown modifier {m!r} in {name!r}; valid modifiers: {', '.join(MODIFIERS)}")
    cfg = PipelineConfig(Objective(head), tuple(filters), corr, u_min=u_min, u_max=u_max, n_samples=samples, name=name)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise CliError(str(exc)) from None
    return cfg


@dataclass
class FramePair:
    source: PointCloud
    reference: PointCloud
    T_gt: RigidTransform
    T_prev: RigidTransform | None
    frame_ids: tuple[str, str]
    description: dict[str, Any]
    scene: Any = None


def _source_from_args(args) -> dict[str, Any]:
    """Resolve the data-source flags into a JSON-serialisable description."""
    if getattr(args, "scene_spec", None):
        spec = load_scene_spec(args.scene_spec)
        seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
        return {"type": "synthetic", "scene_spec": spec, "seed": seed, "path": str(args.scene_spec)}
    if getattr(args, "kitti_root", None):
        if args.sequence is None or args.frame is None:
            raise CliError("--kitti-root needs --sequence and --frame")
        src = args.source_frame if getattr(args, "source_frame", None) is not None else args.frame + 1
        return {"type": "kitti", "root": str(args.kitti_root), "sequence": str(args.sequence), "reference_frame": args.frame, "source_frame": src}
    if getattr(args, "reference", None) and getattr(args, "source", None):
        return {"type": "bin", "reference": str(args.reference), "source": str(args.source), "gt": str(args.gt) if args.gt else None}
    raise CliError("no data source: give --scene-spec, --kitti-root/--sequence/--frame or --reference/--source")


def load_frames(desc: dict[str, Any]) -> FramePair:
    kind = desc["type"]
    if kind == "synthetic":
        scene = make_scene(desc["scene_spec"], desc["seed"])
        # constant-velocity assumption: the previous frame moved like this one
        return FramePair(scene.source, scene.reference, scene.T_gt, scene.T_gt, ("reference", "source"), desc, scene)
    if kind == "kitti":
        seq = KittiSequence(desc["root"], desc["sequence"])
        ref_i, src_i = desc["reference_frame"], desc["source_frame"]
        T_prev = seq.relative(ref_i - 1, ref_i) if ref_i > 0 else None
        return FramePair(
            seq.frame(src_i).cloud,
            seq.frame(ref_i).cloud,
            seq.relative(ref_i, src_i),
            T_prev,
            (f"{seq.sequence}/{ref_i:06d}", f"{seq.sequence}/{src_i:06d}"),
            desc,
        )
    if kind == "bin":
        T_gt = load_poses(desc["gt"])[0] if desc.get("gt") else RigidTransform.identity()
        return FramePair(load_velodyne_bin(desc["source"]), load_velodyne_bin(desc["reference"]), T_gt, T_gt, (desc["reference"], desc["source"]), desc)
    raise CliError(f"unknown data source type {kind!r}")


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"


class _Outputs:
    """Tracks written files so a failed command can remove its partial outputs."""

    def __init__(self, out: Path) -> None:
        self.out = out
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.written.append(p)
        return p

    def rollback(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)


def _variant_filename(name: str) -> str:
    return name.replace("/", "_") + ".txt"


def run_sweep_request(request: dict[str, Any], out: Path, workers: int | None = None) -> int:
    frames = load_frames(request["source"])
    opts = request["options"]
    configs = [
        parse_variant(
            v,
            voxel_size=opts["voxel_size"],
            blindspot_radius=opts["blindspot_radius"],
            artificial=opts["artificial_blind_spot"],
            relaxation=opts["relaxation"],
            estimate=opts["te"],
            u_min=opts["u_min"],
            u_max=opts["u_max"],
            samples=opts["samples"],
        )
        for v in request["variants"]
    ]
    T_0 = parse_pose_line(request["T_0"]) if request.get("T_0") else RigidTransform.identity()
    out.mkdir(parents=True, exist_ok=True)
    outputs = _Outputs(out)
    try:
        suite = run_sweep_suite(
            frames.source, frames.reference, T_0, frames.T_gt, configs, T_prev=frames.T_prev, frame_ids=frames.frame_ids, workers=workers
        )
        if suite.failures:
            raise CliError("; ".join(f"{k}: {v}" for k, v in suite.failures.items()))
        summary = {}
        files = {}
        for curve in suite:
            fname = _variant_filename(curve.name)
            write_curve_table(curve, outputs.path(fname))
            files[curve.name] = fname
            u, r = curve.argmin()
            summary[curve.name] = {"argmin_u": u, "min_rmse": r, "config_digest": curve.config_digest}
            print(f"{curve.name}: argmin u={_fmt(u)} min rmse={_fmt(r)}")
        manifest = dict(request)
        manifest.update(
            tool="icpviz",
            version=__version__,
            T_0=T_0.to_pose_line(),
            T_gt=frames.T_gt.to_pose_line(),
            T_prev=None if frames.T_prev is None else frames.T_prev.to_pose_line(),
            frame_ids=list(frames.frame_ids),
            configs=[c.to_dict() for c in configs],
            outputs=files,
            summary=summary,
        )
        outputs.path("manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except BaseException:
        outputs.rollback()
        raise
    return 0


def cmd_sweep(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        request = {k: manifest[k] for k in ("command", "source", "variants", "options", "T_0")}
    else:
        request = {
            "command": "sweep",
            "source": _source_from_args(args),
            "variants": args.variant or OBJECTIVES,
            "options": {
                "voxel_size": args.voxel_size,
                "blindspot_radius": args.blindspot_radius,
                "artificial_blind_spot": args.artificial_blind_spot,
                "relaxation": args.relaxation,
                "te": args.te,
                "u_min": args.u_min,
                "u_max": args.u_max,
                "samples": args.samples,
            },
            "T_0": (parse_pose_line(args.t0) if args.t0 else RigidTransform.identity()).to_pose_line(),
        }
        for v in request["variants"]:
            parse_variant(v, relaxation=args.relaxation)
    return run_sweep_request(request, Path(args.out), args.workers)


def _estimate_from_args(args, frames: FramePair) -> RigidTransform:
    if args.te_pose:
        return parse_pose_line(args.te_pose)
    return resolve_estimate(args.te, frames.T_gt, frames.T_prev)


def cmd_filter(args) -> int:
    frames = load_frames(_source_from_args(args))
    T_e = _estimate_from_args(args, frames)
    P, Q = frames.source, frames.reference
    report: dict[str, Any] = {"estimate": T_e.to_pose_line(), "steps": []}
    for name in args.filter or ["ocf"]:
        step: dict[str, Any] = {"filter": name, "source_before": len(P), "reference_before": len(Q)}
        if name == "ocf":
            res = ocf_masks(P, Q, OcfConfig(args.voxel_size, T_e))
            keep_p, keep_q = res.keep_p, res.keep_q
            step["voxels_cleared"] = {"source": res.voxels_cleared_p, "reference": res.voxels_cleared_q}
        elif name == "ego-overlap":
            keep_p, keep_q = blind_spot_masks(P, Q, BlindSpotConfig(args.blindspot_radius, T_e))
        elif name == "artificial-blind-spot":
            keep_p = artificial_blind_spot_mask(P, args.blindspot_radius)
            keep_q = artificial_blind_spot_mask(Q, args.blindspot_radius)
        else:
            raise CliError(f"unknown filter {name!r}; valid filters: ocf, ego-overlap, artificial-blind-spot")
        step["source_removed"] = int(np.count_nonzero(~keep_p))
        step["reference_removed"] = int(np.count_nonzero(~keep_q))
        P, Q = P.subset(keep_p), Q.subset(keep_q)
        report["steps"].append(step)
    removed_p = sum(s["source_removed"] for s in report["steps"])
    removed_q = sum(s["reference_removed"] for s in report["steps"])
    report.update(source_removed=removed_p, reference_removed=removed_q, total_removed=removed_p + removed_q)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = _Outputs(out)
    try:
        write_velodyne_bin(P, outputs.path("source_filtered.bin"))
        write_velodyne_bin(Q, outputs.path("reference_filtered.bin"))
        outputs.path("filter_report.json").write_text(json.dumps(report, indent=2) + "\n")
    except BaseException:
        outputs.rollback()
        raise
    print(f"source: {removed_p} removed, reference: {removed_q} removed ({removed_p + removed_q} removed in total)")
    return 0


def cmd_features(args) -> int:
    if args.cloud:
        cloud = load_velodyne_bin(args.cloud)
    else:
        cloud = load_frames(_source_from_args(args)).source
    labels = smoothness(cloud, args.neighbors, args.planar_threshold)
    lines = [f"{i} {_fmt(s)} {Label(int(lab))}" for i, (s, lab) in enumerate(zip(labels.smoothness, labels.label))]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    counts = {str(lab): int(np.count_nonzero(labels.label == lab)) for lab in Label}
    print(", ".join(f"{k}: {v}" for k, v in counts.items()))
    return 0


def cmd_synth(args) -> int:
    spec = load_scene_spec(args.scene_spec)
    scene = make_scene(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = _Outputs(out)
    try:
        write_velodyne_bin(scene.reference, outputs.path("reference.bin"))
        write_velodyne_bin(scene.source, outputs.path("source.bin"))
        outputs.path("T_gt.txt").write_text(scene.T_gt.to_pose_line() + "\n")
        outputs.path("reference_labels.txt").write_text("\n".join(scene.reference_labels.tolist()) + "\n")
        outputs.path("source_labels.txt").write_text("\n".join(scene.source_labels.tolist()) + "\n")
    except BaseException:
        outputs.rollback()
        raise
    print(f"reference: {len(scene.reference)} points, source: {len(scene.source)} points")
    return 0


def _add_source_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data source")
    g.add_argument("--scene-spec", type=Path, help="synthetic scene description (JSON)")
    g.add_argument("--seed", type=int, help="override the scene's seed")
    g.add_argument("--kitti-root", type=Path, help="KITTI odometry root (contains sequences/ and poses/)")
    g.add_argument("--sequence", help="KITTI sequence, e.g. 00")
    g.add_argument("--frame", type=int, help="reference frame index (scan n-1)")
    g.add_argument("--source-frame", type=int, help="source frame index (default: --frame + 1)")
    g.add_argument("--reference", type=Path, help="reference cloud (.bin)")
    g.add_argument("--source", type=Path, help="source cloud (.bin)")
    g.add_argument("--gt", type=Path, help="pose file whose first line maps source into reference")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icpviz", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="sample objective functions along the T_0 -> T_gt path")
    _add_source_flags(sw)
    sw.add_argument("--variant", action="append", help=f"objective[+modifier...]; objectives: {', '.join(OBJECTIVES)}; modifiers: {', '.join(MODIFIERS)}")
    sw.add_argument("--voxel-size", type=float, default=DEFAULT_VOXEL_SIZE)
    sw.add_argument("--blindspot-radius", type=float, default=DEFAULT_BLIND_SPOT_RADIUS)
    sw.add_argument("--artificial-blind-spot", action="store_true", help="cut a circular blind spot into both scans first")
    sw.add_argument("--relaxation", type=float, default=0.0, help="reciprocal relaxation distance (m)")
    sw.add_argument("--te", choices=["previous", "ground-truth", "identity"], default="previous", help="estimate used by the filters")
    sw.add_argument("--t0", help="start of the path as 12 row-major [R|t] values (default: identity)")
    sw.add_argument("--u-min", type=float, default=-1.0)
    sw.add_argument("--u-max", type=float, default=2.0)
    sw.add_argument("--samples", type=int, default=100)
    sw.add_argument("--workers", type=int, help="threads evaluating u samples")
    sw.add_argument("--manifest", type=Path, help="re-run exactly what a previous manifest.json describes")
    sw.add_argument("--out", type=Path, required=True)
    sw.set_defaults(func=cmd_sweep)

    fl = sub.add_parser("filter", help="apply data filters to a cloud pair")
    _add_source_flags(fl)
    fl.add_argument("--filter", action="append", choices=["ocf", "ego-overlap", "artificial-blind-spot"])
    fl.add_argument("--voxel-size", type=float, default=DEFAULT_VOXEL_SIZE)
    fl.add_argument("--blindspot-radius", type=float, default=DEFAULT_BLIND_SPOT_RADIUS)
    fl.add_argument("--te", choices=["previous", "ground-truth", "identity"], default="ground-truth")
    fl.add_argument("--te-pose", help="explicit estimate as 12 row-major [R|t] values")
    fl.add_argument("--out", type=Path, required=True)
    fl.set_defaults(func=cmd_filter)

    ft = sub.add_parser("features", help="per-point smoothness and edge/planar labels")
    _add_source_flags(ft)
    ft.add_argument("--cloud", type=Path, help="cloud (.bin); otherwise the source cloud of the data source")
    ft.add_argument("--neighbors", type=int, default=10)
    ft.add_argument("--planar-threshold", type=float, default=0.1)
    ft.add_argument("--out", type=Path, required=True)
    ft.set_defaults(func=cmd_features)

    sy = sub.add_parser("synth", help="generate a synthetic frame pair")
    sy.add_argument("--scene-spec", type=Path, required=True)
    sy.add_argument("--seed", type=int)
    sy.add_argument("--out", type=Path, required=True)
    sy.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError, IndexError) as exc:
        print(f"icpviz {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
