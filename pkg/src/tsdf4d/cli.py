"""Command line front-end: synth, train, mesh, slice, segment, eval.

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import core_io, evaluation, mesher, synth, training
from .core_io import FormatError, atomic_write
from .field import classify_point, load_checkpoint, save_checkpoint

log = logging.getLogger("tsdf4d")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, applied after --config (repeatable)")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--deterministic", action="store_true", help="ordered reductions, bit-reproducible output")
    p.add_argument("--workers", type=int, help="worker count forwarded to parallel stages")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsdf4d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", help="write a synthetic dynamic-scene dataset")
    _common(p)
    p.add_argument("--scene", type=Path, help="scene JSON (default: built-in moving-sphere room)")
    p.add_argument("--static-only", action="store_true", help="drop all movers")
    p.add_argument("--range-noise", type=float, help="isotropic Gaussian range noise sigma (m)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="optimize a 4D map from a dataset directory")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset root (velodyne/, poses.txt)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--loss-log", type=Path, help="loss CSV (default: <out>.losses.csv)")

    p = sub.add_parser("mesh", help="marching-cubes mesh of the static map or a time slice")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--static", action="store_true", help="mesh the static field (default)")
    g.add_argument("--at-frame", type=int, help="mesh the field at frame T")
    p.add_argument("--cell-size", type=float, help="lattice cell (default: finest voxel / 2)")
    p.add_argument("--encoding", choices=["ascii", "binary_le"], default="binary_le")

    p = sub.add_parser("slice", help="export a clamped TSDF slice as CSV")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--axis", choices=["x", "y", "z"], default="z")
    p.add_argument("--coord", type=float, required=True)
    p.add_argument("--clamp", type=float, default=0.3)
    p.add_argument("--cell-size", type=float, help="grid spacing (default: finest voxel / 2)")
    p.add_argument("--at-frame", type=int, help="slice the field at frame T (default: static field)")

    p = sub.add_parser("segment", help="label every input point static/dynamic")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory for .label files")
    p.add_argument("--d-static", type=float, help="threshold on the static SDF (default: config)")

    p = sub.add_parser("eval", help="compare a mesh against a ground-truth point cloud")
    _common(p)
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True, help="ground-truth PLY point cloud")
    p.add_argument("--threshold", type=float, action="append", help="F-score threshold in cm (default: 1 and 20)")
    p.add_argument("--density", type=float, default=evaluation.DEFAULT_DENSITY, help="mesh samples per m^2")
    p.add_argument("--out", type=Path, help="also write the report here")
    return parser


def _config(args, base: core_io.MapConfig | None = None) -> core_io.MapConfig:
    forced = {"seed": args.seed, "workers": args.workers, "deterministic": True if args.deterministic else None}
    if base is None:
        return core_io.load_config(args.config, args.overrides, **forced)
    values = core_io.parse_config_text(base.to_text())
    if args.config is not None:
        values.update(core_io.parse_config_text(args.config.read_text(encoding="utf-8")))
    values.update(core_io.parse_overrides(args.overrides))
    values.update({k: v for k, v in forced.items() if v is not None})
    return core_io.MapConfig(**values)


def cmd_synth(args) -> None:
    spec = synth.SceneSpec.load(args.scene) if args.scene else synth.default_scene()
    if args.static_only:
        spec = spec.static_variant()
    if args.seed is not None:
        spec.seed = args.seed
    if args.range_noise is not None:
        spec.range_noise = args.range_noise
    seq, gt = synth.write_dataset(spec, args.out)
    n_dyn = sum(int(lab.sum()) for lab in gt.labels)
    print(f"wrote {seq.frame_count} scans, {sum(len(s) for s in seq)} points ({n_dyn} dynamic) to {args.out}")


def cmd_train(args) -> None:
    cfg = _config(args)
    seq = core_io.load_sequence(args.data)
    result = training.train(seq, cfg)
    save_checkpoint(result.model, args.out)
    loss_path = args.loss_log or args.out.with_name(args.out.name + ".losses.csv")
    training.write_loss_log(result, loss_path)
    print(f"checkpoint {args.out}, loss log {loss_path}, final total {result.losses[-1][5]:.6f}")


def _load_model(args):
    model = load_checkpoint(args.checkpoint)
    model.cfg = _config(args, model.cfg)
    return model


def cmd_mesh(args) -> None:
    model = _load_model(args)
    cell = args.cell_size or model.grid.finest_voxel_size / 2
    if args.at_frame is not None and not 0 <= args.at_frame < model.frame_count:
        raise UsageError(f"--at-frame must be in 0..{model.frame_count - 1}")
    mesh = mesher.extract_mesh(model, cell, t=args.at_frame)
    mesher.export_ply(mesh, args.out, args.encoding)
    print(f"{len(mesh.vertices)} vertices, {len(mesh)} triangles -> {args.out}")


def cmd_slice(args) -> None:
    model = _load_model(args)
    if not args.clamp > 0:
        raise UsageError("--clamp must be positive")
    if args.at_frame is not None and not 0 <= args.at_frame < model.frame_count:
        raise UsageError(f"--at-frame must be in 0..{model.frame_count - 1}")
    cell = args.cell_size or model.grid.finest_voxel_size / 2
    grid = mesher.export_slice(model, args.out, args.axis, args.coord, cell, args.clamp, t=args.at_frame)
    print(f"{grid.values.shape[1]} x {grid.values.shape[0]} slice -> {args.out}")


def cmd_segment(args) -> None:
    model = _load_model(args)
    d_static = model.cfg.d_static if args.d_static is None else args.d_static
    seq = core_io.load_sequence(args.data)
    files = core_io.scan_files(args.data)
    preds = []
    for scan, f in zip(seq, files):
        lab = classify_point(model, scan.points_world, d_static)
        core_io.write_labels(args.out / (f.stem + ".label"), lab)
        preds.append(lab)
    gt = core_io.load_label_dir(args.data)
    print(f"labeled {sum(len(p) for p in preds)} points, {sum(int(p.sum()) for p in preds)} dynamic")
    if gt is not None:
        report = evaluation.seg_metrics(np.concatenate(preds), np.concatenate(gt))
        text = report.to_text()
        with atomic_write(args.out / "seg_report.txt", "w") as fh:
            fh.write(text)
        print(text, end="")


def cmd_eval(args) -> None:
    mesh = mesher.read_ply(args.mesh)
    gt = mesher.read_ply(args.gt).vertices
    seed = 0 if args.seed is None else args.seed
    pred = evaluation.sample_mesh(mesh, args.density, seed)
    if not len(pred):
        raise FormatError(f"{args.mesh}: mesh has no surface area")
    texts = [evaluation.recon_metrics(pred, gt, thr, args.density).to_text() for thr in (args.threshold or [1.0, 20.0])]
    text = "\n".join(texts)
    if args.out:
        with atomic_write(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "mesh": cmd_mesh, "slice": cmd_slice,
            "segment": cmd_segment, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tsdf4d {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, FileNotFoundError, IsADirectoryError, ValueError, IndexError) as exc:
        print(f"tsdf4d {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
