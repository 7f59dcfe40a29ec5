"""Command-line entry points binding the pipeline end to end.

Verbs: gen-data writes a synthetic dataset with train/test manifests,
train-teacher fits the teacher on complete-view images, distill transfers
it to a student that sees only partial views, eval scores a checkpoint on
the test split, ablate sweeps the alignment variants into a CSV, and render
exports one PLY's depth views as PNGs, plus the completed cloud when a
checkpoint is given.

Shared flags: --config names a JSON config file, --out the output root,
--seed overrides train.seed, --workers bounds evaluation threads, --preset
picks the desk or paper scale. Environment variables prefixed VDPCN_
override config keys (VDPCN_TRAIN_LR=0.01 sets train.lr). Every command is
re-runnable: identical config and seed reproduce identical artifacts, with
wall times kept in their own log field. Errors go to stderr; a missing
checkpoint or input file exits with status 2, any other failure with 1.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model, save_checkpoint
from .config import PRESETS, load_config
from .dataset import ManifestDataset, generate_dataset, load_ply, save_ply
from .projection import VIEW_NAMES, render_depth, save_depth_png
from .training import (
    ablation_run,
    distill_student,
    evaluate,
    rig_for,
    train_teacher,
    write_ablation_csv,
    write_log,
)


def _add_common(sub):
    sub.add_argument("--config", type=Path, default=None, help="JSON config file")
    sub.add_argument("--out", type=Path, default=None, help="output root directory")
    sub.add_argument("--seed", type=int, default=None, help="override train.seed")
    sub.add_argument("--workers", type=int, default=1, help="evaluation thread count")
    sub.add_argument("--preset", choices=sorted(PRESETS), default="desk",
                     help="config preset the file and flags override")


def _build_parser():
    parser = argparse.ArgumentParser(prog="vdpcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset and manifests")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the teacher on complete-view images")
    _add_common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill a student from a teacher checkpoint")
    _add_common(p)
    p.add_argument("--teacher", type=Path, required=True, help="teacher checkpoint path")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep alignment variants into a CSV")
    _add_common(p)
    p.add_argument("--teacher", type=Path, required=True, help="teacher checkpoint path")
    p.add_argument("--variants", default="ABCD", help="subset of ABCD to run")
    p.add_argument("--seeds", default=None, help="comma-separated seeds, default train.seed")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="export one PLY's depth views as PNGs")
    _add_common(p)
    p.add_argument("input", type=Path, help="PLY file with a normalized cloud")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="also complete the cloud with this model")
    p.set_defaults(func=cmd_render)
    return parser


def _config_from(args):
    overrides = {"train": {"seed": args.seed}} if args.seed is not None else None
    return load_config(args.config, preset=args.preset, extra_overrides=overrides)


def _out_dir(args, default):
    out = Path(default) if args.out is None else args.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_samples(cfg, split):
    manifest = Path(cfg.data.root) / f"manifest_{split}.json"
    if not manifest.exists():
        raise FileNotFoundError(
            f"manifest not found: {manifest} (run gen-data, or point data.root at a dataset)"
        )
    ds = ManifestDataset(manifest, input_size=cfg.data.input_size)
    return [ds[i] for i in range(len(ds))]


def _manifest_size(path):
    with open(path) as f:
        return len(json.load(f)["samples"])


def cmd_gen_data(args):
    cfg = _config_from(args)
    root = _out_dir(args, cfg.data.root)
    paths = generate_dataset(
        root,
        n_shapes=cfg.data.n_shapes,
        seed=cfg.train.seed,
        points_per_shape=cfg.data.points_per_shape,
        split_fraction=cfg.data.split_fraction,
    )
    print(f"wrote {cfg.data.n_shapes} shapes under {root}")
    for split in ("train", "test"):
        print(f"manifest_{split}: {_manifest_size(paths[split])} samples -> {paths[split]}")
    return 0


def cmd_train_teacher(args):
    cfg = _config_from(args)
    out = _out_dir(args, "out")
    samples = _split_samples(cfg, "train")
    model, records = train_teacher(samples, cfg)
    ckpt = save_checkpoint(out / "teacher.npz", model,
                           extra={"role": "teacher", "epochs": len(records)})
    log = write_log(out / "teacher_log.jsonl", records)
    print(f"trained teacher: {len(records)} epochs on {len(samples)} samples")
    print(f"final mean_total: {records[-1]['mean_total']:.6f}")
    print(f"checkpoint: {ckpt}")
    print(f"log: {log}")
    return 0


def cmd_distill(args):
    cfg = _config_from(args)
    out = _out_dir(args, "out")
    teacher, _ = load_model(args.teacher, expected_cfg=cfg.model)
    samples = _split_samples(cfg, "train")
    student, records = distill_student(samples, teacher, cfg)
    variant = cfg.distill.variant
    ckpt = save_checkpoint(out / f"student_{variant}.npz", student,
                           extra={"role": "student", "variant": variant, "epochs": len(records)})
    log = write_log(out / f"student_{variant}_log.jsonl", records)
    print(f"distilled variant {variant}: {len(records)} epochs on {len(samples)} samples")
    print(f"final mean_total: {records[-1]['mean_total']:.6f}")
    print(f"checkpoint: {ckpt}")
    print(f"log: {log}")
    return 0


def _print_report(report, f_threshold):
    header = f"{'category':<14}{'CD-L1 x1e3':>12}{'CD-L2 x1e4':>12}{'F1@' + format(f_threshold, 'g'):>12}"
    print(header)
    rows = [*sorted(report.per_category.items()), ("overall", None)]
    for name, stats in rows:
        if stats is None:
            stats = {"cd_l1": report.cd_l1, "cd_l2": report.cd_l2, "f_score": report.f_score}
        print(f"{name:<14}{stats['cd_l1'] * 1e3:>12.3f}{stats['cd_l2'] * 1e4:>12.3f}"
              f"{stats['f_score']:>12.3f}")


def cmd_eval(args):
    cfg = _config_from(args)
    out = _out_dir(args, "out")
    model, _ = load_model(args.checkpoint)
    samples = _split_samples(cfg, "test")
    report = evaluate(
        model,
        samples,
        f_threshold=cfg.eval.f_threshold,
        merge_with_input=cfg.eval.merge_with_input,
        workers=args.workers,
    )
    report_path = Path(cfg.eval.report_path)
    if not report_path.is_absolute():
        report_path = out / report_path
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_json() + "\n")
    _print_report(report, cfg.eval.f_threshold)
    print(f"report: {report_path}")
    return 0


def cmd_ablate(args):
    cfg = _config_from(args)
    out = _out_dir(args, "out")
    bad = sorted(set(args.variants) - set("ABCD"))
    if bad:
        raise ValueError(f"unknown variants {bad}, expected letters from ABCD")
    seeds = (
        [cfg.train.seed]
        if args.seeds is None
        else [int(s) for s in args.seeds.split(",") if s.strip()]
    )
    teacher, _ = load_model(args.teacher, expected_cfg=cfg.model)
    train_samples = _split_samples(cfg, "train")
    eval_samples = _split_samples(cfg, "test")
    rows = ablation_run(train_samples, eval_samples, teacher, cfg,
                        variants=args.variants, seeds=seeds, workers=args.workers)
    path = write_ablation_csv(out / "ablation.csv", rows)
    for row in rows:
        print(f"variant {row['variant']} seed {row['seed']}: "
              f"cd_l1 {row['cd_l1']:.6f}, f_score {row['f_score']:.4f}")
    print(f"csv: {path}")
    return 0


def _safe_view_name(name):
    return name.replace("+", "pos").replace("-", "neg")


def cmd_render(args):
    cfg = _config_from(args)
    out = _out_dir(args, "out")
    if not args.input.exists():
        raise FileNotFoundError(f"input PLY not found: {args.input}")
    cloud = load_ply(args.input)
    model = None
    model_cfg = cfg.model
    if args.checkpoint is not None:
        model, _ = load_model(args.checkpoint)
        model_cfg = model.cfg  # the checkpoint decides its own image size
    rig = rig_for(model_cfg)
    group = render_depth(cloud, rig, model_cfg.splat_radius)
    stem = args.input.stem
    for name, image in zip(VIEW_NAMES, group.images):
        path = out / f"{stem}_{_safe_view_name(name)}.png"
        save_depth_png(image, path)
        print(f"wrote {path}")
    if model is not None:
        images = torch.from_numpy(group.images).to(torch.float32).unsqueeze(0)
        partial = torch.from_numpy(cloud).to(torch.float32).unsqueeze(0)
        model.eval()
        with torch.no_grad():
            completed = model(images, partial).stages[-1][0].cpu().double().numpy()
        ply_path = out / f"{stem}_completed.ply"
        save_ply(np.asarray(completed), ply_path)
        print(f"wrote {ply_path}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
