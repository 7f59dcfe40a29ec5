"""Loss assembly, the teacher and student optimization loops, evaluation, and
the distillation ablation harness.

Both loops are seeded end to end: parameter init, data order, and ground
truth subsampling all derive from the run seed, so two runs with one config
produce identical loss trajectories and identical checkpoints. Logs are one
JSON object per epoch; wall time lives in its own field so byte comparisons
of everything else stay meaningful.
"""

import copy
import csv
import json
import math
import time
from pathlib import Path

import numpy as np
import torch
from scipy.spatial import cKDTree

from .distillation import (
    apply_freeze,
    init_student_from_teacher,
    kd_loss,
    teacher_targets,
    trainable_parameter_names,
    variant_weights,
)
from .metrics import MetricReport, chamfer_l1, chamfer_l2, f_score
from .network import build_model
from .projection import build_axis_rig, render_depth

_SQRT_EPS = 1.0e-12


def rig_for(model_cfg):
    """The fixed 6-view axis rig sized for a model config."""
    if model_cfg.k != 6:
        raise ValueError("only the 6-view axis rig is provided; set model.k to 6")
    return build_axis_rig((model_cfg.height, model_cfg.width), model_cfg.ortho_extent)


def chamfer_l1_torch(pred, gt, gt_trees=None):
    """Differentiable halved-mean Chamfer distance for batched tensors.

    Nearest-neighbor indices come from a kd-tree on detached coordinates;
    distances are then recomputed in torch so gradients flow to the predicted
    points. The tiny epsilon inside the square root keeps the gradient finite
    when a predicted point coincides with a target point exactly. The
    ground-truth trees never change across steps, so callers may pass them in
    (one per batch element) instead of rebuilding each call.
    """
    total = pred.new_zeros(())
    for b in range(pred.shape[0]):
        p, q = pred[b], gt[b]
        pn = p.detach().cpu().double().numpy()
        q_tree = cKDTree(q.detach().cpu().double().numpy()) if gt_trees is None else gt_trees[b]
        i_pq = q_tree.query(pn, k=1)[1]
        i_qp = cKDTree(pn).query(q_tree.data, k=1)[1]
        d_pq = torch.sqrt(((p - q[i_pq]) ** 2).sum(dim=1) + _SQRT_EPS).mean()
        d_qp = torch.sqrt(((q - p[i_qp]) ** 2).sum(dim=1) + _SQRT_EPS).mean()
        total = total + 0.5 * (d_pq + d_qp)
    return total / pred.shape[0]


def total_loss(outputs, gt, kd=None, tau0=1.0):
    """Chamfer supervision of the coarse cloud and every stage, plus the
    optional weighted distillation term. Every predicted set is compared
    against the same ground truth."""
    loss = chamfer_l1_torch(outputs.coarse, gt)
    for stage_points in outputs.stages:
        loss = loss + chamfer_l1_torch(stage_points, gt)
    if kd is not None:
        loss = loss + tau0 * kd
    return loss


class _PreparedSample:
    """Cached per-sample tensors so rendering happens once, not every epoch."""

    __slots__ = ("sample", "partial", "gt", "gt_loss", "gt_tree", "student_images", "teacher_images", "targets")

    def __init__(self, sample):
        self.sample = sample
        self.partial = torch.from_numpy(sample.partial).to(torch.float32)
        self.gt = torch.from_numpy(sample.gt).to(torch.float32)
        self.gt_loss = None
        self.gt_tree = None
        self.student_images = None
        self.teacher_images = None
        self.targets = None


def _prepare(samples, model_cfg, loss_gt_size, seed, need_teacher_views, need_student_views):
    rig = rig_for(model_cfg)
    prepared = []
    for i, sample in enumerate(samples):
        prep = _PreparedSample(sample)
        if loss_gt_size and loss_gt_size < sample.gt.shape[0]:
            rng = np.random.default_rng([seed, 1009, i])
            keep = rng.choice(sample.gt.shape[0], size=loss_gt_size, replace=False)
            prep.gt_loss = torch.from_numpy(sample.gt[np.sort(keep)]).to(torch.float32)
        else:
            prep.gt_loss = prep.gt
        prep.gt_tree = cKDTree(prep.gt_loss.double().numpy())
        if need_teacher_views:
            from .projection import render_teacher_views

            group = render_teacher_views(sample.gt, rig, min(model_cfg.n_down, sample.gt.shape[0]), model_cfg.splat_radius)
            prep.teacher_images = torch.from_numpy(group.images).to(torch.float32)
        if need_student_views:
            group = render_depth(sample.partial, rig, model_cfg.splat_radius)
            prep.student_images = torch.from_numpy(group.images).to(torch.float32)
        prepared.append(prep)
    return prepared


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _stack(prepared, idx, images_attr):
    sizes = {prepared[i].partial.shape[0] for i in idx}
    if len(sizes) != 1:
        raise ValueError(f"cannot batch partial clouds of differing sizes {sorted(sizes)}; "
                         "use batch_size 1 or a uniform input_size")
    images = torch.stack([getattr(prepared[i], images_attr) for i in idx])
    partial = torch.stack([prepared[i].partial for i in idx])
    gt = torch.stack([prepared[i].gt_loss for i in idx])
    trees = [prepared[i].gt_tree for i in idx]
    return images, partial, gt, trees


def _finite_or_die(loss, step):
    value = float(loss.detach())
    if not np.isfinite(value):
        raise RuntimeError(f"loss became non-finite ({value}) at step {step}")
    return value


def write_log(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_log(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def train_teacher(samples, run_cfg, model=None):
    """Train the teacher on complete-view images and partial clouds.

    Every parameter group is optimized. Returns (model, log records).
    """
    cfg = run_cfg
    torch.use_deterministic_algorithms(True)
    if model is None:
        model = build_model(cfg.model, seed=cfg.train.seed)
    prepared = _prepare(
        samples,
        cfg.model,
        cfg.train.loss_gt_size,
        cfg.train.seed,
        need_teacher_views=True,
        need_student_views=False,
    )
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.train.lr,
        betas=tuple(cfg.train.betas),
        eps=cfg.train.eps,
        weight_decay=cfg.train.weight_decay,
    )
    return _run_loop(model, prepared, optimizer, cfg, images_attr="teacher_images", distill_ctx=None)


def distill_student(samples, teacher, run_cfg):
    """Distill a student from a frozen teacher on partial-view images.

    The student starts from the teacher's weights; only the configured
    trainable groups are optimized, and the alignment terms follow the
    configured variant. Returns (student, log records).
    """
    cfg = run_cfg
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.train.seed)
    student = init_student_from_teacher(teacher)
    trainable = trainable_parameter_names(student, cfg.distill.trainable_groups)
    apply_freeze(student, trainable)
    prepared = _prepare(
        samples,
        cfg.model,
        cfg.train.loss_gt_size,
        cfg.train.seed,
        need_teacher_views=False,
        need_student_views=True,
    )
    rig = rig_for(cfg.model)
    teacher.eval()
    for prep in prepared:
        n_down = min(cfg.model.n_down, prep.sample.gt.shape[0])
        prep.targets = teacher_targets(teacher, prep.sample.gt, rig, n_down, cfg.model.splat_radius)
    optimizer = torch.optim.AdamW(
        [p for n, p in student.named_parameters() if n in trainable],
        lr=cfg.distill.student_lr,
        betas=tuple(cfg.train.betas),
        eps=cfg.train.eps,
        weight_decay=cfg.train.weight_decay,
    )
    tau1, tau2 = variant_weights(cfg.distill.variant, cfg.distill.tau1, cfg.distill.tau2)
    ctx = {"tau0": cfg.distill.tau0, "tau1": tau1, "tau2": tau2}
    return _run_loop(student, prepared, optimizer, cfg, images_attr="student_images", distill_ctx=ctx)


def _run_loop(model, prepared, optimizer, cfg, images_attr, distill_ctx):
    records = []
    step = 0
    max_steps = cfg.train.max_steps or None
    scheduler = None
    if cfg.train.cosine_lr:
        per_epoch = math.ceil(len(prepared) / cfg.train.batch_size)
        planned = cfg.train.epochs * per_epoch
        if max_steps:
            planned = min(planned, max_steps)
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=planned)
    model.train()
    for epoch in range(cfg.train.epochs):
        t0 = time.monotonic()
        rng = np.random.default_rng([cfg.train.seed, 17, epoch])
        sums = None
        n_batches = 0
        for idx in _batches(len(prepared), cfg.train.batch_size, rng):
            images, partial, gt, gt_trees = _stack(prepared, idx, images_attr)
            outputs = model(images, partial)
            cd_terms = [chamfer_l1_torch(outputs.coarse, gt, gt_trees)]
            for stage_points in outputs.stages:
                cd_terms.append(chamfer_l1_torch(stage_points, gt, gt_trees))
            loss = cd_terms[0]
            for term in cd_terms[1:]:
                loss = loss + term
            kd_value = 0.0
            if distill_ctx is not None and (distill_ctx["tau1"] > 0 or distill_ctx["tau2"] > 0):
                kd_terms = []
                for j, i in enumerate(idx):
                    t = prepared[i].targets
                    kd_terms.append(
                        kd_loss(
                            outputs.view_features[j : j + 1],
                            outputs.global_feature[j : j + 1],
                            t,
                            tau1=distill_ctx["tau1"],
                            tau2=distill_ctx["tau2"],
                        )
                    )
                kd = torch.stack(kd_terms).mean()
                kd_value = float(kd.detach())
                loss = loss + distill_ctx["tau0"] * kd
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            step += 1
            values = [_finite_or_die(loss, step)] + [float(t.detach()) for t in cd_terms] + [kd_value]
            sums = values if sums is None else [a + b for a, b in zip(sums, values)]
            n_batches += 1
            if max_steps and step >= max_steps:
                break
        means = [s / n_batches for s in sums]
        records.append(
            {
                "epoch": epoch,
                "mean_total": means[0],
                "mean_cd_coarse": means[1],
                "mean_cd_stages": means[2:-1],
                "mean_kd": means[-1],
                "wall_time_s": time.monotonic() - t0,
            }
        )
        if max_steps and step >= max_steps:
            break
    return model, records


def evaluate(model, samples, f_threshold=0.01, merge_with_input=False, workers=1):
    """Compare each sample's final completion against its ground truth.

    Samples are independent, so workers > 1 maps them over a thread pool;
    results are identical either way because aggregation order is fixed.
    Returns a MetricReport with overall means plus per-category means.
    """
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    rig = rig_for(model.cfg)
    model.eval()

    def one(sample):
        with torch.no_grad():
            group = render_depth(sample.partial, rig, model.cfg.splat_radius)
            images = torch.from_numpy(group.images).to(torch.float32).unsqueeze(0)
            partial = torch.from_numpy(sample.partial).to(torch.float32).unsqueeze(0)
            outputs = model(images, partial)
            pred = outputs.stages[-1][0].cpu().double().numpy()
        if merge_with_input:
            pred = np.concatenate([pred, sample.partial], axis=0)
        return {
            "category": sample.category,
            "cd_l1": chamfer_l1(pred, sample.gt),
            "cd_l2": chamfer_l2(pred, sample.gt),
            "f_score": f_score(pred, sample.gt, threshold=f_threshold),
        }

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, samples))
    else:
        rows = [one(s) for s in samples]

    def _mean(subset, key):
        return float(np.mean([r[key] for r in subset]))

    per_category = {}
    for cat in sorted({r["category"] for r in rows}):
        subset = [r for r in rows if r["category"] == cat]
        per_category[cat] = {
            "cd_l1": _mean(subset, "cd_l1"),
            "cd_l2": _mean(subset, "cd_l2"),
            "f_score": _mean(subset, "f_score"),
        }
    return MetricReport(
        cd_l1=_mean(rows, "cd_l1"),
        cd_l2=_mean(rows, "cd_l2"),
        f_score=_mean(rows, "f_score"),
        per_category=per_category,
    )


def ablation_run(train_samples, eval_samples, teacher, run_cfg, variants="ABCD", seeds=(0,), workers=1):
    """Distill one student per (variant, seed) and evaluate each.

    All variants share data, teacher, and seeds, so rows differ only in the
    alignment terms. Returns a list of {variant, cd_l1, f_score, seed} rows.
    """
    rows = []
    for seed in seeds:
        for variant in variants:
            cfg = copy.deepcopy(run_cfg)
            cfg.distill.variant = variant
            cfg.train.seed = seed
            student, _ = distill_student(train_samples, teacher, cfg)
            report = evaluate(student, eval_samples, f_threshold=cfg.eval.f_threshold,
                              merge_with_input=cfg.eval.merge_with_input, workers=workers)
            rows.append(
                {"variant": variant, "cd_l1": report.cd_l1, "f_score": report.f_score, "seed": seed}
            )
    return rows


def write_ablation_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["variant", "cd_l1", "f_score", "seed"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path
