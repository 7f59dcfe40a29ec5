"""Teacher-student knowledge transfer.

The teacher is the same architecture run on depth views of the complete
cloud; the student sees only partial-view images. Distillation starts the
student from the teacher's weights, freezes everything except the configured
groups (by default the 2D backbone and the multi-view encoder), and aligns
the student's view features and global feature with cached teacher targets.
Teacher parameters are never touched. Alignment is offline: targets are a
pure function of the frozen teacher and the sample, so they are computed
once and cached, keyed by the teacher checkpoint hash.
"""

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .network import CompletionNet, parameter_groups
from .projection import render_teacher_views


@dataclass
class DistillTargets:
    """Frozen teacher features one student step aligns against."""

    f_v: torch.Tensor  # (B, k, C, H1, W1)
    f_g: torch.Tensor  # (B, k, C)


def kd_loss(student_f_v, student_f_g, targets, tau1=1.0, tau2=1.0):
    """tau1 * sum((F_v^T - F_v^S)^2) + tau2 * sum(|F_g^T - F_g^S|).

    Straight sums over every element, no averaging. Gradients flow only into
    the student features; targets are detached defensively.
    """
    t_v = targets.f_v.detach()
    t_g = targets.f_g.detach()
    if t_v.shape != student_f_v.shape:
        raise ValueError(f"view feature shapes differ: {tuple(t_v.shape)} vs {tuple(student_f_v.shape)}")
    if t_g.shape != student_f_g.shape:
        raise ValueError(f"global feature shapes differ: {tuple(t_g.shape)} vs {tuple(student_f_g.shape)}")
    term_v = ((t_v - student_f_v) ** 2).sum()
    term_g = (t_g - student_f_g).abs().sum()
    return tau1 * term_v + tau2 * term_g


def variant_weights(variant, tau1, tau2):
    """Map an ablation variant letter to its active (tau1, tau2) pair.

    A disables both alignment terms, B keeps only the view-feature term,
    C only the global-feature term, D both.
    """
    table = {
        "A": (0.0, 0.0),
        "B": (tau1, 0.0),
        "C": (0.0, tau2),
        "D": (tau1, tau2),
    }
    if variant not in table:
        raise ValueError(f"unknown distillation variant {variant!r}")
    return table[variant]


def init_student_from_teacher(teacher):
    """A fresh model carrying a deep copy of every teacher parameter."""
    student = CompletionNet(teacher.cfg)
    student.load_state_dict({k: v.clone() for k, v in teacher.state_dict().items()})
    return student


def trainable_parameter_names(model, groups):
    """Expand group names into the set of parameter names they own."""
    known = parameter_groups(model)
    unknown = sorted(set(groups) - set(known))
    if unknown:
        raise ValueError(f"unknown parameter groups {unknown}, expected subset of {sorted(known)}")
    names = set()
    for g in groups:
        names.update(known[g])
    return names


def apply_freeze(model, trainable_names):
    """Set requires_grad so only the trainable parameters receive updates."""
    for name, p in model.named_parameters():
        p.requires_grad_(name in trainable_names)
    return model


def teacher_targets(teacher, gt_points, rig, n_down, splat_radius=1):
    """Render complete-cloud views and capture the frozen teacher's features."""
    group = render_teacher_views(gt_points, rig, n_down, splat_radius=splat_radius)
    images = torch.from_numpy(group.images).to(torch.float32).unsqueeze(0)
    was_training = teacher.training
    teacher.eval()
    with torch.no_grad():
        f_v, f_g = teacher.encode_views(images)
    teacher.train(was_training)
    return DistillTargets(f_v=f_v.detach(), f_g=f_g.detach())


class TargetCache:
    """One npz record per sample id, invalidated when the teacher changes.

    The directory holds a meta.json with the teacher checkpoint hash; a
    mismatch wipes every stale record before new ones are written.
    """

    def __init__(self, directory, teacher_hash):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        meta_path = self.dir / "meta.json"
        if meta_path.exists():
            stale = json.loads(meta_path.read_text()).get("teacher_hash") != teacher_hash
            if stale:
                shutil.rmtree(self.dir)
                self.dir.mkdir(parents=True)
        meta_path = self.dir / "meta.json"
        if not meta_path.exists():
            meta_path.write_text(json.dumps({"teacher_hash": teacher_hash}) + "\n")

    def _path(self, sample_id):
        return self.dir / f"{sample_id}.npz"

    def get(self, sample_id):
        path = self._path(sample_id)
        if not path.exists():
            return None
        with np.load(path) as z:
            return DistillTargets(
                f_v=torch.from_numpy(z["f_v"]),
                f_g=torch.from_numpy(z["f_g"]),
            )

    def put(self, sample_id, targets):
        np.savez(
            self._path(sample_id),
            f_v=targets.f_v.cpu().numpy(),
            f_g=targets.f_g.cpu().numpy(),
        )
