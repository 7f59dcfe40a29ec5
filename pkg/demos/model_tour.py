#!/usr/bin/env python3
"""Walk one partial cloud through the network and print every tensor shape.

Uses the desk preset sizes. Also shows the parameter groups that the
distillation freeze policy operates on.
"""

import numpy as np
import torch

from vdpcn.config import desk_preset
from vdpcn.dataset import synthetic_samples
from vdpcn.network import build_model, parameter_groups
from vdpcn.projection import render_depth
from vdpcn.training import rig_for

cfg = desk_preset()
model = build_model(cfg.model, seed=0)
model.eval()

n_params = sum(p.numel() for p in model.parameters())
print(f"desk model: {n_params:,} parameters")
for group, names in parameter_groups(model).items():
    count = sum(model.get_parameter(n).numel() for n in names)
    print(f"  {group:<12} {len(names):3d} tensors  {count:>9,} values")

sample = synthetic_samples(1, seed=5, points_per_shape=8192, input_size=2048)[0]
print(f"\ninput: {sample.category}, partial {sample.partial.shape}, "
      f"gt {sample.gt.shape}")

rig = rig_for(cfg.model)
group = render_depth(sample.partial, rig)
images = torch.from_numpy(group.images).to(torch.float32).unsqueeze(0)
partial = torch.from_numpy(sample.partial).to(torch.float32).unsqueeze(0)
print(f"depth views: {tuple(images.shape)}  (B, k, H, W)")

with torch.no_grad():
    out = model(images, partial)

print(f"view features F_v: {tuple(out.view_features.shape)}  (B, k, C, H/16, W/16)")
print(f"global feature F_g: {tuple(out.global_feature.shape)}  (B, k, C)")
print(f"coarse cloud: {tuple(out.coarse.shape)}")
for i, stage in enumerate(out.stages, start=1):
    ratio = cfg.model.stage_ratios[i - 1]
    print(f"stage {i} (x{ratio}): {tuple(stage.shape)}")

# F_g is an exhaustive spatial max, so it never exceeds the per-view peaks.
peak = out.view_features.amax(dim=(-2, -1))
print(f"\nF_g equals spatial max of F_v: {torch.equal(peak, out.global_feature)}")

final = out.stages[-1][0].numpy()
lo, hi = final.min(axis=0), final.max(axis=0)
print(f"completion bounds: x [{lo[0]:+.2f}, {hi[0]:+.2f}]  "
      f"y [{lo[1]:+.2f}, {hi[1]:+.2f}]  z [{lo[2]:+.2f}, {hi[2]:+.2f}]")
print(f"(untrained weights, so the cloud is arbitrary but finite: "
      f"{np.isfinite(final).all()})")
