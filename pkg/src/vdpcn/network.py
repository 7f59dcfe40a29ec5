"""The learnable completion model.

Data flow for one sample: k depth views go through a shared 2D backbone into
per-view feature maps, the multi-view encoder mixes them with alternating
cross-view and joint self-attention rounds and max-pools a global feature,
a point branch lifts the raw partial cloud, the seed generator produces the
coarse cloud, and two upsampling stages emit displaced children per parent
point, each stage attending over both the 2D view tokens and the 3D point
features.

All attention and feed-forward blocks here are written out explicitly so the
residual structure is inspectable: zeroing an output projection makes the
enclosing block an exact identity, which the tests rely on. Normalization is
GroupNorm/LayerNorm throughout; nothing in the model keeps running
statistics, so evaluation equals training mode parameter-for-parameter.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .geometry import farthest_point_indices


def _group_norm(channels):
    return nn.GroupNorm(math.gcd(8, channels), channels)


# ---------------------------------------------------------------------------
# 2D backbone


class ConvStage(nn.Module):
    """One stride-2 downsampling block: halves H and W, widens channels."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.down = nn.Conv2d(c_in, c_out, 3, stride=2, padding=1)
        self.norm1 = _group_norm(c_out)
        self.conv = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = _group_norm(c_out)
        self.act = nn.ReLU()

    def forward(self, x):
        x = self.act(self.norm1(self.down(x)))
        x = self.act(self.norm2(self.conv(x)))
        return x


class DepthBackbone(nn.Module):
    """Shared per-view 2D encoder: 4 stride-2 stages, 16x total downsample.

    The channel schedule ramps to the configured width, e.g. 64->[8,16,32,64]
    or 512->[64,128,256,512]. Every view runs through the same weights.
    """

    def __init__(self, channels):
        super().__init__()
        sched = [max(8, channels // 8), max(8, channels // 4), max(8, channels // 2), channels]
        stages = []
        c_in = 1
        for c_out in sched:
            stages.append(ConvStage(c_in, c_out))
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.out_channels = channels

    def forward(self, images):
        # images (B, k, H, W) or (B, k, 1, H, W)
        if images.dim() == 4:
            images = images.unsqueeze(2)
        b, k, _, h, w = images.shape
        x = images.reshape(b * k, 1, h, w)
        x = self.stages(x)
        return x.reshape(b, k, x.shape[1], x.shape[2], x.shape[3])  # (B, k, C, H/16, W/16)


# ---------------------------------------------------------------------------
# attention primitives


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; the key/value source may have its own width."""

    def __init__(self, dim, heads=4, kv_dim=None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kv_dim, dim)
        self.v_proj = nn.Linear(kv_dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query, source):
        # query (B, Tq, dim), source (B, Ts, kv_dim)
        b, tq, _ = query.shape
        ts = source.shape[1]
        q = self.q_proj(query).reshape(b, tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(source).reshape(b, ts, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(source).reshape(b, ts, self.heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, tq, self.heads * self.head_dim)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim, mult=2):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * mult)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class SelfAttentionBlock(nn.Module):
    """Pre-norm residual self-attention followed by a feed-forward."""

    def __init__(self, dim, heads=4, ffn_mult=2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult)

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attn(y, y)
        x = x + self.ffn(self.norm2(x))
        return x


class CrossAttentionBlock(nn.Module):
    """Pre-norm residual cross-attention: the query stream reads a source."""

    def __init__(self, dim, heads=4, ffn_mult=2, kv_dim=None):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim if kv_dim is None else kv_dim)
        self.attn = MultiHeadAttention(dim, heads, kv_dim=kv_dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult)

    def forward(self, x, source):
        x = x + self.attn(self.norm_q(x), self.norm_kv(source))
        x = x + self.ffn(self.norm2(x))
        return x


def zero_residual_(module):
    """Zero every attention output projection and feed-forward second linear.

    Each residual block then contributes exactly nothing, so attention stacks
    become bit-exact identity maps. Used by tests and available for warm
    starts.
    """
    for m in module.modules():
        if isinstance(m, MultiHeadAttention):
            nn.init.zeros_(m.out_proj.weight)
            nn.init.zeros_(m.out_proj.bias)
        if isinstance(m, FeedForward):
            nn.init.zeros_(m.fc2.weight)
            nn.init.zeros_(m.fc2.bias)
    return module


# ---------------------------------------------------------------------------
# multi-view encoder


class CrossViewFusion(nn.Module):
    """One fusion round: the reference view's tokens query all other views.

    Only the reference view is updated; the remaining views pass through
    bit-identical.
    """

    def __init__(self, channels, heads=4, ffn_mult=2):
        super().__init__()
        self.block = CrossAttentionBlock(channels, heads, ffn_mult)

    def forward(self, f_v, query_view=0):
        # f_v (B, k, C, H1, W1)
        b, k, c, h1, w1 = f_v.shape
        if k < 2:
            raise ValueError("cross-view fusion needs at least 2 views")
        tokens = f_v.permute(0, 1, 3, 4, 2).reshape(b, k, h1 * w1, c)
        ref = tokens[:, query_view]  # (B, T, C)
        other_idx = [v for v in range(k) if v != query_view]
        others = tokens[:, other_idx].reshape(b, (k - 1) * h1 * w1, c)
        fused = self.block(ref, others)
        out = f_v.clone()
        out[:, query_view] = fused.reshape(b, h1, w1, c).permute(0, 3, 1, 2)
        return out


class GroupSelfAttention(nn.Module):
    """One enhancement round: joint self-attention over all views' tokens."""

    def __init__(self, channels, heads=4, ffn_mult=2):
        super().__init__()
        self.block = SelfAttentionBlock(channels, heads, ffn_mult)

    def forward(self, f_v):
        b, k, c, h1, w1 = f_v.shape
        tokens = f_v.permute(0, 1, 3, 4, 2).reshape(b, k * h1 * w1, c)
        tokens = self.block(tokens)
        return tokens.reshape(b, k, h1, w1, c).permute(0, 1, 4, 2, 3)


class MultiViewEncoder(nn.Module):
    """Alternating fusion/enhancement rounds plus the pooled global feature.

    Each round has its own weights. The global feature is the per-view,
    per-channel spatial maximum of the final view features.
    """

    def __init__(self, channels, n_iters=2, heads=4, ffn_mult=2, rotate_query_view=False):
        super().__init__()
        if n_iters < 1:
            raise ValueError("n_iters must be at least 1")
        self.fusions = nn.ModuleList(CrossViewFusion(channels, heads, ffn_mult) for _ in range(n_iters))
        self.enhances = nn.ModuleList(GroupSelfAttention(channels, heads, ffn_mult) for _ in range(n_iters))
        self.rotate_query_view = rotate_query_view

    def forward(self, f_v):
        k = f_v.shape[1]
        for i, (fuse, enhance) in enumerate(zip(self.fusions, self.enhances)):
            qv = i % k if self.rotate_query_view else 0
            f_v = fuse(f_v, query_view=qv)
            f_v = enhance(f_v)
        f_g = f_v.amax(dim=(-2, -1))  # (B, k, C)
        return f_v, f_g


# ---------------------------------------------------------------------------
# point branch and decoder


class PointFeatureNet(nn.Module):
    """Mini PointNet: per-point MLP, max-pooled context, second per-point MLP.

    Permutation-equivariant by construction; reordering input points reorders
    output rows identically.
    """

    def __init__(self, out_dim=128, hidden=None):
        super().__init__()
        hidden = max(8, out_dim // 2) if hidden is None else hidden
        self.mlp1 = nn.Sequential(
            nn.Conv1d(3, hidden, 1),
            nn.ReLU(),
            nn.Conv1d(hidden, hidden * 2, 1),
        )
        self.mlp2 = nn.Sequential(
            nn.Conv1d(hidden * 4, hidden * 2, 1),
            nn.ReLU(),
            nn.Conv1d(hidden * 2, out_dim, 1),
        )
        self.out_dim = out_dim

    def forward(self, points):
        # points (B, N, 3)
        if points.shape[1] < 1:
            raise ValueError("point cloud must contain at least one point")
        x = self.mlp1(points.transpose(1, 2))  # (B, 2h, N)
        pooled = x.max(dim=2, keepdim=True).values  # (B, 2h, 1)
        x = torch.cat([x, pooled.expand(-1, -1, x.shape[2])], dim=1)  # (B, 4h, N)
        x = self.mlp2(x)  # (B, D, N)
        return x.transpose(1, 2)  # (B, N, D)


def fps_resample(points, m):
    """Batch FPS on torch tensors; indices computed on detached coordinates.

    Gradients flow into the selected points through the gather.
    """
    idx = np.stack(
        [farthest_point_indices(p.detach().cpu().double().numpy(), m) for p in points]
    )
    idx_t = torch.as_tensor(idx, dtype=torch.long, device=points.device)
    return torch.gather(points, 1, idx_t.unsqueeze(-1).expand(-1, -1, points.shape[-1]))


class SeedGenerator(nn.Module):
    """Coarse cloud synthesis from the pooled global feature.

    A transposed 1D convolution expands the (view-pooled) global vector into
    n_raw candidate features, a residual MLP refines them, a linear head
    emits 3D points, and FPS over candidates plus the observed cloud picks
    the n_coarse seeds.
    """

    def __init__(self, channels, n_raw=128, n_coarse=128, hidden=128):
        super().__init__()
        self.expand = nn.ConvTranspose1d(channels, hidden, n_raw)
        self.refine = nn.Sequential(
            nn.Conv1d(hidden, hidden, 1),
            nn.ReLU(),
            nn.Conv1d(hidden, hidden, 1),
        )
        self.head = nn.Conv1d(hidden, 3, 1)
        self.n_coarse = n_coarse

    def forward(self, f_g, p_in):
        # f_g (B, k, C), p_in (B, N, 3)
        g = f_g.amax(dim=1)  # (B, C) pooled over views
        feat = self.expand(g.unsqueeze(-1))  # (B, hidden, n_raw)
        feat = feat + self.refine(feat)
        raw = self.head(feat).transpose(1, 2)  # (B, n_raw, 3)
        merged = torch.cat([raw, p_in], dim=1)
        return fps_resample(merged, self.n_coarse)


class UpsampleStage(nn.Module):
    """One refinement round: every parent point spawns ratio displaced children.

    Parent points are lifted by a mini PointNet, fused with the pooled global
    feature, refined by self-attention, then aggregated against two sources
    with the parent features as queries: the flattened 2D view tokens and the
    3D branch (per-point features, or the global rows when feat3d_source is
    "global"). The concatenated aggregates feed an MLP that predicts ratio
    displacement vectors per parent; children are parent + displacement, so a
    zeroed head reproduces each parent exactly ratio times.
    """

    def __init__(
        self,
        ratio,
        dim=128,
        view_channels=64,
        point_feat_dim=128,
        heads=4,
        ffn_mult=2,
        feat3d_source="points",
    ):
        super().__init__()
        if ratio < 1:
            raise ValueError("upsample ratio must be at least 1")
        self.ratio = ratio
        self.feat3d_source = feat3d_source
        self.lift = PointFeatureNet(out_dim=dim)
        self.fuse = nn.Linear(dim + view_channels, dim)
        self.self_block = SelfAttentionBlock(dim, heads, ffn_mult)
        self.cross_2d = CrossAttentionBlock(dim, heads, ffn_mult, kv_dim=view_channels)
        kv3d = point_feat_dim if feat3d_source == "points" else view_channels
        self.cross_3d = CrossAttentionBlock(dim, heads, ffn_mult, kv_dim=kv3d)
        self.head = nn.Sequential(
            nn.Linear(2 * dim, dim),
            nn.GELU(),
            nn.Linear(dim, ratio * 3),
        )

    def forward(self, p_prev, f_g, f_v, f_pts):
        # p_prev (B, Np, 3), f_g (B, k, C), f_v (B, k, C, H1, W1), f_pts (B, N, D)
        b, n_prev, _ = p_prev.shape
        x = self.lift(p_prev)  # (B, Np, dim)
        g = f_g.amax(dim=1)  # (B, C)
        x = self.fuse(torch.cat([x, g.unsqueeze(1).expand(-1, n_prev, -1)], dim=-1))
        x = self.self_block(x)
        bk, k = f_v.shape[0], f_v.shape[1]
        tokens_2d = f_v.permute(0, 1, 3, 4, 2).reshape(bk, -1, f_v.shape[2])
        f_2d = self.cross_2d(x, tokens_2d)
        source_3d = f_pts if self.feat3d_source == "points" else f_g
        f_3d = self.cross_3d(x, source_3d)
        disp = self.head(torch.cat([f_2d, f_3d], dim=-1))  # (B, Np, ratio*3)
        disp = disp.reshape(b, n_prev, self.ratio, 3)
        children = p_prev.unsqueeze(2) + disp  # (B, Np, ratio, 3)
        return children.reshape(b, n_prev * self.ratio, 3)


# ---------------------------------------------------------------------------
# full model


@dataclass
class ForwardOutputs:
    """Everything one forward pass produces that training or tests consume."""

    coarse: torch.Tensor  # (B, N_coarse, 3)
    stages: list  # [(B, N_coarse*r1, 3), (B, N_coarse*r1*r2, 3), ...]
    view_features: torch.Tensor  # (B, k, C, H1, W1)
    global_feature: torch.Tensor  # (B, k, C)


class CompletionNet(nn.Module):
    """Complete model; see the module docstring for the data flow."""

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.backbone = DepthBackbone(cfg.channels)
        self.mv_encoder = MultiViewEncoder(
            cfg.channels, cfg.n_iters, cfg.heads, cfg.ffn_mult, cfg.rotate_query_view
        )
        self.point_branch = PointFeatureNet(cfg.point_feat_dim)
        self.seed_gen = SeedGenerator(cfg.channels, cfg.n_raw, cfg.n_coarse)
        self.stages = nn.ModuleList(
            UpsampleStage(
                r,
                cfg.decoder_dim,
                cfg.channels,
                cfg.point_feat_dim,
                cfg.heads,
                cfg.ffn_mult,
                cfg.feat3d_source,
            )
            for r in cfg.stage_ratios
        )

    def encode_views(self, images):
        """Backbone plus multi-view encoder; returns (F_v, F_g)."""
        return self.mv_encoder(self.backbone(images))

    def forward(self, images, p_in):
        # images (B, k, H, W), p_in (B, N, 3)
        f_v, f_g = self.encode_views(images)
        f_pts = self.point_branch(p_in)
        p_c = self.seed_gen(f_g, p_in)
        stages = []
        p = p_c
        for stage in self.stages:
            p = stage(p, f_g, f_v, f_pts)
            stages.append(p)
        return ForwardOutputs(coarse=p_c, stages=stages, view_features=f_v, global_feature=f_g)


def build_model(cfg, seed=0):
    """Construct a CompletionNet with seeded parameter initialization."""
    torch.manual_seed(seed)
    return CompletionNet(cfg)


def parameter_groups(model):
    """Map group names to the parameter names they own.

    Groups: backbone, mv_encoder, point_branch, seed_gen, stage1..stageN.
    Every parameter belongs to exactly one group.
    """
    prefixes = {
        "backbone": "backbone.",
        "mv_encoder": "mv_encoder.",
        "point_branch": "point_branch.",
        "seed_gen": "seed_gen.",
    }
    for i in range(len(model.stages)):
        prefixes[f"stage{i + 1}"] = f"stages.{i}."
    groups = {name: [] for name in prefixes}
    for pname, _ in model.named_parameters():
        owner = [g for g, pre in prefixes.items() if pname.startswith(pre)]
        if len(owner) != 1:
            raise ValueError(f"parameter {pname} does not belong to exactly one group")
        groups[owner[0]].append(pname)
    return groups
