"""Run configuration: dataclasses, presets, JSON files, and env overrides.

A run config has five sections (model, train, distill, data, eval). Files
hold a JSON object with those sections; unknown sections or keys are
rejected by name rather than silently ignored. Environment variables of the
form VDPCN_<SECTION>_<KEY> override file values, and values are parsed as
JSON with a plain-string fallback.

Two presets exist: "paper" mirrors the full-scale defaults (224x224 views,
512 channels, 16384-point targets) and "desk" is the laptop-CPU scale used
by the test suite (64x64 views, 64 channels, 8192-point targets).
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field


@dataclass
class ModelConfig:
    k: int = 6
    height: int = 224
    width: int = 224
    channels: int = 512
    point_feat_dim: int = 128
    n_coarse: int = 128
    n_raw: int = 128
    stage_ratios: list = field(default_factory=lambda: [4, 32])
    n_iters: int = 2
    heads: int = 4
    ffn_mult: int = 2
    decoder_dim: int = 128
    feat3d_source: str = "points"
    rotate_query_view: bool = False
    splat_radius: int = 1
    ortho_extent: float = 1.05
    n_down: int = 2048

    def validate(self):
        if self.k < 1:
            raise ValueError("model.k must be at least 1")
        if self.height % 16 or self.width % 16:
            raise ValueError("model.height and model.width must be multiples of 16")
        if self.channels % self.heads:
            raise ValueError("model.channels must be divisible by model.heads")
        if self.decoder_dim % self.heads:
            raise ValueError("model.decoder_dim must be divisible by model.heads")
        if self.n_iters < 1:
            raise ValueError("model.n_iters must be at least 1")
        if not self.stage_ratios or any(r < 1 for r in self.stage_ratios):
            raise ValueError("model.stage_ratios must be positive")
        if self.feat3d_source not in ("points", "global"):
            raise ValueError("model.feat3d_source must be 'points' or 'global'")
        if self.ortho_extent <= 0:
            raise ValueError("model.ortho_extent must be positive")


@dataclass
class TrainConfig:
    lr: float = 0.0002
    epochs: int = 200
    batch_size: int = 4
    seed: int = 0
    weight_decay: float = 0.0005
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1.0e-8
    max_steps: int = 0  # 0 means no cap
    loss_gt_size: int = 0  # 0 means use the full ground truth in the loss
    log_every: int = 1
    cosine_lr: bool = False  # anneal lr to 0 over the planned steps

    def validate(self):
        if self.lr <= 0:
            raise ValueError("train.lr must be positive")
        if self.epochs < 1:
            raise ValueError("train.epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("train.batch_size must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("train.weight_decay must be non-negative")


@dataclass
class DistillConfig:
    tau0: float = 1.0
    tau1: float = 1.0
    tau2: float = 1.0
    variant: str = "D"
    trainable_groups: list = field(default_factory=lambda: ["backbone", "mv_encoder"])
    student_lr: float = 0.0001

    def validate(self):
        for name in ("tau0", "tau1", "tau2"):
            if getattr(self, name) < 0:
                raise ValueError(f"distill.{name} must be non-negative")
        if self.variant not in ("A", "B", "C", "D"):
            raise ValueError("distill.variant must be one of A, B, C, D")
        if self.student_lr <= 0:
            raise ValueError("distill.student_lr must be positive")


@dataclass
class DataConfig:
    root: str = "data"
    n_shapes: int = 40
    points_per_shape: int = 16384
    input_size: int = 2048
    split_fraction: float = 0.8
    difficulties: list = field(default_factory=lambda: ["S", "M", "H"])

    def validate(self):
        if self.n_shapes < 1:
            raise ValueError("data.n_shapes must be at least 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("data.split_fraction must lie in (0, 1)")
        bad = [d for d in self.difficulties if d not in ("S", "M", "H")]
        if bad:
            raise ValueError(f"data.difficulties contains unknown levels {bad}")


@dataclass
class EvalConfig:
    f_threshold: float = 0.01
    report_path: str = "report.json"
    merge_with_input: bool = False

    def validate(self):
        if self.f_threshold <= 0:
            raise ValueError("eval.f_threshold must be positive")


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "distill": DistillConfig,
    "data": DataConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        for name in _SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def paper_preset():
    """Full-scale defaults; documented, not exercised by the test suite."""
    return RunConfig()


def desk_preset():
    """Laptop-CPU scale: small images and channels, minutes not days.

    Short runs want a hotter, annealed learning rate; the full-scale
    preset keeps the constant rate its long schedules were tuned for.
    """
    cfg = RunConfig()
    cfg.model.height = 64
    cfg.model.width = 64
    cfg.model.channels = 64
    cfg.model.stage_ratios = [4, 8]
    cfg.data.points_per_shape = 8192
    cfg.train.batch_size = 4
    cfg.train.loss_gt_size = 2048
    cfg.train.lr = 0.0005
    cfg.train.cosine_lr = True
    return cfg


PRESETS = {"paper": paper_preset, "desk": desk_preset}


def update_config(cfg, overrides):
    """Apply a {section: {key: value}} dict onto a RunConfig in place.

    Unknown section or key names raise ValueError naming the offender.
    """
    for section, values in overrides.items():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section: {section!r}")
        target = getattr(cfg, section)
        valid = {f.name for f in dataclasses.fields(target)}
        if not isinstance(values, dict):
            raise ValueError(f"config section {section!r} must be an object")
        for key, value in values.items():
            if key not in valid:
                raise ValueError(f"unknown config key: {section}.{key}")
            setattr(target, key, value)
    return cfg


def env_overrides(environ=None, prefix="VDPCN_"):
    """Collect {section: {key: value}} overrides from environment variables.

    VDPCN_TRAIN_LR=0.01 sets train.lr; values are JSON-parsed when possible
    so numbers, booleans, and lists work, with raw strings as the fallback.
    """
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(prefix):
            continue
        rest = name[len(prefix) :].lower()
        section, _, key = rest.partition("_")
        if section not in _SECTIONS or not key:
            raise ValueError(f"cannot map environment variable {name} to a config key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.setdefault(section, {})[key] = value
    return out


def load_config(path=None, preset="desk", extra_overrides=None, environ=None):
    """Build a validated RunConfig from preset, optional file, env, and overrides.

    Precedence, lowest to highest: preset defaults, config file, environment
    variables, explicit overrides (CLI flags).
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
    cfg = PRESETS[preset]()
    if path is not None:
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise ValueError(f"config file {path} is not valid JSON: {e}") from e
        update_config(cfg, doc)
    update_config(cfg, env_overrides(environ))
    if extra_overrides:
        update_config(cfg, extra_overrides)
    return cfg.validate()
