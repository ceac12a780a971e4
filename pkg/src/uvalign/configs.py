"""Training schedules, per-category model shapes, and run-config files.

The stage tables carry the full-scale epoch counts and loss-weight tuples
per category; desk-scale runs shrink the epoch counts through a single
multiplier and shrink the network widths through desk_model_config. Run
config files are JSON documents validated against a closed schema before
any work starts.
"""

from __future__ import annotations

import json

import jsonschema

from .losses import PRIOR_CATEGORIES

__all__ = [
    "ConfigError", "FULL_STAGES", "FULL_MODELS", "TOY_STAGES",
    "DESK_DEFAULTS", "desk_model_config", "full_model_config",
    "RUN_SCHEMA", "validate_run_config", "load_run_config",
]


class ConfigError(ValueError):
    """A run config file failed validation."""


# Stage tables at full scale: (epochs, (w_color, w_normal, w_cycle,
# w_smooth, w_prior), prior_cutoff). prior_cutoff is the epoch count
# within the stage after which the prior weight drops to zero; None
# keeps the stage's prior weight for the whole stage. Only stage 1
# carries a nonzero prior weight.
FULL_STAGES = {
    "head": (
        (10, (1.0, 0.5, 100.0, 100.0, 1.0), None),
        (2000, (1.0, 0.5, 1.0, 1.0, 0.0), None),
        (2000, (1.0, 0.5, 100.0, 100.0, 0.0), None),
    ),
    "body": (
        (10, (1.0, 0.5, 1.0, 1.0, 1.0), None),
        (2000, (1.0, 0.1, 1.0, 1.0, 0.0), None),
        (2000, (1.0, 0.5, 100.0, 100.0, 0.0), None),
    ),
    "animal": (
        (10, (0.1, 1.0, 100.0, 100.0, 100.0), None),
        (2000, (0.1, 1.0, 100.0, 100.0, 0.0), None),
        (2000, (0.1, 1.0, 100.0, 10.0, 0.0), None),
    ),
    "car": (
        (200, (1.0, 0.1, 100.0, 10.0, 1.0), 10),
        (1800, (1.0, 0.1, 1.0, 10.0, 0.0), None),
        (2000, (1.0, 0.1, 1000.0, 100.0, 0.0), None),
    ),
    "shapenet_car": (
        (20, (1.0, 0.1, 10.0, 10.0, 1.0), 5),
        (40, (1.0, 0.1, 1.0, 10.0, 0.0), None),
        (140, (1.0, 1.0, 100.0, 100.0, 0.0), None),
    ),
    "chair": (
        (50, (1.0, 1.0, 10.0, 100.0, 100.0), 5),
        (50, (1.0, 1.0, 10.0, 10.0, 0.0), None),
        (100, (1.0, 1.0, 100.0, 100.0, 0.0), None),
    ),
}

# 2D image task: an identity prior for the first few epochs, then plain
# reconstruction. Counts are a working default, not a published table.
TOY_STAGES = (
    (5, (1.0, 0.0, 0.0, 0.0, 1.0), None),
    (295, (1.0, 0.0, 0.0, 0.0, 0.0), None),
)

# Full-scale model shapes per category: generator channel counts N_k and
# hidden widths, one entry per generator.
FULL_MODELS = {
    "head": {"basis_channels": (64, 16), "basis_width": (1024, 128)},
    "body": {"basis_channels": (64, 64), "basis_width": (1024, 1024)},
    "animal": {"basis_channels": (64, 64), "basis_width": (1024, 1024)},
    "car": {"basis_channels": (64, 16), "basis_width": (1024, 128)},
    "shapenet_car": {"basis_channels": (64, 16), "basis_width": (1024, 128)},
    "chair": {"basis_channels": (64, 64, 64, 64), "basis_width": 512,
              "chair_masker": True},
}

# Desk-scale knobs shared by the CLI and the acceptance runs. The point
# budget floor is 4096; the subset size is the number of rows entering
# the smoothness term each step.
DESK_DEFAULTS = {
    "epoch_scale": 0.05,
    "points_per_shape": 4096,
    "smooth_subset": 512,
    "voxel_resolution": 32,
    "learning_rate": 1e-4,
    "clip_norm": 10.0,
    "sigma": 0.02,
}

FULL_DEFAULTS = {
    "epoch_scale": 1.0,
    "points_per_shape": 16384,
    "smooth_subset": 2048,
    "voxel_resolution": 64,
    "learning_rate": 1e-4,
    "clip_norm": 10.0,
    "sigma": 0.02,
}


def full_model_config(category, **overrides):
    """ModelConfig kwargs at published scale for a 3D category."""
    from .networks import ModelConfig
    if category not in FULL_MODELS:
        raise ConfigError(f"unknown category {category!r}; expected one of {PRIOR_CATEGORIES}")
    kwargs = dict(kind="3d", out_channels=9, code_dim=256, basis_depth=8,
                  mapper_width=512, mapper_depth=5, masker_width=512,
                  masker_depth=5, resolution=64, in_channels=4)
    kwargs.update(FULL_MODELS[category])
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def desk_model_config(category, **overrides):
    """ModelConfig kwargs shrunk to run on one CPU in minutes.

    Generator channel counts stay at the published values (they define
    the representation); widths, code size, and the voxel resolution
    shrink.
    """
    from .networks import ModelConfig
    if category not in FULL_MODELS:
        raise ConfigError(f"unknown category {category!r}; expected one of {PRIOR_CATEGORIES}")
    full = FULL_MODELS[category]
    width = full["basis_width"]
    if isinstance(width, tuple):
        width = tuple(max(32, w // 4) for w in width)
    else:
        width = max(32, width // 4)
    kwargs = dict(kind="3d", out_channels=9, code_dim=64, basis_depth=6,
                  mapper_width=256, mapper_depth=5, masker_width=256,
                  masker_depth=5, resolution=32, in_channels=4,
                  encoder_channels=(16, 32, 64, 128),
                  basis_channels=full["basis_channels"], basis_width=width,
                  chair_masker=full.get("chair_masker", False))
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def toy_model_config(n_basis=128, size=64, **overrides):
    """ModelConfig for the 2D image task: one generator, RGB output."""
    from .networks import ModelConfig
    kwargs = dict(kind="2d", basis_channels=(n_basis,), basis_width=256,
                  basis_depth=6, code_dim=64, out_channels=3,
                  mapper_width=256, mapper_depth=5, masker_width=64,
                  masker_depth=2, encoder_channels=(16, 32, 64, 128),
                  resolution=size, in_channels=3)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


_STAGE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["epochs", "weights"],
    "properties": {
        "epochs": {"type": "integer", "minimum": 1},
        "weights": {
            "type": "array", "minItems": 5, "maxItems": 5,
            "items": {"type": "number", "minimum": 0},
        },
        "prior_cutoff": {"type": ["integer", "null"], "minimum": 1},
    },
}

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["category"],
    "properties": {
        "category": {"enum": list(PRIOR_CATEGORIES) + ["toy"]},
        "seed": {"type": "integer", "minimum": 0},
        "scale": {"enum": ["desk", "full"]},
        "epoch_scale": {"type": "number", "exclusiveMinimum": 0},
        "points_per_shape": {"type": "integer", "minimum": 256},
        "smooth_subset": {"type": "integer", "minimum": 16},
        "voxel_resolution": {"type": "integer", "minimum": 8},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "n_shapes": {"type": "integer", "minimum": 1},
        "image_size": {"type": "integer", "minimum": 8},
        "model": {"type": "object"},
        "stages": {"type": "array", "minItems": 1, "items": _STAGE_SCHEMA},
        "data_dir": {"type": "string"},
        "out_dir": {"type": "string"},
    },
}


def validate_run_config(cfg):
    """Schema-check a run config dict and fill in scale defaults."""
    try:
        jsonschema.validate(cfg, RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"run config invalid at {path}: {exc.message}") from exc
    merged = dict(FULL_DEFAULTS if cfg.get("scale") == "full" else DESK_DEFAULTS)
    merged["seed"] = 0
    merged["scale"] = "desk"
    merged.update(cfg)
    if merged["category"] != "toy" and "stages" not in merged:
        merged["stages"] = [
            {"epochs": e, "weights": list(w), "prior_cutoff": cut}
            for e, w, cut in FULL_STAGES[merged["category"]]
        ]
    if merged["category"] == "toy" and "stages" not in merged:
        merged["stages"] = [
            {"epochs": e, "weights": list(w), "prior_cutoff": cut}
            for e, w, cut in TOY_STAGES
        ]
    return merged


def load_run_config(path):
    """Read and validate a JSON run config; raises ConfigError."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"run config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run config is not valid JSON: {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"run config root must be an object: {path}")
    return validate_run_config(cfg)
