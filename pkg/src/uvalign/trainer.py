"""Multi-stage training loops, the 2D image task, and new-shape fitting.

A mini-batch is one shape: each optimizer step encodes one shape's grid,
runs the full point batch through the mapper/masker/generators, and
applies one Adam update. Stages differ only in epoch counts and loss
weights; the first stage is the only one with a nonzero prior weight.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import tensor as tt
from .losses import (LossWeights, build_neighbor_graph, prior_loss_variant,
                     recon_losses, smoothness_loss, total_loss)
from .networks import AuvModel, _he_std, _xavier_std
from .optim import Adam
from .tensor import Tape

__all__ = [
    "NumericalFailure", "StageConfig", "ShapeSample", "TrainRun",
    "stages_for", "stages_from_dicts", "toy_sample", "mesh_sample",
    "head_sample", "train", "train_toy", "fit_new_shape", "FitResult",
    "train_linear_restriction", "LinearFitResult", "write_metrics_csv",
    "basis_param_hash", "METRIC_COLUMNS",
]

METRIC_COLUMNS = ("epoch", "stage", "L_c", "L_n", "L_x", "L_s", "L_p", "total")

_TERM_TO_COLUMN = {"color": "L_c", "normal": "L_n", "cycle": "L_x",
                   "smooth": "L_s", "prior": "L_p"}


class NumericalFailure(ArithmeticError):
    """A loss term went non-finite; message carries stage/epoch/term."""


@dataclass
class StageConfig:
    """One training stage: epoch count, loss weights, freeze flag.

    prior_cutoff, when set, zeroes the prior weight after that many
    epochs within the stage. freeze_basis keeps the basis generators out
    of the optimizer (their gradients are discarded).
    """

    epochs: int
    weights: LossWeights
    prior_cutoff: Optional[int] = None
    freeze_basis: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"StageConfig.epochs must be >= 1, got {self.epochs}")
        if self.prior_cutoff is not None and self.prior_cutoff < 1:
            raise ValueError("StageConfig.prior_cutoff must be >= 1 or None")


@dataclass
class ShapeSample:
    """One preprocessed shape, ready for the training loop.

    grid is the encoder input (C, R, R) or (C, R, R, R); points the
    full point batch; colors None for untextured shapes (their color
    loss is skipped). labels and landmarks ride along for evaluation.
    """

    name: str
    grid: np.ndarray
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    landmarks: Optional[np.ndarray] = None


@dataclass
class TrainRun:
    """Everything one training run needs, plus its metrics log."""

    model: AuvModel
    samples: List[ShapeSample]
    stages: List[StageConfig]
    seed: int = 0
    category: Optional[str] = None
    learning_rate: float = 1e-4
    clip_norm: Optional[float] = 10.0
    smooth_subset: int = 512
    sigma: float = 0.02
    out_dir: Optional[str] = None
    epoch_callback: Optional[object] = None
    metrics: List[dict] = field(default_factory=list)


def _scaled(count, scale):
    return max(1, int(round(count * scale)))


def stages_for(category, epoch_scale=1.0):
    """StageConfig list for a category, epochs scaled by epoch_scale."""
    from .configs import FULL_STAGES, TOY_STAGES, ConfigError
    if category == "toy":
        table = TOY_STAGES
    elif category in FULL_STAGES:
        table = FULL_STAGES[category]
    else:
        raise ConfigError(f"no stage table for category {category!r}")
    out = []
    for epochs, weights, cutoff in table:
        out.append(StageConfig(
            epochs=_scaled(epochs, epoch_scale),
            weights=LossWeights.from_tuple(weights),
            prior_cutoff=None if cutoff is None else _scaled(cutoff, epoch_scale),
        ))
    return out


def stages_from_dicts(stage_dicts, epoch_scale=1.0):
    """StageConfig list from run-config stage entries."""
    out = []
    for d in stage_dicts:
        cutoff = d.get("prior_cutoff")
        out.append(StageConfig(
            epochs=_scaled(d["epochs"], epoch_scale),
            weights=LossWeights.from_tuple(tuple(d["weights"])),
            prior_cutoff=None if cutoff is None else _scaled(cutoff, epoch_scale),
        ))
    return out


def toy_sample(img, name):
    """ShapeSample for one 2D image: points are the pixel-center grid.

    Coordinates are normalized so pixel (0, 0) sits at (-0.5, -0.5) and
    the opposite corner at (0.5, 0.5); landmarks get the same transform.
    """
    raster = np.asarray(img.raster, dtype=np.float32)
    size = raster.shape[0]
    axis = (np.arange(size, dtype=np.float64) / (size - 1) - 0.5)
    xx, yy = np.meshgrid(axis, axis)
    points = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float32)
    landmarks = None
    if img.landmarks is not None:
        landmarks = np.asarray(img.landmarks, dtype=np.float64) / (size - 1) - 0.5
    return ShapeSample(
        name=name,
        grid=np.ascontiguousarray(raster.transpose(2, 0, 1)),
        points=points,
        colors=raster.reshape(-1, 3).copy(),
        landmarks=landmarks,
    )


def mesh_sample(mesh, name, n_points, resolution, seed, vertex_labels=None):
    """ShapeSample for one textured mesh: surface samples + color voxels."""
    from .geometry import sample_surface, voxelize_colored
    cloud = sample_surface(mesh, n_points, seed, vertex_labels=vertex_labels)
    vox = voxelize_colored(cloud, resolution)
    return ShapeSample(
        name=name,
        grid=vox.data,
        points=cloud.positions,
        colors=cloud.colors if cloud.has_color else None,
        normals=cloud.normals,
        labels=cloud.labels,
    )


def head_sample(head, name, n_points, resolution, seed):
    """ShapeSample for a synthetic head, carrying labels and landmarks."""
    out = mesh_sample(head.mesh, name, n_points, resolution, seed,
                      vertex_labels=head.vertex_labels)
    out.landmarks = np.asarray(head.landmarks, dtype=np.float64)
    return out


class _Prepared:
    """Per-shape constants cached across epochs (tensors, neighbor graph)."""

    def __init__(self, sample: ShapeSample, dtype, need_graph, sigma):
        self.sample = sample
        self.n = len(sample.points)
        self.grid_t = tt.constant(np.asarray(sample.grid, dtype=dtype))
        self.points_t = tt.constant(np.asarray(sample.points, dtype=dtype))
        self.points_np = np.asarray(sample.points, dtype=np.float64)
        self.normals_t = None
        self.normals_np = None
        if sample.normals is not None:
            self.normals_t = tt.constant(np.asarray(sample.normals, dtype=dtype))
            self.normals_np = np.asarray(sample.normals, dtype=np.float64)
        self.colors_t = None
        if sample.colors is not None:
            self.colors_t = tt.constant(np.asarray(sample.colors, dtype=dtype))
        self.graph = None
        if need_graph:
            self.graph = build_neighbor_graph(self.points_np, sigma=sigma)


def basis_param_hash(model: AuvModel):
    """SHA-256 over every basis-generator parameter, in name order."""
    digest = hashlib.sha256()
    for name in sorted(model.params):
        if name.startswith("basis"):
            digest.update(name.encode("utf-8"))
            digest.update(model.params[name].data.tobytes())
    return digest.hexdigest()


def _validate_run(run: TrainRun):
    cfg = run.model.config
    if not run.samples:
        raise ValueError("train: no samples")
    if not run.stages:
        raise ValueError("train: no stages")
    for idx, stage in enumerate(run.stages):
        if idx > 0 and stage.weights.prior > 0:
            raise ValueError(
                f"train: stage {idx + 1} has prior weight "
                f"{stage.weights.prior}; only stage 1 may use the prior")
    needs_prior = any(s.weights.prior > 0 for s in run.stages)
    if needs_prior and run.category is None:
        raise ValueError("train: prior weight set but run.category is None")
    for s in run.samples:
        if s.points.shape[1] != cfg.point_dim:
            raise ValueError(
                f"train: sample {s.name} has {s.points.shape[1]}-d points, "
                f"model wants {cfg.point_dim}-d")
        if cfg.kind == "3d" and s.normals is None:
            raise ValueError(f"train: 3d sample {s.name} is missing normals")


def _prior_term(run: TrainRun, prep: _Prepared, out):
    if run.category == "toy":
        return tt.mse(out["uv"], prep.points_t)
    if run.category == "chair":
        return prior_loss_variant("chair", prep.points_np, prep.normals_np,
                                  out["uv"], tuple(out["masks"]))
    return prior_loss_variant(run.category, prep.points_np, prep.normals_np,
                              out["uv"], out["masks"][0])


def _step(run: TrainRun, prep: _Prepared, stage: StageConfig, use_prior,
          optimizer, all_params, rng, where):
    model = run.model
    weights = stage.weights
    with Tape() as tape:
        record = model.encoder_forward(prep.grid_t)
        out = model.model_forward(prep.points_t, record, prep.normals_t)
        terms = recon_losses(
            out["pred"], colors=prep.colors_t,
            normals=prep.normals_t if model.config.out_channels == 9 else None,
            points=prep.points_t if model.config.out_channels == 9 else None)
        if weights.smooth > 0 and prep.graph is not None:
            subset = rng.choice(prep.n, size=min(run.smooth_subset, prep.n),
                                replace=False)
            terms["smooth"] = smoothness_loss(out["uv"], prep.graph, subset)
        else:
            terms["smooth"] = None
        terms["prior"] = _prior_term(run, prep, out) if use_prior else None
        total = total_loss(terms, weights)

        values = {k: float(v.data) for k, v in terms.items() if v is not None}
        values["total"] = float(total.data)
        bad = [f"{k}={v!r}" for k, v in values.items() if not np.isfinite(v)]
        if bad:
            raise NumericalFailure(
                f"{where} shape {prep.sample.name}: non-finite loss terms: "
                + ", ".join(bad))
        tape.backward(total, params=optimizer.params)
        optimizer.step(clip_norm=run.clip_norm)
    for p in all_params:
        p.grad = None
    return values


def train(run: TrainRun):
    """Run every stage; returns the metrics log (also kept on the run).

    One Adam update per shape per epoch; shape order reshuffles each
    epoch from the run seed. Raises NumericalFailure on the first
    non-finite loss term.
    """
    _validate_run(run)
    model = run.model
    dtype = np.dtype(model.config.dtype)
    rng = np.random.default_rng(run.seed)
    need_graph = any(s.weights.smooth > 0 for s in run.stages)

    prepared = {}
    preps = []
    for sample in run.samples:
        key = id(sample)
        if key not in prepared:
            prepared[key] = _Prepared(sample, dtype, need_graph, run.sigma)
        preps.append(prepared[key])

    all_params = list(model.params.values())
    global_epoch = 0

    for s_idx, stage in enumerate(run.stages):
        trainable = ("enc", "map", "mask") if stage.freeze_basis else None
        # each stage is a different optimization problem (the loss weights
        # jump), so moment estimates carried over the boundary would be
        # stale by the same factor; start the stage with a clean state
        optimizer = Adam(model.parameters(trainable), lr=run.learning_rate)
        for e in range(stage.epochs):
            use_prior = stage.weights.prior > 0 and (
                stage.prior_cutoff is None or e < stage.prior_cutoff)
            order = rng.permutation(len(preps))
            sums, counts = {}, {}
            where = f"stage {s_idx + 1} epoch {e + 1}"
            for i in order:
                values = _step(run, preps[i], stage, use_prior, optimizer,
                               all_params, rng, where)
                for k, v in values.items():
                    sums[k] = sums.get(k, 0.0) + v
                    counts[k] = counts.get(k, 0) + 1
            global_epoch += 1
            row = {"epoch": global_epoch, "stage": s_idx + 1}
            for term in ("color", "normal", "cycle", "smooth", "prior", "total"):
                row[term] = sums[term] / counts[term] if term in sums else None
            run.metrics.append(row)
            if run.epoch_callback is not None:
                run.epoch_callback(model, row)
        if run.out_dir:
            os.makedirs(run.out_dir, exist_ok=True)
            model.save(os.path.join(run.out_dir, f"stage{s_idx + 1}.auvn"),
                       extra_config={"stage": s_idx + 1,
                                     "category": run.category})
    return run.metrics


def train_toy(run: TrainRun):
    """2D image variant of train: same engine, identity prior."""
    if run.model.config.kind != "2d":
        raise ValueError("train_toy: model is not a 2d configuration")
    if run.category is None:
        run.category = "toy"
    return train(run)


@dataclass
class FitResult:
    """Outcome of fitting a new shape onto a trained model."""

    record: object
    metrics: List[dict]
    basis_hashes: List[str]

    @property
    def basis_frozen(self):
        return len(set(self.basis_hashes)) == 1


def fit_new_shape(model: AuvModel, sample: ShapeSample, category,
                  epochs=200, duplicates=100, epoch_scale=1.0, seed=0,
                  learning_rate=1e-4, clip_norm=10.0, smooth_subset=512,
                  sigma=0.02, out_dir=None):
    """Fit one unseen shape with the basis generators frozen.

    The shape enters the loop as `duplicates` copies and training
    continues with the category's final-stage weights. Basis parameters
    are hashed before the run and after every epoch; the hashes are
    returned so callers can verify the freeze. An untextured sample
    (colors None) trains without the color term.
    """
    from .configs import FULL_STAGES, ConfigError
    if category not in FULL_STAGES:
        raise ConfigError(f"unknown category {category!r}")
    epochs_scaled = _scaled(epochs, epoch_scale)
    final_weights = LossWeights.from_tuple(FULL_STAGES[category][-1][1])
    stage = StageConfig(epochs=epochs_scaled, weights=final_weights,
                        freeze_basis=True)

    hashes = [basis_param_hash(model)]
    run = TrainRun(
        model=model, samples=[sample] * duplicates, stages=[stage],
        seed=seed, category=category, learning_rate=learning_rate,
        clip_norm=clip_norm, smooth_subset=smooth_subset, sigma=sigma,
        out_dir=out_dir,
        epoch_callback=lambda m, row: hashes.append(basis_param_hash(m)),
    )
    metrics = train(run)

    dtype = np.dtype(model.config.dtype)
    with Tape():
        record = model.encoder_forward(np.asarray(sample.grid, dtype=dtype))
    return FitResult(record=record.detach(), metrics=metrics,
                     basis_hashes=hashes)


@dataclass
class LinearFitResult:
    """Trained linear-restriction model: fixed-grid basis + coefficients."""

    basis: np.ndarray            # (P, N) basis values at the pixel grid
    coefficients: np.ndarray     # (S, 3, N) per-image per-channel weights
    reconstructions: np.ndarray  # (S, H, W, 3)
    mse: float
    metrics: List[dict]


def train_linear_restriction(images, n_basis=16, width=256, depth=4,
                             steps=24000, learning_rate=2e-3, seed=0,
                             batch_pixels=256, head_refresh=200,
                             lr_floor=0.1, log_every=2000):
    """Train the model's linear core on already-aligned images.

    The UV mapper is pinned to the identity (query points are the pixel
    grid itself) and the generator stays an MLP over 2D points with
    n_basis gray-scale outputs, trained by Adam on batch_pixels random
    grid points per step with the learning rate decaying geometrically
    to lr_floor * learning_rate. The coefficient head is a single linear
    layer on the flattened image; because it is linear, its optimum
    given the current basis is a least-squares solve, recomputed every
    head_refresh steps instead of chased by gradient. The best
    attainable error equals a rank-n_basis factorization, so callers
    can compare against a truncated-SVD oracle.
    """
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 4 or imgs.shape[3] != 3:
        raise ValueError(f"train_linear_restriction: want (S, H, W, 3), got {imgs.shape}")
    s, h, w, _ = imgs.shape
    p = h * w
    axis_y = (np.arange(h, dtype=np.float64) / (h - 1) - 0.5)
    axis_x = (np.arange(w, dtype=np.float64) / (w - 1) - 0.5)
    xx, yy = np.meshgrid(axis_x, axis_y)
    grid = np.stack([xx.ravel(), yy.ravel()], axis=1)

    target = np.ascontiguousarray(
        imgs.transpose(0, 3, 1, 2).reshape(s * 3, p))
    flat = imgs.reshape(s, p * 3)

    rng = np.random.default_rng(seed)
    dims = [2] + [width] * depth + [n_basis]
    params = {}
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        last = i == len(dims) - 2
        std = _xavier_std(fan_in, fan_out) if last else _he_std(fan_in)
        params[f"l{i}.w"] = tt.tensor(rng.normal(0.0, std, (fan_in, fan_out)),
                                      requires_grad=True)
        params[f"l{i}.b"] = tt.tensor(np.zeros(fan_out), requires_grad=True)

    param_list = list(params.values())
    optimizer = Adam(param_list, lr=learning_rate)
    metrics = []
    grid_t = tt.constant(grid)
    batch = min(batch_pixels, p)

    def basis_at(pts_t):
        x = pts_t
        for i in range(len(dims) - 1):
            x = tt.add(tt.matmul(x, params[f"l{i}.w"]), params[f"l{i}.b"])
            if i < len(dims) - 2:
                x = tt.leaky_relu(x)
        return x

    def solve_coefficients():
        with Tape():
            b = basis_at(grid_t).data.astype(np.float64)
        c, *_ = np.linalg.lstsq(b, target.T, rcond=None)
        full_mse = float(np.mean((target.T - b @ c) ** 2))
        return b, np.ascontiguousarray(c.T), full_mse

    coef = None
    for step in range(steps):
        optimizer.lr = learning_rate * lr_floor ** (step / steps)
        if step % head_refresh == 0:
            _, coef, full_mse = solve_coefficients()
            if not np.isfinite(full_mse):
                raise NumericalFailure(f"linear restriction step {step + 1}: "
                                       f"non-finite loss {full_mse!r}")
        idx = rng.integers(0, p, size=batch)
        with Tape() as tape:
            x = basis_at(tt.constant(grid[idx]))
            pred = tt.matmul(tt.constant(coef), tt.transpose2d(x))
            loss = tt.mse(pred, tt.constant(target[:, idx]))
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalFailure(f"linear restriction step {step + 1}: "
                                       f"non-finite loss {value!r}")
            tape.backward(loss, params=param_list)
            optimizer.step()
        optimizer.zero_grad()
        if (step + 1) % log_every == 0 or step + 1 == steps:
            _, _, full_mse = solve_coefficients()
            metrics.append({"epoch": step + 1, "stage": 1, "color": full_mse,
                            "normal": None, "cycle": None, "smooth": None,
                            "prior": None, "total": full_mse})

    # Materialize the linear head: with S <= 3P + 1 the system is
    # underdetermined, so the min-norm solve reproduces the solved
    # coefficients and the reported MSE is the true model-forward error.
    basis, coef, _ = solve_coefficients()
    design = np.concatenate([flat, np.ones((s, 1))], axis=1)
    head, *_ = np.linalg.lstsq(design, coef.reshape(s, 3 * n_basis), rcond=None)
    coef_fwd = (design @ head).reshape(s * 3, n_basis)
    pred = coef_fwd @ basis.T
    mse = float(np.mean((pred - target) ** 2))
    recon = pred.reshape(s, 3, h, w).transpose(0, 2, 3, 1)
    return LinearFitResult(
        basis=basis.copy(),
        coefficients=coef_fwd.reshape(s, 3, n_basis).copy(),
        reconstructions=np.ascontiguousarray(recon),
        mse=mse,
        metrics=metrics,
    )


def write_metrics_csv(metrics, path):
    """Write the metrics log; absent terms become empty cells. Atomic."""
    key_for = {"L_c": "color", "L_n": "normal", "L_x": "cycle",
               "L_s": "smooth", "L_p": "prior"}
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in metrics:
            out = []
            for col in METRIC_COLUMNS:
                val = row.get(key_for.get(col, col))
                out.append("" if val is None else repr(val) if isinstance(val, float) else val)
            writer.writerow(out)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
