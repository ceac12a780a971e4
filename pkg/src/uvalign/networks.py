"""The four sub-networks and their composition.

An AuvModel bundles: an encoder (2D or 3D CNN) that turns a colored
raster/voxel grid into a shape code plus per-generator coefficient
matrices; a UV mapper MLP taking point coordinates concatenated with the
shape code to 2D UV points; a masker MLP that routes each point to a
basis generator; and K basis-generator MLPs mapping UV points to basis
values. Reconstruction = per-generator (basis @ coefficients^T), blended
by the masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Union

import numpy as np

from . import tensor as tt
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import ShapeMismatch, Tensor

__all__ = [
    "ModelConfig", "ShapeRecord", "AuvModel",
    "chair_mask_compose", "combine_basis", "blend_masked",
]


@dataclass
class ModelConfig:
    """Hyperparameters defining every sub-network's shape.

    kind is "2d" (image encoder, 2D query points) or "3d" (voxel encoder,
    3D query points). basis_channels lists N_k per generator, so its
    length is K. chair_masker switches the masker to the 4-way variant
    that predicts a normal alongside the mask logit.
    """

    kind: str = "3d"
    basis_channels: tuple = (64, 16)
    basis_width: Union[int, tuple] = 1024
    basis_depth: int = 8
    code_dim: int = 256
    out_channels: int = 9
    mapper_width: int = 512
    mapper_depth: int = 5
    masker_width: int = 512
    masker_depth: int = 5
    encoder_channels: tuple = (16, 32, 64, 128)
    resolution: int = 64
    in_channels: int = 4
    chair_masker: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        self.basis_channels = tuple(int(n) for n in self.basis_channels)
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if isinstance(self.basis_width, (list, tuple)):
            self.basis_width = tuple(int(w) for w in self.basis_width)
        if self.kind not in ("2d", "3d"):
            raise ValueError(f"kind must be '2d' or '3d', got {self.kind!r}")
        if self.k < 1:
            raise ValueError("at least one basis generator is required")
        if self.chair_masker and self.k != 4:
            raise ValueError(f"chair masker needs K=4 generators, got K={self.k}")
        if self.resolution % (2 ** len(self.encoder_channels)) != 0:
            raise ValueError(
                f"resolution {self.resolution} not divisible by 2^{len(self.encoder_channels)} "
                "encoder downsampling stages")

    @property
    def k(self):
        return len(self.basis_channels)

    @property
    def point_dim(self):
        return 2 if self.kind == "2d" else 3

    def width_of(self, gen):
        if isinstance(self.basis_width, tuple):
            return self.basis_width[gen]
        return self.basis_width

    def to_dict(self):
        d = asdict(self)
        d["basis_channels"] = list(self.basis_channels)
        d["encoder_channels"] = list(self.encoder_channels)
        if isinstance(self.basis_width, tuple):
            d["basis_width"] = list(self.basis_width)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["basis_channels"] = tuple(d["basis_channels"])
        d["encoder_channels"] = tuple(d["encoder_channels"])
        if isinstance(d.get("basis_width"), list):
            d["basis_width"] = tuple(d["basis_width"])
        return cls(**d)


@dataclass
class ShapeRecord:
    """Per-shape encoder outputs: code (1, Z) and one (C, N_k) matrix per generator."""

    code: Tensor
    coefficients: List[Tensor]

    def detach(self):
        return ShapeRecord(self.code.detach(), [c.detach() for c in self.coefficients])


def chair_mask_compose(m_pred, n_pred, n_gt):
    """Outer-product composition of the 4-way chair masks.

    m_n = sigmoid(n_pred . n_gt) is the side mask; the four outputs are
    (m_n * m, (1-m_n) * m, m_n * (1-m), (1-m_n) * (1-m)) which always sum
    to one. All arguments are Tensors: m_pred (n, 1), n_pred and n_gt
    (n, 3).
    """
    dot = tt.tsum(tt.mul(n_pred, n_gt), axis=1, keepdims=True)
    m_n = tt.sigmoid(dot)
    one_m = tt.sub(1.0, m_pred)
    one_n = tt.sub(1.0, m_n)
    return (tt.mul(m_n, m_pred), tt.mul(one_n, m_pred),
            tt.mul(m_n, one_m), tt.mul(one_n, one_m))


def combine_basis(basis_values, coefficients):
    """Mix (n, N_k) basis values with a (C, N_k) coefficient matrix -> (n, C)."""
    if basis_values.shape[-1] != coefficients.shape[-1]:
        raise ShapeMismatch(
            f"combine_basis: {basis_values.shape} basis vs {coefficients.shape} coefficients")
    return tt.matmul(basis_values, tt.transpose2d(coefficients))


def blend_masked(outputs, masks):
    """Convex blend sum_k masks[k] * outputs[k]; masks are (n, 1), outputs (n, C)."""
    if len(outputs) != len(masks):
        raise ShapeMismatch(f"blend_masked: {len(outputs)} outputs vs {len(masks)} masks")
    total = tt.mul(masks[0], outputs[0])
    for m, o in zip(masks[1:], outputs[1:]):
        total = tt.add(total, tt.mul(m, o))
    return total


def _he_std(fan_in, slope=0.02):
    return np.sqrt(2.0 / (1.0 + slope * slope) / fan_in)


def _xavier_std(fan_in, fan_out):
    return np.sqrt(2.0 / (fan_in + fan_out))


class AuvModel:
    """Parameter container plus the forward passes that compose them.

    Parameters live in an insertion-ordered dict name -> Tensor; every
    forward runs through the tensor ops so training can tape them.
    """

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        self.params = {}
        self._rng = np.random.Generator(np.random.Philox(seed))
        self._dtype = np.dtype(config.dtype)
        self._build()
        del self._rng

    # ---- construction ------------------------------------------------

    def _add(self, name, shape, std):
        data = (self._rng.standard_normal(shape) * std).astype(self._dtype)
        self.params[name] = tt.tensor(data, requires_grad=True, dtype=self._dtype)

    def _add_linear(self, prefix, fan_in, fan_out, scheme="he"):
        std = _he_std(fan_in) if scheme == "he" else _xavier_std(fan_in, fan_out)
        self._add(f"{prefix}.w", (fan_in, fan_out), std)
        self.params[f"{prefix}.b"] = tt.tensor(
            np.zeros(fan_out), requires_grad=True, dtype=self._dtype)

    def _add_conv(self, prefix, c_in, c_out, ksize, ndim):
        fan_in = c_in * ksize ** ndim
        shape = (c_out, c_in) + (ksize,) * ndim
        self._add(f"{prefix}.w", shape, _he_std(fan_in))
        self.params[f"{prefix}.b"] = tt.tensor(
            np.zeros(c_out), requires_grad=True, dtype=self._dtype)

    def _build(self):
        c = self.config
        ndim = 2 if c.kind == "2d" else 3
        prev = c.in_channels
        for i, ch in enumerate(c.encoder_channels):
            self._add_conv(f"enc.conv{i}", prev, ch, 3, ndim)
            prev = ch
        side = c.resolution // (2 ** len(c.encoder_channels))
        flat = prev * side ** ndim
        self._flat_dim = flat
        self._add_linear("enc.code", flat, c.code_dim, scheme="xavier")
        total_coef = c.out_channels * sum(c.basis_channels)
        self._add_linear("enc.coef", flat, total_coef, scheme="xavier")

        map_in = c.point_dim + c.code_dim
        self._mlp_init("map", map_in, c.mapper_width, c.mapper_depth, 2)

        if c.k > 1:
            if c.chair_masker:
                mask_in = c.point_dim + c.code_dim
                mask_out = 4
            else:
                normal_dim = 3 if c.kind == "3d" else 0
                mask_in = c.point_dim + normal_dim + c.code_dim
                mask_out = 1
            self._mlp_init("mask", mask_in, c.masker_width, c.masker_depth, mask_out)

        for g, n_k in enumerate(c.basis_channels):
            self._mlp_init(f"basis{g}", 2, c.width_of(g), c.basis_depth, n_k)

    def _mlp_init(self, prefix, dim_in, width, depth, dim_out):
        prev = dim_in
        for i in range(depth):
            self._add_linear(f"{prefix}.l{i}", prev, width)
            prev = width
        self._add_linear(f"{prefix}.out", prev, dim_out, scheme="xavier")

    # ---- parameter access ---------------------------------------------

    def parameters(self, prefix=None):
        """Ordered parameter Tensors, optionally restricted to a name prefix."""
        if prefix is None:
            return list(self.params.values())
        prefixes = (prefix,) if isinstance(prefix, str) else tuple(prefix)
        return [t for n, t in self.params.items() if n.startswith(prefixes)]

    def param_names(self, prefix=None):
        if prefix is None:
            return list(self.params)
        prefixes = (prefix,) if isinstance(prefix, str) else tuple(prefix)
        return [n for n in self.params if n.startswith(prefixes)]

    def state_arrays(self):
        return {n: t.data for n, t in self.params.items()}

    def save(self, path, extra_arrays=None, extra_config=None):
        arrays = dict(self.state_arrays())
        if extra_arrays:
            arrays.update(extra_arrays)
        config = {"model": self.config.to_dict()}
        if extra_config:
            config.update(extra_config)
        save_checkpoint(path, arrays, config=config)

    @classmethod
    def load(cls, path):
        """Rebuild a model from a checkpoint; every shape is re-validated.

        Returns (model, full config dict, non-parameter arrays).
        """
        arrays, config = load_checkpoint(path)
        if not config or "model" not in config:
            raise ShapeMismatch(f"{path}: checkpoint carries no model config")
        model = cls(ModelConfig.from_dict(config["model"]), seed=0)
        extras = {}
        for name, arr in arrays.items():
            if name in model.params:
                want = model.params[name].data.shape
                if arr.shape != want:
                    raise ShapeMismatch(
                        f"{path}: entry {name!r} has shape {arr.shape}, config implies {want}")
                model.params[name].data = arr.astype(model._dtype)
            else:
                extras[name] = arr
        missing = [n for n in model.params if n not in arrays]
        if missing:
            raise ShapeMismatch(f"{path}: missing parameter entries {missing[:4]}")
        return model, config, extras

    # ---- forward passes ------------------------------------------------

    def _mlp(self, prefix, x):
        i = 0
        while f"{prefix}.l{i}.w" in self.params:
            x = tt.leaky_relu(tt.add(tt.matmul(x, self.params[f"{prefix}.l{i}.w"]),
                                     self.params[f"{prefix}.l{i}.b"]))
            i += 1
        return tt.add(tt.matmul(x, self.params[f"{prefix}.out.w"]),
                      self.params[f"{prefix}.out.b"])

    def encoder_forward(self, grid) -> ShapeRecord:
        """Grid/image (C, R, R[, R]) -> ShapeRecord(code, coefficient matrices)."""
        c = self.config
        data = grid if isinstance(grid, Tensor) else tt.constant(
            np.asarray(grid, dtype=self._dtype))
        ndim = 2 if c.kind == "2d" else 3
        want = (c.in_channels,) + (c.resolution,) * ndim
        if data.shape != want:
            raise ShapeMismatch(
                f"encoder_forward: input {data.shape}, config wants {want}")
        x = tt.reshape(data, (1,) + want)
        conv = tt.conv2d if ndim == 2 else tt.conv3d
        for i in range(len(c.encoder_channels)):
            x = conv(x, self.params[f"enc.conv{i}.w"],
                     bias=self.params[f"enc.conv{i}.b"], stride=2, padding=1)
            x = tt.leaky_relu(x)
        x = tt.reshape(x, (1, self._flat_dim))
        code = tt.add(tt.matmul(x, self.params["enc.code.w"]), self.params["enc.code.b"])
        coef = tt.add(tt.matmul(x, self.params["enc.coef.w"]), self.params["enc.coef.b"])
        mats = []
        offset = 0
        for n_k in c.basis_channels:
            block = coef[:, offset:offset + c.out_channels * n_k]
            mats.append(tt.reshape(block, (c.out_channels, n_k)))
            offset += c.out_channels * n_k
        return ShapeRecord(code=code, coefficients=mats)

    def _with_code(self, points, code, extra=None):
        n = points.shape[0]
        cols = [points]
        if extra is not None:
            cols.append(extra)
        cols.append(tt.broadcast_rows(code, n))
        return tt.concat(cols, axis=1)

    def uv_mapper_forward(self, points, code):
        """(n, point_dim) points + (1, Z) code -> (n, 2) UV coordinates."""
        return self._mlp("map", self._with_code(points, code))

    def masker_forward(self, points, normals, code):
        """2-way masker: returns m in (0,1), shape (n, 1).

        For the chair variant use chair_masker_forward instead.
        """
        if self.config.chair_masker:
            raise ShapeMismatch("masker_forward: model is configured for the 4-way chair masker")
        extra = normals if self.config.kind == "3d" else None
        logit = self._mlp("mask", self._with_code(points, code, extra))
        return tt.sigmoid(logit)

    def chair_masker_forward(self, points, code):
        """4-way masker head: returns (m_pred (n,1), n_pred (n,3))."""
        out = self._mlp("mask", self._with_code(points, code))
        return tt.sigmoid(out[:, 0:1]), out[:, 1:4]

    def basis_forward(self, uv, gen):
        """(n, 2) UV -> (n, N_gen) basis values from generator gen."""
        return self._mlp(f"basis{gen}", uv)

    def basis_raster(self, gen, resolution=256, window=0.55):
        """Sample generator gen on a regular UV grid -> (res, res, N_k) array.

        Rows run from +window (top) down to -window so the raster displays
        with v up; no gradients are recorded.
        """
        axis = np.linspace(-window, window, resolution)
        uu, vv = np.meshgrid(axis, -axis)
        uv = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(self._dtype)
        out = self.basis_forward(tt.constant(uv), gen)
        n_k = self.config.basis_channels[gen]
        return out.data.reshape(resolution, resolution, n_k)

    def model_forward(self, points, record: ShapeRecord, normals=None):
        """Full composition for one shape: points (+normals) -> predictions.

        Returns a dict with "uv" (n, 2), "per_basis" list of (n, C),
        "masks" list of (n, 1) convex weights, "pred" (n, C), and for the
        chair variant also "mask_pred" and "normal_pred".
        """
        c = self.config
        pts = points if isinstance(points, Tensor) else tt.constant(
            np.asarray(points, dtype=self._dtype))
        nrm = None
        if normals is not None:
            nrm = normals if isinstance(normals, Tensor) else tt.constant(
                np.asarray(normals, dtype=self._dtype))

        uv = self.uv_mapper_forward(pts, record.code)
        per_basis = [combine_basis(self.basis_forward(uv, g), record.coefficients[g])
                     for g in range(c.k)]
        out = {"uv": uv, "per_basis": per_basis}

        if c.k == 1:
            out["masks"] = [tt.constant(np.ones((pts.shape[0], 1), dtype=self._dtype))]
            out["pred"] = per_basis[0]
        elif c.chair_masker:
            if nrm is None:
                raise ShapeMismatch("model_forward: chair variant needs ground-truth normals")
            m_pred, n_pred = self.chair_masker_forward(pts, record.code)
            masks = chair_mask_compose(m_pred, n_pred, nrm)
            out["mask_pred"] = m_pred
            out["normal_pred"] = n_pred
            out["masks"] = list(masks)
            out["pred"] = blend_masked(per_basis, out["masks"])
        else:
            if c.kind == "3d" and nrm is None:
                raise ShapeMismatch("model_forward: 3d masker needs normals")
            m = self.masker_forward(pts, nrm, record.code)
            inv = tt.sub(1.0, m)
            if c.k != 2:
                raise ShapeMismatch(
                    f"model_forward: 2-way masker cannot blend K={c.k} generators")
            out["masks"] = [m, inv]
            out["pred"] = blend_masked(per_basis, out["masks"])
        return out
