"""Quality metrics for aligned UV spaces.

Covers reconstruction fidelity (PSNR), label agreement (per-class IOU),
landmark concentration in UV space, one-shot segmentation through a
baked label atlas, and locating a colored patch in a baked texture.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import ndimage

from . import tensor as tt
from .baker import UV_WINDOW, TextureImage, forward_shape, uv_to_texel
from .tensor import Tape

__all__ = [
    "psnr", "iou", "landmark_spread", "landmark_uvs", "LandmarkAlignment",
    "landmark_alignment", "bake_labels", "fill_labels_nearest",
    "label_transfer", "one_shot_segmentation", "color_patch_uv",
    "texel_center_uv",
]


def psnr(a, b, peak=1.0, mask=None):
    """Peak signal-to-noise ratio in dB; identical inputs give +inf.

    mask optionally restricts the comparison to selected pixels (any
    boolean array broadcastable against the leading axes).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("psnr: mask selects no pixels")
        diff = diff[mask]
    mse = float(diff.mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def iou(pred, true, n_classes):
    """Per-class intersection over union and their mean.

    Classes absent from both arrays get NaN and are excluded from the
    mean. Returns (per_class (n_classes,), mean).
    """
    pred = np.asarray(pred, dtype=np.int64).ravel()
    true = np.asarray(true, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"iou: {pred.shape} predictions vs {true.shape} labels")
    per_class = np.full(n_classes, np.nan)
    for c in range(n_classes):
        p, t = pred == c, true == c
        union = (p | t).sum()
        if union:
            per_class[c] = (p & t).sum() / union
    if np.isnan(per_class).all():
        raise ValueError("iou: no class present in either array")
    return per_class, float(np.nanmean(per_class))


def landmark_spread(positions):
    """Per-landmark scatter: sqrt of the summed per-axis variances.

    positions is (S, L, D): landmark l observed in S shapes, D
    coordinates each. Returns (L,) non-negative spreads; zero when a
    landmark sits at the same place in every shape.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3:
        raise ValueError(f"landmark_spread: need (S, L, D), got {positions.shape}")
    return np.sqrt(positions.var(axis=0).sum(axis=1))


def landmark_uvs(model, samples):
    """Map each sample's landmarks through its code to UV space.

    Returns (S, L, 2); every sample must carry landmarks with the same
    count L.
    """
    dtype = np.dtype(model.config.dtype)
    rows = []
    for sample in samples:
        if sample.landmarks is None:
            raise ValueError(f"landmark_uvs: sample {sample.name} has no landmarks")
        with Tape():
            record = model.encoder_forward(np.asarray(sample.grid, dtype=dtype))
            uv_t = model.uv_mapper_forward(
                tt.constant(np.asarray(sample.landmarks, dtype=dtype)),
                record.code)
        rows.append(uv_t.data.astype(np.float64))
    return np.stack(rows, axis=0)


@dataclass
class LandmarkAlignment:
    """Per-landmark UV statistics next to their raw-input baseline.

    ratio is uv_spread / input_spread per landmark (inf where the input
    spread is zero but the UV spread is not); a well-aligned UV space
    drives it far below 1.
    """

    uv_mean: np.ndarray
    uv_spread: np.ndarray
    input_spread: np.ndarray

    @property
    def ratio(self):
        out = np.full_like(self.uv_spread, np.inf)
        nz = self.input_spread > 0
        out[nz] = self.uv_spread[nz] / self.input_spread[nz]
        out[(~nz) & (self.uv_spread == 0)] = 0.0
        return out


def landmark_alignment(model, samples) -> LandmarkAlignment:
    """Compare per-landmark UV scatter against raw landmark scatter.

    Shape ordering does not matter: means and variances are symmetric
    in their samples.
    """
    uvs = landmark_uvs(model, samples)
    inputs = np.stack([np.asarray(s.landmarks, dtype=np.float64)
                       for s in samples], axis=0)
    return LandmarkAlignment(
        uv_mean=uvs.mean(axis=0),
        uv_spread=landmark_spread(uvs),
        input_spread=landmark_spread(inputs))


def texel_center_uv(x, y, resolution, window=UV_WINDOW):
    """UV coordinates of the center of texel (x, y)."""
    u = (np.asarray(x, dtype=np.float64) + 0.5) / resolution * (2 * window) - window
    v = (np.asarray(y, dtype=np.float64) + 0.5) / resolution * (2 * window) - window
    return np.stack([u, v], axis=-1)


def bake_labels(uv, labels, routing, k, n_classes, resolution,
                window=UV_WINDOW) -> List[np.ndarray]:
    """Scatter integer labels into k rasters by per-texel majority vote.

    Returns k (R, R) int64 rasters holding the winning label per texel,
    ties toward the lower label id, and -1 where nothing landed.
    """
    uv = np.asarray(uv, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    routing = np.asarray(routing, dtype=np.int64)
    if len(uv) != len(labels) or len(uv) != len(routing):
        raise ValueError(
            f"bake_labels: {len(uv)} uvs, {len(labels)} labels, {len(routing)} routes")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"bake_labels: labels outside 0..{n_classes - 1}")
    texels = uv_to_texel(uv, resolution, window)
    out = []
    for gen in range(k):
        sel = routing == gen
        votes = np.zeros((resolution, resolution, n_classes), dtype=np.int64)
        if sel.any():
            x, y = texels[sel, 0], texels[sel, 1]
            np.add.at(votes, (y, x, labels[sel]), 1)
        raster = np.where(votes.sum(axis=2) > 0,
                          votes.argmax(axis=2), -1).astype(np.int64)
        out.append(raster)
    return out


def fill_labels_nearest(raster):
    """Replace -1 texels with the label of the nearest labeled texel.

    Distance is Euclidean on the texel grid. Raises when the raster has
    no labeled texel at all.
    """
    raster = np.asarray(raster, dtype=np.int64)
    empty = raster < 0
    if not empty.any():
        return raster.copy()
    if empty.all():
        raise ValueError("fill_labels_nearest: raster has no labeled texels")
    _, (iy, ix) = ndimage.distance_transform_edt(empty, return_indices=True)
    return raster[iy, ix]


def label_transfer(ref_uv, ref_labels, ref_routing, tgt_uv, tgt_routing, k,
                   n_classes, resolution=64, window=UV_WINDOW):
    """Predict target labels by looking up a baked reference label atlas.

    Reference labels are baked per generator, holes are filled with the
    nearest labeled texel, and each target point reads the raster its
    own routing selects. A generator the reference never touched falls
    back to the reference's overall majority label.
    """
    rasters = bake_labels(ref_uv, ref_labels, ref_routing, k, n_classes,
                          resolution, window)
    ref_labels = np.asarray(ref_labels, dtype=np.int64)
    majority = int(np.bincount(ref_labels, minlength=n_classes).argmax())
    filled = []
    for raster in rasters:
        if (raster < 0).all():
            filled.append(np.full_like(raster, majority))
        else:
            filled.append(fill_labels_nearest(raster))

    tgt_routing = np.asarray(tgt_routing, dtype=np.int64)
    texels = uv_to_texel(tgt_uv, resolution, window)
    pred = np.empty(len(texels), dtype=np.int64)
    for gen in range(k):
        sel = tgt_routing == gen
        if sel.any():
            pred[sel] = filled[gen][texels[sel, 1], texels[sel, 0]]
    return pred


def one_shot_segmentation(model, reference, targets, n_classes,
                          resolution=64, window=UV_WINDOW):
    """Segment target samples from one labeled reference sample.

    The reference's point labels are baked into UV space through the
    model; every target point is then labeled by UV lookup. Returns a
    list of (n_points,) predictions, one per target.
    """
    if reference.labels is None:
        raise ValueError(
            f"one_shot_segmentation: reference {reference.name} has no labels")
    ref_uv, ref_route, _ = forward_shape(model, reference.grid,
                                         reference.points, reference.normals)
    out = []
    for target in targets:
        tgt_uv, tgt_route, _ = forward_shape(model, target.grid,
                                             target.points, target.normals)
        out.append(label_transfer(ref_uv, reference.labels, ref_route,
                                  tgt_uv, tgt_route, model.config.k,
                                  n_classes, resolution, window))
    return out


def color_patch_uv(texture: TextureImage, color, tol=0.1,
                   window=UV_WINDOW):
    """UV centroid of valid texels whose color lies within tol of color.

    Distance is Euclidean in linear RGB. Raises when no valid texel
    matches, so callers cannot silently read a bogus position.
    """
    color = np.asarray(color, dtype=np.float64)
    dist = np.linalg.norm(texture.raster.astype(np.float64) - color, axis=2)
    hit = (dist <= tol) & texture.validity
    if not hit.any():
        raise ValueError(f"color_patch_uv: no valid texel within {tol} of {color}")
    y, x = np.nonzero(hit)
    centers = texel_center_uv(x, y, texture.resolution, window)
    return centers.mean(axis=0)
