"""The five training loss terms and their per-category prior variants.

Reconstruction terms are plain MSEs over channel groups (color, normal,
coordinate). The smoothness term compares point-pair distances in 3D
against the corresponding UV distances over a neighbor graph. The prior
terms pin the UV mapping to a category-specific projection and the mask
to a category-specific side split during early training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tt
from .tensor import ShapeMismatch, Tensor

__all__ = [
    "LossWeights", "NeighborGraph", "build_neighbor_graph",
    "recon_losses", "smoothness_loss", "prior_loss_head",
    "prior_loss_variant", "chair_prior_targets", "total_loss",
    "PRIOR_CATEGORIES",
]

PRIOR_CATEGORIES = ("head", "body", "animal", "car", "shapenet_car", "chair")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass
class LossWeights:
    """Non-negative weights (w_c, w_n, w_x, w_s, w_p) of the total loss."""

    color: float = 1.0
    normal: float = 1.0
    cycle: float = 1.0
    smooth: float = 1.0
    prior: float = 1.0

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"LossWeights.{name} must be finite and >= 0, got {v}")

    def as_dict(self):
        return {"color": self.color, "normal": self.normal, "cycle": self.cycle,
                "smooth": self.smooth, "prior": self.prior}

    @classmethod
    def from_tuple(cls, t):
        c, n, x, s, p = t
        return cls(color=c, normal=n, cycle=x, smooth=s, prior=p)

    def to_tuple(self):
        return (self.color, self.normal, self.cycle, self.smooth, self.prior)


def recon_losses(pred, colors=None, normals=None, points=None):
    """Split predictions into channel groups and take the group MSEs.

    pred is (n, 9) for 3D shapes (color, normal, coordinate channels) or
    (n, 3) for the toy task (color only). Targets may each be None;
    a None target yields a None term (a colorless shape simply has no
    color loss). Returns {"color", "normal", "cycle"}.
    """
    c = pred.shape[1]
    if c not in (3, 9):
        raise ShapeMismatch(f"recon_losses: expected 3 or 9 channels, got {c}")
    out = {"color": None, "normal": None, "cycle": None}
    if colors is not None:
        target = colors if isinstance(colors, Tensor) else tt.constant(colors)
        out["color"] = tt.mse(pred[:, 0:3], target)
    if c == 9:
        if normals is not None:
            target = normals if isinstance(normals, Tensor) else tt.constant(normals)
            out["normal"] = tt.mse(pred[:, 3:6], target)
        if points is not None:
            target = points if isinstance(points, Tensor) else tt.constant(points)
            out["cycle"] = tt.mse(pred[:, 6:9], target)
    return out


@dataclass
class NeighborGraph:
    """CSR adjacency of all point pairs within sigma, with their 3D distances."""

    indptr: np.ndarray
    indices: np.ndarray
    dists: np.ndarray
    sigma: float
    n_points: int

    def row(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.dists[lo:hi]


def build_neighbor_graph(points, sigma=0.02, chunk=256):
    """Exact all-pairs neighbor search, D(p_i, p_j) < sigma, brute force in chunks.

    Self pairs are kept; they carry distance zero and contribute nothing
    to the loss but the formula does not exclude them.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    sq = (pts ** 2).sum(axis=1)
    indptr = np.zeros(n + 1, dtype=np.int64)
    cols, dists = [], []
    # widen the candidate band slightly: the dot-product distances carry
    # roundoff, so the exact per-pair recompute below owns the threshold
    slack = sigma * (1.0 + 1e-9) + 1e-12
    for start in range(0, n, chunk):
        block = pts[start:start + chunk]
        d2 = sq[start:start + chunk, None] + sq[None, :] - 2.0 * (block @ pts.T)
        np.maximum(d2, 0.0, out=d2)
        mask = np.sqrt(d2) < slack
        for r in range(len(block)):
            idx = np.nonzero(mask[r])[0]
            exact = np.sqrt(((pts[start + r] - pts[idx]) ** 2).sum(axis=1))
            keep = exact < sigma
            idx, exact = idx[keep], exact[keep]
            cols.append(idx)
            dists.append(exact)
            indptr[start + r + 1] = indptr[start + r] + len(idx)
    return NeighborGraph(
        indptr=indptr,
        indices=np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64),
        dists=np.concatenate(dists) if dists else np.zeros(0),
        sigma=sigma,
        n_points=n,
    )


def smoothness_loss(q, graph: NeighborGraph, subset):
    """L_s = (1/(M*N)) sum_{i in subset} sum_j |D(p_i,p_j) - D(q_i,q_j)| * T.

    T keeps pairs whose 3D distance is below sigma; those pairs come
    precomputed in the graph. q is the (N, 2) UV Tensor; the term is a
    fused op whose backward scatters the analytic subgradient into q
    (zero at the dp = dq kink and for coincident UV points).
    """
    subset = np.asarray(subset, dtype=np.int64)
    m = len(subset)
    n = graph.n_points
    if q.shape[0] != n:
        raise ShapeMismatch(f"smoothness_loss: q has {q.shape[0]} rows, graph has {n}")
    qd = q.data.astype(np.float64)

    rows, cols, dps = [], [], []
    for i in subset:
        j, dp = graph.row(i)
        rows.append(np.full(len(j), i, dtype=np.int64))
        cols.append(j)
        dps.append(dp)
    if not rows or sum(len(r) for r in rows) == 0:
        return tt.constant(np.zeros((), dtype=q.dtype))
    si = np.concatenate(rows)
    j = np.concatenate(cols)
    dp = np.concatenate(dps)

    diff = qd[si] - qd[j]
    dq = np.sqrt((diff ** 2).sum(axis=1))
    scale = 1.0 / (m * n)
    value = np.abs(dp - dq).sum() * scale

    # d|dp-dq|/ddq = -sign(dp-dq); unit vectors guard coincident points
    live = dq > 1e-12
    coef = np.zeros_like(dq)
    coef[live] = -np.sign(dp[live] - dq[live]) * scale / dq[live]
    contrib = diff * coef[:, None]
    grad = np.zeros_like(qd)
    np.add.at(grad, si, contrib)
    np.add.at(grad, j, -contrib)
    grad = grad.astype(q.dtype)

    def backward_fn(g):
        q.accumulate(g * grad)

    return tt.custom_op(np.asarray(value, dtype=q.dtype), (q,), backward_fn)


def _axis_targets(category, points, normals):
    """Per-category UV target columns and mask target n_i."""
    p = np.asarray(points, dtype=np.float64)
    nr = np.asarray(normals, dtype=np.float64)
    if category == "head":
        return p[:, 0], p[:, 1], (nr[:, 2] > -0.5)
    if category == "body":
        n_yz = (nr[:, 1] + nr[:, 2]) * _INV_SQRT2
        return p[:, 0], p[:, 1], (n_yz > -0.5)
    if category == "animal":
        return p[:, 1], p[:, 2], (nr[:, 0] > 0.0)
    if category == "car":
        return p[:, 0], p[:, 2], (nr[:, 1] > -0.5)
    if category == "shapenet_car":
        return p[:, 0], p[:, 2], ((p[:, 1] > 0.0) | (nr[:, 1] > -0.5))
    raise ValueError(f"unknown prior category {category!r}")


def prior_loss_head(points, normals, uv, mask):
    """Head prior: pin UV to the xy projection and the mask to the front side.

    Mean over points of (p_x-q_x)^2 + (p_y-q_y)^2 + (m-n)^2 with n = 1
    iff the normal's z component is strictly greater than -0.5.
    """
    return prior_loss_variant("head", points, normals, uv, mask)


def prior_loss_variant(category, points, normals, uv, mask):
    """Category-specific prior.

    For two-sided categories mask is the (n, 1) masker output; for
    "chair" it is the 4-tuple of composed masks and the full target
    construction applies. uv is the (n, 2) mapper output Tensor.
    """
    if category == "chair":
        return _chair_prior(points, normals, uv, mask)
    tx, ty, n_target = _axis_targets(category, points, normals)
    n_col = tt.constant(n_target.astype(np.float64).reshape(-1, 1).astype(uv.dtype))
    loss = tt.mse(uv[:, 0:1], tt.constant(tx.reshape(-1, 1).astype(uv.dtype)))
    loss = tt.add(loss, tt.mse(uv[:, 1:2], tt.constant(ty.reshape(-1, 1).astype(uv.dtype))))
    return tt.add(loss, tt.mse(mask, n_col))


def chair_prior_targets(points, normals):
    """Mask targets s (n, 4) and UV targets t (n, 2) for the chair prior.

    Chairs face +x with +y up, normalized to the unit cube. The seat
    height is the highest point inside a thin column just in front of the
    origin; an empty column means the shape is not chair-like, which is a
    data error.
    """
    p = np.asarray(points, dtype=np.float64)
    nr = np.asarray(normals, dtype=np.float64)
    p_max_y = p[:, 1].max()
    y_shift = p[:, 1] - p_max_y - 0.05
    m1 = (p[:, 0] * nr[:, 0] + y_shift * nr[:, 1] + p[:, 2] * nr[:, 2]) < 0

    seat_zone = (p[:, 0] > 0) & (p[:, 0] < 0.1) & (p[:, 2] > -0.05) & (p[:, 2] < 0.05)
    if not seat_zone.any():
        raise ValueError(
            "chair_prior_targets: no points in the seat column (x in (0, 0.1), |z| < 0.05)")
    p_seat_y = p[seat_zone, 1].max()
    m2 = p[:, 1] > p_seat_y - 0.2

    m1f = m1.astype(np.float64)
    m2f = m2.astype(np.float64)
    s = np.stack([m1f * m2f, (1 - m1f) * m2f, m1f * (1 - m2f), (1 - m1f) * (1 - m2f)],
                 axis=1)

    planar_sq = p[:, 0] ** 2 + p[:, 2] ** 2
    d = np.sqrt(planar_sq + 4.0 * (p[:, 1] - p_seat_y) ** 2)
    d = d / np.sqrt(np.maximum(planar_sq, 1e-12))
    t = np.stack([p[:, 0] * d, p[:, 2] * d], axis=1)
    return s, t, float(p_seat_y)


def _chair_prior(points, normals, uv, masks):
    if len(masks) != 4:
        raise ShapeMismatch(f"chair prior needs 4 masks, got {len(masks)}")
    s, t, _ = chair_prior_targets(points, normals)
    loss = None
    for k in range(4):
        term = tt.mse(masks[k], tt.constant(s[:, k:k + 1].astype(masks[k].dtype)))
        loss = term if loss is None else tt.add(loss, term)
    loss = tt.add(loss, tt.mse(uv[:, 0:1], tt.constant(t[:, 0:1].astype(uv.dtype))))
    return tt.add(loss, tt.mse(uv[:, 1:2], tt.constant(t[:, 1:2].astype(uv.dtype))))


def total_loss(terms, weights: LossWeights):
    """Weighted sum of the five terms; absent (None) terms contribute zero."""
    pairs = [(weights.color, terms.get("color")),
             (weights.normal, terms.get("normal")),
             (weights.cycle, terms.get("cycle")),
             (weights.smooth, terms.get("smooth")),
             (weights.prior, terms.get("prior"))]
    loss = None
    for w, term in pairs:
        if term is None or w == 0:
            continue
        weighted = tt.mul(term, w)
        loss = weighted if loss is None else tt.add(loss, weighted)
    if loss is None:
        return tt.constant(np.zeros(()))
    return loss
