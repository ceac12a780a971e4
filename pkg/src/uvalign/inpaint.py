"""Fast-marching inpainting with direction/distance/level-set weights.

Missing texels are filled boundary-inward in the order given by a
fast-marching distance field. Each filled texel is a weighted average of
the known texels in a disk around it, where a known neighbor counts more
when it lies along the marching direction (dir), sits close by (dst),
and shares the same level set (lev). A first-order color-gradient term
extrapolates smooth shading into the hole.
"""

from __future__ import annotations

import heapq

import numpy as np

__all__ = ["inpaint_fmm"]

_KNOWN, _BAND, _INSIDE = 0, 1, 2
_EPS = 1e-6
_FAR = 1e6


def _solve(T, state, i1, j1, i2, j2):
    """Two-neighbor eikonal update with unit speed."""
    k1 = state[i1, j1] == _KNOWN
    k2 = state[i2, j2] == _KNOWN
    if k1 and k2:
        t1, t2 = T[i1, j1], T[i2, j2]
        if abs(t1 - t2) >= 1.0:
            return 1.0 + min(t1, t2)
        disc = 2.0 - (t1 - t2) ** 2
        return 0.5 * (t1 + t2 + np.sqrt(disc))
    if k1:
        return 1.0 + T[i1, j1]
    if k2:
        return 1.0 + T[i2, j2]
    return _FAR


def _fill_pixel(out, known, T, i, j, radius):
    """Telea estimate for texel (i, j) from known texels within radius."""
    h, w = known.shape

    # marching direction = gradient of the distance field at (i, j);
    # unknown neighbors fall back to T[i, j] so they contribute no slope
    t_here = T[i, j]

    def t_at(a, b):
        if 0 <= a < h and 0 <= b < w and T[a, b] < _FAR:
            return T[a, b]
        return t_here

    ny = 0.5 * (t_at(i + 1, j) - t_at(i - 1, j))
    nx = 0.5 * (t_at(i, j + 1) - t_at(i, j - 1))
    norm = np.hypot(ny, nx)
    if norm > 0:
        ny, nx = ny / norm, nx / norm

    y0, y1 = max(0, i - radius), min(h, i + radius + 1)
    x0, x1 = max(0, j - radius), min(w, j + radius + 1)
    win_known = known[y0:y1, x0:x1]
    if not win_known.any():
        return None
    yy, xx = np.nonzero(win_known)
    ry = (i - (yy + y0)).astype(np.float64)
    rx = (j - (xx + x0)).astype(np.float64)
    dist2 = ry * ry + rx * rx
    inside = dist2 <= radius * radius
    if not inside.any():
        return None
    yy, xx = yy[inside] + y0, xx[inside] + x0
    ry, rx, dist2 = ry[inside], rx[inside], dist2[inside]
    length = np.sqrt(dist2)

    direction = np.abs(ry * ny + rx * nx) / length
    direction = np.maximum(direction, _EPS)
    dst = 1.0 / (dist2 + _EPS)
    lev = 1.0 / (1.0 + np.abs(t_here - T[yy, xx]))
    weight = direction * dst * lev

    # first-order extrapolation: I(q) + grad I(q) . r; central difference
    # where both sides are known, one-sided where only one is
    vals = out[yy, xx]
    up, dn = np.maximum(yy - 1, 0), np.minimum(yy + 1, h - 1)
    lf, rt = np.maximum(xx - 1, 0), np.minimum(xx + 1, w - 1)
    ku = known[up, xx] & (up != yy)
    kd = known[dn, xx] & (dn != yy)
    kl = known[yy, lf] & (lf != xx)
    kr = known[yy, rt] & (rt != xx)
    v_up, v_dn = out[up, xx], out[dn, xx]
    v_lf, v_rt = out[yy, lf], out[yy, rt]
    gy = np.where((ku & kd)[:, None], 0.5 * (v_dn - v_up),
                  np.where(kd[:, None], v_dn - vals,
                           np.where(ku[:, None], vals - v_up, 0.0)))
    gx = np.where((kl & kr)[:, None], 0.5 * (v_rt - v_lf),
                  np.where(kr[:, None], v_rt - vals,
                           np.where(kl[:, None], vals - v_lf, 0.0)))

    # keep each extrapolated estimate inside the window's value range so
    # chained one-sided gradients cannot run away on curved content
    lo = vals.min(axis=0)
    hi = vals.max(axis=0)
    est = np.clip(vals + gy * ry[:, None] + gx * rx[:, None], lo, hi)
    total = weight.sum()
    return (weight[:, None] * est).sum(axis=0) / total


def inpaint_fmm(image, validity, radius=5):
    """Fill invalid texels; valid texels pass through bit-exactly.

    image is (H, W, C) float; validity a (H, W) boolean mask of texels
    that hold real data. Returns a new array of the input dtype. Raises
    on radius < 1 and on a fully invalid image.
    """
    img = np.asarray(image)
    valid = np.asarray(validity, dtype=bool)
    if img.ndim != 3:
        raise ValueError(f"inpaint_fmm: image must be (H, W, C), got {img.shape}")
    if valid.shape != img.shape[:2]:
        raise ValueError(
            f"inpaint_fmm: validity {valid.shape} does not match image {img.shape[:2]}")
    if radius < 1:
        raise ValueError(f"inpaint_fmm: radius must be >= 1, got {radius}")
    if not valid.any():
        raise ValueError("inpaint_fmm: image has no valid texels to fill from")
    if valid.all():
        return img.copy()

    h, w = valid.shape
    out = img.astype(np.float64, copy=True)
    out[~valid] = 0.0
    known = valid.copy()
    state = np.where(valid, _KNOWN, _INSIDE).astype(np.int8)
    T = np.where(valid, 0.0, _FAR)

    heap = []
    inv_y, inv_x = np.nonzero(~valid)
    for i, j in zip(inv_y.tolist(), inv_x.tolist()):
        adjacent = (
            (i > 0 and valid[i - 1, j]) or (i + 1 < h and valid[i + 1, j])
            or (j > 0 and valid[i, j - 1]) or (j + 1 < w and valid[i, j + 1]))
        if adjacent:
            t = min(
                _solve(T, state, max(i - 1, 0), j, i, max(j - 1, 0)),
                _solve(T, state, min(i + 1, h - 1), j, i, max(j - 1, 0)),
                _solve(T, state, max(i - 1, 0), j, i, min(j + 1, w - 1)),
                _solve(T, state, min(i + 1, h - 1), j, i, min(j + 1, w - 1)),
            )
            T[i, j] = t
            state[i, j] = _BAND
            heapq.heappush(heap, (t, i, j))

    while heap:
        t, i, j = heapq.heappop(heap)
        if state[i, j] != _BAND or T[i, j] < t:
            continue  # stale heap entry
        filled = _fill_pixel(out, known, T, i, j, radius)
        if filled is not None:
            out[i, j] = filled
        state[i, j] = _KNOWN
        known[i, j] = True
        for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if not (0 <= ni < h and 0 <= nj < w) or state[ni, nj] == _KNOWN:
                continue
            t_new = min(
                _solve(T, state, max(ni - 1, 0), nj, ni, max(nj - 1, 0)),
                _solve(T, state, min(ni + 1, h - 1), nj, ni, max(nj - 1, 0)),
                _solve(T, state, max(ni - 1, 0), nj, ni, min(nj + 1, w - 1)),
                _solve(T, state, min(ni + 1, h - 1), nj, ni, min(nj + 1, w - 1)),
            )
            if t_new < T[ni, nj]:
                T[ni, nj] = t_new
                state[ni, nj] = _BAND
                heapq.heappush(heap, (t_new, ni, nj))

    result = out.astype(img.dtype, copy=False)
    # the contract is bitwise preservation, so copy source texels through
    result[valid] = img[valid]
    return result
