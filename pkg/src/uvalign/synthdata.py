"""Procedural datasets with exact ground truth.

Two generators live here. The 2D one makes small "face" rasters (two eye
blobs, a mouth arc, seeded colors) and warps them with random perspective
homographies, recording landmark positions in both frames. The 3D one
makes textured ellipsoid heads (UV-sphere meshes with a nose bump, painted
spherical textures, per-vertex face/scalp/neck labels, and surface
landmarks). Both are pure functions of their seed.
"""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .geometry import (
    TexturedMesh, linear_to_srgb, load_textured_mesh, normalize_to_unit_box,
    save_textured_mesh, srgb_to_linear,
)

__all__ = [
    "ToyImage", "SyntheticHead", "LANDMARK_NAMES", "LABEL_NAMES",
    "HAIR_PALETTE", "make_face_image", "random_homography", "warp_image",
    "apply_homography", "make_toy_dataset", "make_head_mesh",
    "save_toy_item", "load_toy_item", "save_head", "load_head",
]

LANDMARK_NAMES = ("eye_l", "eye_r", "mouth")
LABEL_NAMES = ("face", "scalp", "neck")

# 30 well-separated hair colors: 10 hues x 3 brightness levels
HAIR_PALETTE = tuple(
    colorsys.hsv_to_rgb(h / 10.0, 0.65, val)
    for val in (0.15, 0.45, 0.75)
    for h in range(10)
)

EYE_PALETTE = ((0.18, 0.10, 0.05), (0.10, 0.15, 0.35),
               (0.10, 0.25, 0.12), (0.25, 0.25, 0.28))


@dataclass
class ToyImage:
    """A face raster plus the homography that produced it.

    homography maps canonical-frame pixel coordinates to this image's
    frame; for a freshly generated face it is the identity. landmarks are
    (3, 2) float64 pixel positions (eye_l, eye_r, mouth) in this frame,
    landmarks_canonical the same points in the canonical frame.
    """

    raster: np.ndarray
    homography: np.ndarray
    landmarks: np.ndarray
    landmarks_canonical: np.ndarray

    @property
    def size(self):
        return self.raster.shape[0]


@dataclass
class SyntheticHead:
    """Textured head mesh with labels and landmarks, normalized to the unit box."""

    mesh: TexturedMesh
    landmarks: np.ndarray       # (3, 3) float64, rows follow LANDMARK_NAMES
    vertex_labels: np.ndarray   # (V,) int64, values index LABEL_NAMES
    nose_direction: np.ndarray  # unit 3-vector
    hair_color: tuple


def _ellipse_mask(xx, yy, cx, cy, rx, ry):
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def make_face_image(seed, size=64, supersample=4):
    """Generate one canonical face raster with recorded landmarks.

    Deterministic per (seed, size). The raster is float32 RGB in [0, 1]
    with hair filling the background, an elliptical head, two circular
    eyes, and a mouth ellipse; colors vary with the seed. Shapes are
    rasterized at supersample times the resolution and box-filtered down,
    so edges are smooth enough to survive bilinear resampling.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    s = size / 64.0

    hair = np.array(HAIR_PALETTE[rng.integers(len(HAIR_PALETTE))])
    skin = np.array([0.85, 0.66, 0.50]) + rng.uniform(-0.08, 0.08, 3)
    eye = np.array(EYE_PALETTE[rng.integers(len(EYE_PALETTE))])
    mouth = np.array([0.65, 0.15, 0.18]) + rng.uniform(-0.05, 0.05, 3)

    cx = size / 2.0 + rng.uniform(-2, 2) * s
    cy = size * 0.53 + rng.uniform(-2, 2) * s
    head_rx = (20.0 + rng.uniform(-3, 3)) * s
    head_ry = (24.0 + rng.uniform(-3, 3)) * s
    eye_dx = (8.0 + rng.uniform(-1.5, 1.5)) * s
    eye_y = cy - (8.0 + rng.uniform(-2, 2)) * s
    eye_r = (2.8 + rng.uniform(-0.4, 0.6)) * s
    mouth_y = cy + (9.0 + rng.uniform(-1.5, 1.5)) * s
    mouth_rx = (5.5 + rng.uniform(-1.5, 1.5)) * s
    mouth_ry = (1.8 + rng.uniform(-0.5, 0.7)) * s

    ss = max(1, int(supersample))
    hi = size * ss
    yy, xx = (np.mgrid[0:hi, 0:hi] + 0.5) / ss - 0.5
    img = np.empty((hi, hi, 3), dtype=np.float64)
    img[:] = hair
    img[_ellipse_mask(xx, yy, cx, cy, head_rx, head_ry)] = skin
    img[_ellipse_mask(xx, yy, cx - eye_dx, eye_y, eye_r, eye_r)] = eye
    img[_ellipse_mask(xx, yy, cx + eye_dx, eye_y, eye_r, eye_r)] = eye
    img[_ellipse_mask(xx, yy, cx, mouth_y, mouth_rx, mouth_ry)] = mouth
    img = img.reshape(size, ss, size, ss, 3).mean(axis=(1, 3))
    # 3-tap binomial blur per axis: band-limits the raster so bilinear
    # warps lose little energy
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    img = 0.25 * pad[:-2, 1:-1] + 0.5 * pad[1:-1, 1:-1] + 0.25 * pad[2:, 1:-1]
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    img = 0.25 * pad[1:-1, :-2] + 0.5 * pad[1:-1, 1:-1] + 0.25 * pad[1:-1, 2:]

    landmarks = np.array([
        [cx - eye_dx, eye_y],
        [cx + eye_dx, eye_y],
        [cx, mouth_y],
    ], dtype=np.float64)

    return ToyImage(
        raster=np.clip(img, 0.0, 1.0).astype(np.float32),
        homography=np.eye(3),
        landmarks=landmarks,
        landmarks_canonical=landmarks.copy(),
    )


def _dlt(src, dst):
    """Solve the 3x3 homography taking src points to dst points (4 pairs)."""
    rows = []
    for (x, y), (xp, yp) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -xp * x, -xp * y, -xp])
        rows.append([0, 0, 0, x, y, 1, -yp * x, -yp * y, -yp])
    _, _, vt = np.linalg.svd(np.asarray(rows, dtype=np.float64))
    h = vt[-1].reshape(3, 3)
    return h / h[2, 2]


def random_homography(seed, max_corner_shift, size=64):
    """Random perspective map from jittered image corners.

    max_corner_shift is in pixels and must not exceed a quarter of the
    image width, which keeps the warped face inside the frame. Degenerate
    draws (|det| <= 1e-6) are rejected and redrawn.
    """
    if max_corner_shift > 0.25 * size:
        raise ValueError(
            f"max_corner_shift {max_corner_shift} exceeds 0.25 * size = {0.25 * size}")
    rng = np.random.Generator(np.random.Philox(seed))
    corners = np.array([[0, 0], [size - 1.0, 0], [size - 1.0, size - 1.0], [0, size - 1.0]])
    for _ in range(64):
        shifted = corners + rng.uniform(-max_corner_shift, max_corner_shift, (4, 2))
        h = _dlt(corners, shifted)
        if abs(np.linalg.det(h)) > 1e-6:
            return h
    raise ValueError("random_homography: no invertible draw in 64 attempts")


def apply_homography(h, points):
    """Apply a 3x3 homography to (n, 2) points."""
    pts = np.asarray(points, dtype=np.float64)
    ones = np.ones((len(pts), 1))
    mapped = np.concatenate([pts, ones], axis=1) @ np.asarray(h, dtype=np.float64).T
    return mapped[:, :2] / mapped[:, 2:3]


def warp_image(img: ToyImage, h, background=None):
    """Warp a ToyImage by homography h via inverse-mapped bilinear sampling.

    Output pixel p samples the source at h^-1(p); samples falling outside
    the source get the background color (default: the source's corner
    pixel, which is hair). Landmarks and the composed homography are
    carried along so ground truth stays consistent.
    """
    h = np.asarray(h, dtype=np.float64)
    if abs(np.linalg.det(h)) <= 1e-6:
        raise ValueError(f"warp_image: homography is not invertible (det={np.linalg.det(h):g})")
    size = img.size
    if background is None:
        background = img.raster[0, 0]
    background = np.asarray(background, dtype=np.float64)

    hinv = np.linalg.inv(h)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    ones = np.ones_like(xx)
    src = np.stack([xx, yy, ones], axis=-1) @ hinv.T
    sx = src[..., 0] / src[..., 2]
    sy = src[..., 1] / src[..., 2]

    inside = (sx >= 0) & (sx <= size - 1) & (sy >= 0) & (sy <= size - 1)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, size - 1)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, size - 1)
    x1 = np.minimum(x0 + 1, size - 1)
    y1 = np.minimum(y0 + 1, size - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)[..., None]
    fy = np.clip(sy - y0, 0.0, 1.0)[..., None]

    ras = img.raster.astype(np.float64)
    top = ras[y0, x0] * (1 - fx) + ras[y0, x1] * fx
    bot = ras[y1, x0] * (1 - fx) + ras[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    out[~inside] = background

    return ToyImage(
        raster=out.astype(np.float32),
        homography=h @ img.homography,
        landmarks=apply_homography(h, img.landmarks),
        landmarks_canonical=img.landmarks_canonical.copy(),
    )


def make_toy_dataset(n, seed, size=64, max_corner_shift=None):
    """n distinct faces, each warped by its own random homography."""
    if max_corner_shift is None:
        max_corner_shift = 0.2 * size
    items = []
    for i in range(n):
        face = make_face_image(seed * 1_000_003 + i, size=size)
        h = random_homography(seed * 2_000_003 + i, max_corner_shift, size=size)
        items.append(warp_image(face, h))
    return items


# UV-sphere grid for heads; fixed so feature vertices land on grid points
HEAD_LAT = 32
HEAD_LON = 64
_EYE_I, _EYE_DJ = 14, 6
_MOUTH_I = 21
_NOSE_I = 17
_HAIR_I = 9       # rows strictly above this are scalp
_NECK_I = 26      # rows at or below are neck
_TEX_SIZE = 128


def _head_radial(theta, phi, rng_params):
    """Radius multiplier fields: nose bump plus gentle seeded wobble."""
    nose_amp, wob_amp, wob_phase = rng_params
    theta_nose = np.pi * _NOSE_I / HEAD_LAT
    bump = nose_amp * np.exp(-(((theta - theta_nose) / 0.20) ** 2 + (phi / 0.22) ** 2))
    wobble = wob_amp * np.cos(2.0 * phi + wob_phase) * np.sin(theta) ** 2
    return 1.0 + bump + wobble


def _paint_head_texture(rng):
    """Spherical texture: hair, skin, neck bands plus eye and mouth spots."""
    ts = _TEX_SIZE
    hair_idx = int(rng.integers(len(HAIR_PALETTE)))
    hair = np.array(HAIR_PALETTE[hair_idx])
    skin = np.array([0.82, 0.62, 0.47]) + rng.uniform(-0.08, 0.08, 3)
    neck = skin * 0.8
    eye = np.array(EYE_PALETTE[rng.integers(len(EYE_PALETTE))])
    mouth = np.array([0.62, 0.14, 0.16]) + rng.uniform(-0.05, 0.05, 3)

    row = np.arange(ts)[:, None] * np.ones((1, ts))      # v = 1 - (row+0.5)/ts
    col = np.ones((ts, 1)) * np.arange(ts)[None, :]      # u = (col+0.5)/ts
    u = (col + 0.5) / ts
    v = 1.0 - (row + 0.5) / ts
    i_coord = (1.0 - v) * HEAD_LAT                       # fractional lat row
    j_coord = u * HEAD_LON                               # fractional lon col

    img = np.empty((ts, ts, 3), dtype=np.float64)
    img[:] = skin
    back = (j_coord < HEAD_LON / 4) | (j_coord > 3 * HEAD_LON / 4)
    img[(i_coord <= _HAIR_I + 0.5) | back] = hair
    img[i_coord >= _NECK_I - 0.5] = neck

    def spot(ci, cj, ri, rj, color):
        mask = (((i_coord - ci) / ri) ** 2 + ((j_coord - cj) / rj) ** 2) <= 1.0
        img[mask] = color

    cj = HEAD_LON / 2
    spot(_EYE_I, cj - _EYE_DJ, 1.4, 2.2, eye)
    spot(_EYE_I, cj + _EYE_DJ, 1.4, 2.2, eye)
    spot(_MOUTH_I, cj, 1.2, 4.0, mouth)
    return np.clip(img, 0, 1).astype(np.float32), HAIR_PALETTE[hair_idx]


def make_head_mesh(seed):
    """Build one textured head: deformed ellipsoid, labels, landmarks.

    The head faces +z with its top toward +y. The mesh is a UV sphere with
    duplicated seam column, normalized to the unit box; landmarks sit on
    grid vertices so they are exactly on the surface.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    radii = np.array([
        rng.uniform(0.70, 0.90),   # x: ear-to-ear
        rng.uniform(0.95, 1.15),   # y: chin-to-crown
        rng.uniform(0.78, 0.98),   # z: nose-to-back
    ])
    deform_params = (rng.uniform(0.05, 0.10), rng.uniform(0.0, 0.02),
                     rng.uniform(0, 2 * np.pi))
    texture, hair_color = _paint_head_texture(rng)

    n_rows, n_cols = HEAD_LAT + 1, HEAD_LON + 1
    i_grid, j_grid = np.mgrid[0:n_rows, 0:n_cols].astype(np.float64)
    theta = np.pi * i_grid / HEAD_LAT
    phi = 2.0 * np.pi * j_grid / HEAD_LON - np.pi

    mult = _head_radial(theta, phi, deform_params)
    x = radii[0] * np.sin(theta) * np.sin(phi) * mult
    y = radii[1] * np.cos(theta) * mult
    z = radii[2] * np.sin(theta) * np.cos(phi) * mult
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)

    uvs = np.stack([j_grid / HEAD_LON, 1.0 - i_grid / HEAD_LAT], axis=-1).reshape(-1, 2)

    def vid(i, j):
        return i * n_cols + j

    tris = []
    for i in range(HEAD_LAT):
        for j in range(HEAD_LON):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if i > 0:
                tris.append([a, b, d])
            if i < HEAD_LAT - 1:
                tris.append([b, c, d])
    triangles = np.asarray(tris, dtype=np.int64)

    # labels per vertex by grid row/column region
    ii = i_grid.reshape(-1).astype(np.int64)
    jj = j_grid.reshape(-1).astype(np.int64)
    labels = np.zeros(len(verts), dtype=np.int64)            # face
    behind = (jj < HEAD_LON // 4) | (jj > 3 * HEAD_LON // 4)
    labels[(ii <= _HAIR_I) | behind] = 1                     # scalp
    labels[ii >= _NECK_I] = 2                                # neck

    cj = HEAD_LON // 2
    landmark_ids = [vid(_EYE_I, cj - _EYE_DJ), vid(_EYE_I, cj + _EYE_DJ),
                    vid(_MOUTH_I, cj)]
    nose_id = vid(_NOSE_I, cj)

    mesh = TexturedMesh(
        vertices=verts,
        triangles=triangles,
        uvs=uvs,
        face_uvs=triangles.copy(),
        texture=texture,
        untextured=False,
    ).validate()
    mesh = normalize_to_unit_box(mesh)

    landmarks = mesh.vertices[landmark_ids].copy()
    nose = mesh.vertices[nose_id]
    nose_direction = nose / np.linalg.norm(nose)

    return SyntheticHead(
        mesh=mesh,
        landmarks=landmarks,
        vertex_labels=labels,
        nose_direction=nose_direction,
        hair_color=hair_color,
    )


def _atomic_json(path, payload):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_toy_item(item: ToyImage, out_prefix):
    """Write one toy image as PNG (sRGB) plus a JSON ground-truth sidecar.

    Returns {"png": ..., "json": ...}. The raster is quantized to 8 bits;
    landmark coordinates and the homography round-trip exactly through
    JSON float repr.
    """
    os.makedirs(os.path.dirname(out_prefix) or ".", exist_ok=True)
    png_path = f"{out_prefix}.png"
    json_path = f"{out_prefix}.json"
    srgb = linear_to_srgb(np.clip(item.raster, 0.0, 1.0))
    img8 = np.clip(np.round(srgb * 255.0), 0, 255).astype(np.uint8)
    tmp = f"{png_path}.tmp"
    Image.fromarray(img8, mode="RGB").save(tmp, format="PNG")
    os.replace(tmp, png_path)
    _atomic_json(json_path, {
        "kind": "toy",
        "size": int(item.size),
        "homography": item.homography.tolist(),
        "landmarks": item.landmarks.tolist(),
        "landmarks_canonical": item.landmarks_canonical.tolist(),
        "landmark_names": list(LANDMARK_NAMES),
    })
    return {"png": png_path, "json": json_path}


def load_toy_item(prefix) -> ToyImage:
    """Read back a save_toy_item pair; raster returns as linear float32."""
    with Image.open(f"{prefix}.png") as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    with open(f"{prefix}.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("kind") != "toy":
        raise ValueError(f"{prefix}.json: not a toy item sidecar")
    return ToyImage(
        raster=srgb_to_linear(arr).astype(np.float32),
        homography=np.asarray(meta["homography"], dtype=np.float64),
        landmarks=np.asarray(meta["landmarks"], dtype=np.float64),
        landmarks_canonical=np.asarray(meta["landmarks_canonical"],
                                       dtype=np.float64),
    )


def save_head(head: SyntheticHead, out_prefix):
    """Write one head as OBJ + MTL + PNG plus a JSON ground-truth sidecar."""
    files = save_textured_mesh(head.mesh, out_prefix)
    json_path = f"{out_prefix}.json"
    _atomic_json(json_path, {
        "kind": "head",
        "landmarks": head.landmarks.tolist(),
        "landmark_names": list(LANDMARK_NAMES),
        "vertex_labels": head.vertex_labels.tolist(),
        "label_names": list(LABEL_NAMES),
        "nose_direction": head.nose_direction.tolist(),
        "hair_color": [float(c) for c in head.hair_color],
    })
    files["json"] = json_path
    return files


def load_head(prefix) -> SyntheticHead:
    """Read back a save_head bundle into a SyntheticHead."""
    mesh = load_textured_mesh(f"{prefix}.obj")
    with open(f"{prefix}.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("kind") != "head":
        raise ValueError(f"{prefix}.json: not a head sidecar")
    labels = np.asarray(meta["vertex_labels"], dtype=np.int64)
    if len(labels) != len(mesh.vertices):
        raise ValueError(
            f"{prefix}: {len(labels)} labels for {len(mesh.vertices)} vertices")
    return SyntheticHead(
        mesh=mesh,
        landmarks=np.asarray(meta["landmarks"], dtype=np.float64),
        vertex_labels=labels,
        nose_direction=np.asarray(meta["nose_direction"], dtype=np.float64),
        hair_color=tuple(meta["hair_color"]),
    )
