"""Texture baking, textured-mesh export, and texture swapping.

Baking scatters surface-sample colors into per-generator rasters through
the learned UV map: each sample lands in the texture chosen by its
argmax mask, each texel averages its contributors, and holes are left
for inpainting. Export writes OBJ/MTL/PNG with one texture per face
(vertex-majority vote); transfer swaps raster contents between two
shapes that share a UV space.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from PIL import Image

from . import tensor as tt
from .geometry import linear_to_srgb
from .networks import AuvModel
from .tensor import Tape

__all__ = [
    "TextureImage", "TexturedExport", "uv_to_texel", "bake_points",
    "bake_texture", "forward_shape", "vertex_normals", "face_majority",
    "build_export", "write_export", "export_textured", "transfer_texture",
    "shared_texel_disagreement", "UV_WINDOW",
]

UV_WINDOW = 0.55


@dataclass
class TextureImage:
    """One baked raster plus its sample bookkeeping.

    raster holds per-texel mean colors (zero where nothing landed);
    counts holds how many samples contributed to each texel. A texel is
    valid once at least one sample landed on it.
    """

    raster: np.ndarray
    counts: np.ndarray

    @property
    def validity(self):
        return self.counts >= 1

    @property
    def resolution(self):
        return self.raster.shape[0]


def uv_to_texel(uv, resolution, window=UV_WINDOW):
    """Map UV rows to integer texel (x, y) via the clamped window.

    texel = floor((clamp(q, -window, window) + window) / (2 window) * R),
    clamped to R - 1 so the upper edge stays inside the raster.
    """
    q = np.clip(np.asarray(uv, dtype=np.float64), -window, window)
    scaled = np.floor((q + window) / (2.0 * window) * resolution).astype(np.int64)
    return np.clip(scaled, 0, resolution - 1)


def bake_points(uv, colors, routing, k, resolution, window=UV_WINDOW):
    """Scatter samples into k rasters; texel value = mean of its samples."""
    uv = np.asarray(uv, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    routing = np.asarray(routing, dtype=np.int64)
    if len(uv) != len(colors) or len(uv) != len(routing):
        raise ValueError(
            f"bake_points: {len(uv)} uvs, {len(colors)} colors, {len(routing)} routes")
    if routing.size and (routing.min() < 0 or routing.max() >= k):
        raise ValueError(f"bake_points: routing outside 0..{k - 1}")
    texels = uv_to_texel(uv, resolution, window)
    channels = colors.shape[1]
    out = []
    for gen in range(k):
        sel = routing == gen
        sums = np.zeros((resolution, resolution, channels), dtype=np.float64)
        counts = np.zeros((resolution, resolution), dtype=np.int64)
        if sel.any():
            x, y = texels[sel, 0], texels[sel, 1]
            np.add.at(sums, (y, x), colors[sel])
            np.add.at(counts, (y, x), 1)
        else:
            warnings.warn(f"bake_points: no samples routed to generator {gen}",
                          stacklevel=2)
        filled = counts >= 1
        raster = np.zeros_like(sums, dtype=np.float32)
        raster[filled] = (sums[filled] / counts[filled, None]).astype(np.float32)
        out.append(TextureImage(raster=raster, counts=counts))
    return out


def forward_shape(model: AuvModel, grid, points, normals):
    """Run encoder + mapper/masker; returns (uv, argmax routing, record)."""
    dtype = np.dtype(model.config.dtype)
    with Tape():
        record = model.encoder_forward(np.asarray(grid, dtype=dtype))
        out = model.model_forward(
            tt.constant(np.asarray(points, dtype=dtype)), record,
            None if normals is None else tt.constant(np.asarray(normals, dtype=dtype)))
    uv = out["uv"].data.astype(np.float64)
    masks = np.concatenate([m.data for m in out["masks"]], axis=1)
    return uv, masks.argmax(axis=1), record


def bake_texture(model: AuvModel, sample, resolution=256, window=UV_WINDOW):
    """Bake one shape into K TextureImages (holes not yet inpainted).

    sample is a trainer.ShapeSample; its ground-truth sample colors are
    scattered at the UV positions the model assigns. Untextured samples
    cannot be baked.
    """
    if sample.colors is None:
        raise ValueError(f"bake_texture: sample {sample.name} has no colors")
    uv, routing, _ = forward_shape(model, sample.grid, sample.points,
                                   sample.normals)
    return bake_points(uv, sample.colors, routing, model.config.k,
                       resolution, window)


def vertex_normals(mesh):
    """Area-weighted per-vertex normals (unit rows; zero rows stay zero)."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    normals = np.zeros_like(mesh.vertices)
    for corner in range(3):
        np.add.at(normals, mesh.triangles[:, corner], cross)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    nz = lengths[:, 0] > 0
    normals[nz] /= lengths[nz]
    return normals


def face_majority(corner_votes, k):
    """Per-face texture index by vertex-majority vote, ties toward lower.

    corner_votes is (F, 3) int; returns (face_tex (F,), seam_count) where
    a seam face is any face whose corners do not vote unanimously.
    """
    votes = np.asarray(corner_votes, dtype=np.int64)
    face_tex = np.zeros(len(votes), dtype=np.int64)
    seams = 0
    for f, row in enumerate(votes):
        counts = np.bincount(row, minlength=k)
        face_tex[f] = int(counts.argmax())
        if (row != row[0]).any():
            seams += 1
    return face_tex, seams


@dataclass
class TexturedExport:
    """Geometry plus per-vertex UVs in [0,1]^2 and per-face texture picks."""

    vertices: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray
    face_tex: np.ndarray
    textures: List[np.ndarray]
    seam_face_count: int
    uv_window: float = UV_WINDOW
    files: dict = field(default_factory=dict)


def build_export(mesh, model: AuvModel, record, textures,
                 window=UV_WINDOW) -> TexturedExport:
    """Evaluate the mapper/masker on mesh vertices and assemble an export.

    Per-face texture index is the majority vote of the face's vertex
    argmax masks, ties toward the lower index; faces with non-unanimous
    votes are counted as seam faces.
    """
    if len(textures) != model.config.k:
        raise ValueError(
            f"build_export: {len(textures)} textures for K={model.config.k}")
    dtype = np.dtype(model.config.dtype)
    verts = np.asarray(mesh.vertices, dtype=dtype)
    with Tape():
        uv_t = model.uv_mapper_forward(tt.constant(verts), record.code)
        if model.config.k == 1:
            route = np.zeros(len(verts), dtype=np.int64)
        elif model.config.chair_masker:
            nrm = tt.constant(vertex_normals(mesh).astype(dtype))
            m_pred, n_pred = model.chair_masker_forward(tt.constant(verts), record.code)
            from .networks import chair_mask_compose
            masks = chair_mask_compose(m_pred, n_pred, nrm)
            route = np.concatenate([m.data for m in masks], axis=1).argmax(axis=1)
        else:
            nrm = tt.constant(vertex_normals(mesh).astype(dtype))
            m = model.masker_forward(tt.constant(verts), nrm, record.code)
            route = np.where(m.data[:, 0] >= 0.5, 0, 1).astype(np.int64)
    uv = np.clip(uv_t.data.astype(np.float64), -window, window)
    uv01 = (uv + window) / (2.0 * window)

    face_tex, seams = face_majority(route[mesh.triangles], model.config.k)

    rasters = []
    for tex in textures:
        arr = tex.raster if isinstance(tex, TextureImage) else np.asarray(tex)
        rasters.append(np.asarray(arr, dtype=np.float32))
    return TexturedExport(
        vertices=np.asarray(mesh.vertices, dtype=np.float64),
        triangles=np.asarray(mesh.triangles, dtype=np.int64),
        uvs=uv01, face_tex=face_tex, textures=rasters,
        seam_face_count=seams, uv_window=window)


def _write_atomic(path, data):
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_export(export: TexturedExport, out_prefix):
    """Write OBJ + MTL + one PNG per texture + a JSON sidecar.

    Returns the export with its files dict filled in. PNGs are 8-bit
    sRGB, stored top-row-first, so the [0,1] v coordinate counts from
    the bottom as OBJ expects.
    """
    out_dir = os.path.dirname(out_prefix) or "."
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.basename(out_prefix)
    obj_path = f"{out_prefix}.obj"
    mtl_path = f"{out_prefix}.mtl"
    files = {"obj": obj_path, "mtl": mtl_path, "textures": [], "sidecar": f"{out_prefix}.json"}

    png_names = []
    for k, tex in enumerate(export.textures):
        png_path = f"{out_prefix}_tex{k}.png"
        srgb = linear_to_srgb(np.clip(tex, 0.0, 1.0))
        img8 = np.clip(np.round(srgb * 255.0), 0, 255).astype(np.uint8)
        buf = Image.fromarray(np.flipud(img8), mode="RGB")
        tmp = f"{png_path}.tmp"
        buf.save(tmp, format="PNG")
        os.replace(tmp, png_path)
        files["textures"].append(png_path)
        png_names.append(os.path.basename(png_path))

    mtl_lines = []
    for k, name in enumerate(png_names):
        mtl_lines += [f"newmtl tex{k}", "Kd 1.0 1.0 1.0", f"map_Kd {name}", ""]
    _write_atomic(mtl_path, "\n".join(mtl_lines))

    lines = [f"mtllib {os.path.basename(mtl_path)}"]
    for v in export.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for uv in export.uvs:
        lines.append(f"vt {uv[0]:.9g} {uv[1]:.9g}")
    for k in range(len(export.textures)):
        faces = np.nonzero(export.face_tex == k)[0]
        if len(faces) == 0:
            continue
        lines.append(f"usemtl tex{k}")
        for f in faces:
            i, j, l = (export.triangles[f] + 1).tolist()
            lines.append(f"f {i}/{i} {j}/{j} {l}/{l}")
    _write_atomic(obj_path, "\n".join(lines) + "\n")

    sidecar = {
        "resolution": int(export.textures[0].shape[0]) if export.textures else 0,
        "uv_window": export.uv_window,
        "k": len(export.textures),
        "seam_face_count": int(export.seam_face_count),
        "obj": os.path.basename(obj_path),
        "mtl": os.path.basename(mtl_path),
        "textures": png_names,
        "base": base,
    }
    _write_atomic(files["sidecar"], json.dumps(sidecar, indent=2, sort_keys=True))
    export.files = files
    return export


def export_textured(mesh, model: AuvModel, record, textures, out_prefix,
                    window=UV_WINDOW) -> TexturedExport:
    """build_export followed by write_export."""
    export = build_export(mesh, model, record, textures, window=window)
    return write_export(export, out_prefix)


def transfer_texture(export: TexturedExport, donor_textures) -> TexturedExport:
    """Swap raster contents onto existing geometry/UVs/face picks.

    donor_textures must match the export's texture count; geometry, UV
    coordinates, and face indices are shared (not copied) so a hash of
    them is provably unchanged.
    """
    donors = []
    for tex in donor_textures:
        arr = tex.raster if isinstance(tex, TextureImage) else np.asarray(tex)
        donors.append(np.asarray(arr, dtype=np.float32))
    if len(donors) != len(export.textures):
        raise ValueError(
            f"transfer_texture: donor has {len(donors)} textures, "
            f"export has {len(export.textures)}")
    return TexturedExport(
        vertices=export.vertices, triangles=export.triangles,
        uvs=export.uvs, face_tex=export.face_tex, textures=donors,
        seam_face_count=export.seam_face_count, uv_window=export.uv_window)


def shared_texel_disagreement(tex_a: TextureImage, tex_b: TextureImage):
    """Mean |a - b| over texels valid in both rasters, and their count.

    A shared UV mapper pins the two generators' textures together along
    the mask boundary; this measures how well that band agrees. Returns
    (count, mean_abs_difference); mean is 0.0 when nothing overlaps.
    """
    both = tex_a.validity & tex_b.validity
    count = int(both.sum())
    if count == 0:
        return 0, 0.0
    diff = np.abs(tex_a.raster[both] - tex_b.raster[both])
    return count, float(diff.mean())
