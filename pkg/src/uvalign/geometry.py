"""Mesh ingestion: OBJ loading, unit-box normalization, surface sampling, voxelization.

Meshes come in as OBJ + MTL + texture image, get normalized into the
[-0.5, 0.5]^3 box, and leave as colored point clouds (positions, face
normals, linear-RGB colors) or colored voxel grids (RGB + occupancy
channels) ready for the encoder.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

__all__ = [
    "MeshError", "ObjParseError", "MeshValidationError",
    "TexturedMesh", "ColoredPointCloud", "ColoredVoxelGrid",
    "srgb_to_linear", "linear_to_srgb", "bilinear_sample",
    "load_textured_mesh", "save_textured_mesh", "normalize_to_unit_box",
    "sample_surface", "voxelize_colored",
]

COLOR_SENTINEL = 0.5


class MeshError(ValueError):
    """Base class for mesh loading and validation failures."""


class ObjParseError(MeshError):
    """Malformed OBJ/MTL syntax; message carries the file line number."""


class MeshValidationError(MeshError):
    """Structurally parseable mesh that violates an index or shape rule."""


@dataclass
class TexturedMesh:
    """Triangle mesh with optional per-corner UVs and a source texture.

    Attributes
    ----------
    vertices : (V, 3) float64
    triangles : (F, 3) int64, vertex indices
    uvs : (T, 2) float64 or None
    face_uvs : (F, 3) int64 or None, per-corner indices into uvs
    texture : (H, W, 3) float32 linear RGB in [0, 1], or None
    material_ids : (F,) int64 or None
    untextured : True when no usable texture was resolved
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uvs: Optional[np.ndarray] = None
    face_uvs: Optional[np.ndarray] = None
    texture: Optional[np.ndarray] = None
    material_ids: Optional[np.ndarray] = None
    untextured: bool = False

    def validate(self):
        v, f = self.vertices, self.triangles
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshValidationError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshValidationError(f"triangles must be (F, 3), got {f.shape}")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise MeshValidationError(
                f"triangle index out of range: [{f.min()}, {f.max()}] with {len(v)} vertices")
        if self.uvs is not None and not np.all(np.isfinite(self.uvs)):
            raise MeshValidationError("UVs contain non-finite values")
        if self.face_uvs is not None:
            fu = self.face_uvs
            if len(fu) != len(f):
                raise MeshValidationError(
                    f"face_uvs count {len(fu)} != triangle count {len(f)}")
            if len(fu) and (fu.min() < 0 or fu.max() >= len(self.uvs)):
                raise MeshValidationError(
                    f"UV index out of range: [{fu.min()}, {fu.max()}] with {len(self.uvs)} UVs")
        return self


@dataclass
class ColoredPointCloud:
    """Surface samples: positions, unit face normals, linear-RGB colors.

    labels is an optional per-point integer array (semantic class ids)
    carried through from per-vertex annotations. has_color is False when
    the source mesh had no texture; colors then hold a gray sentinel.
    """

    positions: np.ndarray
    normals: np.ndarray
    colors: np.ndarray
    labels: Optional[np.ndarray] = None
    has_color: bool = True

    def __len__(self):
        return len(self.positions)


@dataclass
class ColoredVoxelGrid:
    """Dense (4, R, R, R) float32 grid: RGB channels then occupancy."""

    data: np.ndarray

    @property
    def resolution(self):
        return self.data.shape[1]

    @property
    def occupancy(self):
        return self.data[3]

    @property
    def colors(self):
        return self.data[:3]


def srgb_to_linear(c):
    """Map sRGB-encoded values in [0, 1] to linear radiance."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    """Inverse of srgb_to_linear; clamps to [0, 1] first."""
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def bilinear_sample(image, uv):
    """Sample an (H, W, C) image at UV coordinates with bilinear filtering.

    UV follows the mesh convention: u right, v up, both in [0, 1], texel
    centers at half-integer pixel coordinates. Coordinates outside the
    image clamp to the border.

    Parameters
    ----------
    image : (H, W, C) array
    uv : (n, 2) array

    Returns
    -------
    (n, C) array of the image's dtype promoted to float
    """
    h, w = image.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    x = uv[:, 0] * w - 0.5
    y = (1.0 - uv[:, 1]) * h - 0.5
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(x - x0, 0.0, 1.0)[:, None]
    fy = np.clip(y - y0, 0.0, 1.0)[:, None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _parse_mtl(path):
    """Return {material name: map_Kd path or None} from an MTL file."""
    materials = {}
    current = None
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "newmtl":
                if len(parts) < 2:
                    raise ObjParseError(f"{path}:{lineno}: newmtl without a name")
                current = parts[1]
                materials[current] = None
            elif parts[0] == "map_Kd" and current is not None:
                materials[current] = " ".join(parts[1:])
    return materials


def _load_texture_image(path):
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return srgb_to_linear(arr).astype(np.float32)


def load_textured_mesh(path):
    """Parse an OBJ file with its MTL and texture into a TexturedMesh.

    Faces must be triangles. Vertex and UV indices are validated against
    the 1-based OBJ convention. A missing MTL, missing map_Kd, or missing
    texture image flags the mesh untextured instead of failing.
    """
    vertices, uvs = [], []
    tri_v, tri_uv, tri_mat = [], [], []
    mtl_file = None
    material_names = []
    current_mat = -1
    base = os.path.dirname(os.path.abspath(path))

    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    vertices.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    uvs.append([float(x) for x in parts[1:3]])
                elif tag == "f":
                    corners = parts[1:]
                    if len(corners) != 3:
                        raise ObjParseError(
                            f"{path}:{lineno}: face with {len(corners)} corners; only triangles are supported")
                    vi, ti = [], []
                    for c in corners:
                        fields = c.split("/")
                        vi.append(int(fields[0]))
                        if len(fields) > 1 and fields[1]:
                            ti.append(int(fields[1]))
                    tri_v.append(vi)
                    tri_uv.append(ti if len(ti) == 3 else None)
                    tri_mat.append(current_mat)
                elif tag == "mtllib":
                    mtl_file = " ".join(parts[1:])
                elif tag == "usemtl":
                    name = parts[1] if len(parts) > 1 else ""
                    if name not in material_names:
                        material_names.append(name)
                    current_mat = material_names.index(name)
            except ObjParseError:
                raise
            except (ValueError, IndexError) as exc:
                raise ObjParseError(f"{path}:{lineno}: {exc}") from exc

    if not vertices:
        raise MeshValidationError(f"{path}: no vertices")
    if not tri_v:
        raise MeshValidationError(f"{path}: no faces")

    nv, nt = len(vertices), len(uvs)
    for face in tri_v:
        for idx in face:
            if idx < 1 or idx > nv:
                raise MeshValidationError(
                    f"{path}: vertex index {idx} outside 1..{nv} (OBJ indices are 1-based)")
    have_uv = all(t is not None for t in tri_uv) and nt > 0
    if have_uv:
        for face in tri_uv:
            for idx in face:
                if idx < 1 or idx > nt:
                    raise MeshValidationError(
                        f"{path}: UV index {idx} outside 1..{nt}")

    texture = None
    if mtl_file is not None:
        mtl_path = os.path.join(base, mtl_file)
        if os.path.exists(mtl_path):
            materials = _parse_mtl(mtl_path)
            tex_files = sorted({t for t in materials.values() if t})
            if len(tex_files) > 1:
                raise MeshValidationError(
                    f"{path}: {len(tex_files)} distinct textures; multi-texture materials are unsupported")
            if tex_files:
                tex_path = os.path.join(base, tex_files[0])
                if os.path.exists(tex_path):
                    texture = _load_texture_image(tex_path)

    untextured = texture is None or not have_uv

    mesh = TexturedMesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        triangles=np.asarray(tri_v, dtype=np.int64) - 1,
        uvs=np.asarray(uvs, dtype=np.float64) if have_uv else None,
        face_uvs=np.asarray(tri_uv, dtype=np.int64) - 1 if have_uv else None,
        texture=texture,
        material_ids=np.asarray(tri_mat, dtype=np.int64) if material_names else None,
        untextured=untextured,
    )
    return mesh.validate()


def _atomic_write(path, data):
    tmp = f"{path}.tmp"
    with open(tmp, "wb" if isinstance(data, bytes) else "w") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_textured_mesh(mesh: TexturedMesh, out_prefix):
    """Write a mesh as OBJ (+ MTL and sRGB PNG when textured).

    The inverse of load_textured_mesh for single-texture meshes: the
    texture array's row 0 is stored as the PNG's top row, and UV indices
    are written per corner from face_uvs. Returns {kind: path}. All
    writes are atomic.
    """
    mesh.validate()
    out_dir = os.path.dirname(out_prefix) or "."
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.basename(out_prefix)
    obj_path = f"{out_prefix}.obj"
    files = {"obj": obj_path}

    textured = mesh.texture is not None and mesh.uvs is not None
    lines = []
    if textured:
        mtl_path = f"{out_prefix}.mtl"
        png_path = f"{out_prefix}.png"
        files["mtl"] = mtl_path
        files["texture"] = png_path

        srgb = linear_to_srgb(np.clip(mesh.texture, 0.0, 1.0))
        img8 = np.clip(np.round(srgb * 255.0), 0, 255).astype(np.uint8)
        tmp = f"{png_path}.tmp"
        Image.fromarray(img8, mode="RGB").save(tmp, format="PNG")
        os.replace(tmp, png_path)

        _atomic_write(mtl_path, f"newmtl material0\nKd 1.0 1.0 1.0\nmap_Kd {base}.png\n")
        lines.append(f"mtllib {base}.mtl")

    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    if textured:
        for uv in mesh.uvs:
            lines.append(f"vt {float(uv[0])!r} {float(uv[1])!r}")
        lines.append("usemtl material0")
        for face, corners in zip(mesh.triangles + 1, mesh.face_uvs + 1):
            lines.append(" ".join(
                ["f"] + [f"{v}/{t}" for v, t in zip(face, corners)]))
    else:
        for face in mesh.triangles + 1:
            lines.append(f"f {face[0]} {face[1]} {face[2]}")
    _atomic_write(obj_path, "\n".join(lines) + "\n")
    return files


def normalize_to_unit_box(mesh: TexturedMesh) -> TexturedMesh:
    """Center the mesh at the origin and scale its longest axis to extent 1.

    Aspect ratio is preserved, so the result fits [-0.5, 0.5]^3 with the
    longest axis exactly spanning it.
    """
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise MeshValidationError("degenerate mesh: zero extent along every axis")
    center = (lo + hi) / 2.0
    scaled = (v - center) / extent
    return TexturedMesh(
        vertices=scaled,
        triangles=mesh.triangles,
        uvs=mesh.uvs,
        face_uvs=mesh.face_uvs,
        texture=mesh.texture,
        material_ids=mesh.material_ids,
        untextured=mesh.untextured,
    )


def _face_geometry(mesh):
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    return a, b, c, cross, areas


def sample_surface(mesh: TexturedMesh, n, seed, vertex_labels=None) -> ColoredPointCloud:
    """Draw n area-proportional surface samples with normals and colors.

    Each sample's normal is its triangle's face normal; its color is a
    bilinear texture lookup at the barycentrically interpolated UV. With
    per-vertex labels given, each point takes the label of the corner
    with the largest barycentric weight.

    The RNG is a counter-based generator so identical (mesh, n, seed)
    calls are bitwise reproducible.
    """
    if n < 1:
        raise MeshValidationError(f"sample_surface: n must be >= 1, got {n}")
    a, b, c, cross, areas = _face_geometry(mesh)
    total = areas.sum()
    if total <= 0:
        raise MeshValidationError("sample_surface: mesh has zero total area")

    rng = np.random.Generator(np.random.Philox(seed))
    face_idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    wa = (1.0 - r1)[:, None]
    wb = (r1 * (1.0 - r2))[:, None]
    wc = (r1 * r2)[:, None]

    pos = wa * a[face_idx] + wb * b[face_idx] + wc * c[face_idx]
    nrm = cross[face_idx]
    length = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = nrm / np.maximum(length, 1e-30)

    if mesh.untextured or mesh.texture is None or mesh.face_uvs is None:
        colors = np.full((n, 3), COLOR_SENTINEL, dtype=np.float32)
        has_color = False
    else:
        fu = mesh.face_uvs[face_idx]
        uv = (wa * mesh.uvs[fu[:, 0]] + wb * mesh.uvs[fu[:, 1]] + wc * mesh.uvs[fu[:, 2]])
        colors = bilinear_sample(mesh.texture, uv).astype(np.float32)
        has_color = True

    labels = None
    if vertex_labels is not None:
        vertex_labels = np.asarray(vertex_labels)
        corner = np.argmax(np.concatenate([wa, wb, wc], axis=1), axis=1)
        verts = mesh.triangles[face_idx, corner]
        labels = vertex_labels[verts]

    return ColoredPointCloud(
        positions=pos.astype(np.float32),
        normals=nrm.astype(np.float32),
        colors=colors,
        labels=labels,
        has_color=has_color,
    )


def voxelize_colored(cloud: ColoredPointCloud, resolution=64) -> ColoredVoxelGrid:
    """Bin a normalized cloud into a (4, R, R, R) grid of mean colors + occupancy.

    The voxel index along each axis is floor((p + 0.5) * R) clamped to
    [0, R-1], so the +0.5 boundary folds into the last voxel.
    """
    if len(cloud) == 0:
        raise MeshValidationError("voxelize_colored: empty cloud")
    r = int(resolution)
    if r < 8:
        raise MeshValidationError(f"voxelize_colored: resolution must be >= 8, got {resolution}")

    idx = np.floor((cloud.positions.astype(np.float64) + 0.5) * r).astype(np.int64)
    idx = np.clip(idx, 0, r - 1)
    flat = (idx[:, 0] * r + idx[:, 1]) * r + idx[:, 2]

    counts = np.bincount(flat, minlength=r ** 3).astype(np.float64)
    grid = np.zeros((4, r, r, r), dtype=np.float32)
    occupied = counts > 0
    for ch in range(3):
        sums = np.bincount(flat, weights=cloud.colors[:, ch].astype(np.float64),
                           minlength=r ** 3)
        mean = np.zeros(r ** 3)
        mean[occupied] = sums[occupied] / counts[occupied]
        grid[ch] = mean.reshape(r, r, r).astype(np.float32)
    grid[3] = occupied.reshape(r, r, r).astype(np.float32)
    return ColoredVoxelGrid(data=grid)
