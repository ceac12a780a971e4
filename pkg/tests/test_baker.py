"""Tests for texture baking, textured export, and texture swapping."""

import json
import warnings

import numpy as np
import pytest

from uvalign import baker
from uvalign.baker import (
    UV_WINDOW, TextureImage, bake_points, bake_texture, build_export,
    face_majority, shared_texel_disagreement, transfer_texture, uv_to_texel,
    vertex_normals, write_export,
)
from uvalign.geometry import (
    TexturedMesh, bilinear_sample, load_textured_mesh, srgb_to_linear,
)
from uvalign.networks import AuvModel, ModelConfig
from uvalign.trainer import ShapeSample


def tiny_config(k=2, chair=False):
    return ModelConfig(
        kind="3d", basis_channels=(8, 4, 4, 4)[:k], basis_width=32,
        basis_depth=2, code_dim=16, out_channels=9, mapper_width=32,
        mapper_depth=2, masker_width=32, masker_depth=2,
        encoder_channels=(4, 8), resolution=8, in_channels=4,
        chair_masker=chair)


def quad_mesh():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                         [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return TexturedMesh(vertices=vertices, triangles=triangles)


def texel_center_uvs(resolution, window=UV_WINDOW):
    """UV rows hitting every texel center, ordered row-major (y, x)."""
    centers = (np.arange(resolution) + 0.5) / resolution * (2 * window) - window
    u, v = np.meshgrid(centers, centers, indexing="xy")
    return np.stack([u.ravel(), v.ravel()], axis=1)


class TestUvToTexel:
    def test_origin_maps_to_center_texel(self):
        assert uv_to_texel(np.array([[0.0, 0.0]]), 256).tolist() == [[128, 128]]

    def test_out_of_window_coordinates_clamp(self):
        texels = uv_to_texel(np.array([[10.0, -10.0]]), 256)
        assert texels.tolist() == [[255, 0]]

    def test_upper_edge_stays_inside_raster(self):
        texels = uv_to_texel(np.array([[UV_WINDOW, UV_WINDOW]]), 64)
        assert texels.tolist() == [[63, 63]]

    def test_lower_edge_is_texel_zero(self):
        texels = uv_to_texel(np.array([[-UV_WINDOW, -UV_WINDOW]]), 64)
        assert texels.tolist() == [[0, 0]]

    def test_texel_centers_round_trip(self):
        r = 16
        uv = texel_center_uvs(r)
        texels = uv_to_texel(uv, r)
        x, y = np.meshgrid(np.arange(r), np.arange(r), indexing="xy")
        assert np.array_equal(texels[:, 0], x.ravel())
        assert np.array_equal(texels[:, 1], y.ravel())


class TestBakePoints:
    def test_texel_averages_its_samples(self):
        uv = np.array([[0.0, 0.0], [0.0, 0.0]])
        colors = np.array([[0.2, 0.2, 0.2], [0.4, 0.4, 0.4]])
        routing = np.zeros(2, dtype=np.int64)
        tex, = bake_points(uv, colors, routing, k=1, resolution=8)
        assert tex.counts[4, 4] == 2
        assert np.allclose(tex.raster[4, 4], 0.3)
        assert tex.validity.sum() == 1

    def test_distinct_texels_keep_exact_colors(self):
        uv = np.array([[-0.4, -0.4], [0.4, 0.4]])
        colors = np.array([[0.125, 0.25, 0.5], [0.75, 0.0625, 1.0]])
        routing = np.zeros(2, dtype=np.int64)
        tex, = bake_points(uv, colors, routing, k=1, resolution=8)
        x, y = uv_to_texel(uv, 8).T
        assert np.array_equal(tex.raster[y[0], x[0]],
                              colors[0].astype(np.float32))
        assert np.array_equal(tex.raster[y[1], x[1]],
                              colors[1].astype(np.float32))
        assert tex.counts.sum() == 2

    def test_routing_splits_samples_between_generators(self):
        uv = np.zeros((4, 2))
        colors = np.tile(np.array([[0.5, 0.5, 0.5]]), (4, 1))
        routing = np.array([0, 1, 0, 1], dtype=np.int64)
        tex0, tex1 = bake_points(uv, colors, routing, k=2, resolution=8)
        assert tex0.counts.sum() == 2
        assert tex1.counts.sum() == 2

    def test_empty_generator_warns_and_stays_invalid(self):
        uv = np.zeros((3, 2))
        colors = np.full((3, 3), 0.5)
        routing = np.zeros(3, dtype=np.int64)
        with pytest.warns(UserWarning, match="generator 1"):
            tex0, tex1 = bake_points(uv, colors, routing, k=2, resolution=8)
        assert not tex1.validity.any()
        assert np.array_equal(tex1.raster, np.zeros_like(tex1.raster))

    def test_routing_out_of_range_rejected(self):
        uv = np.zeros((2, 2))
        colors = np.full((2, 3), 0.5)
        with pytest.raises(ValueError, match="routing"):
            bake_points(uv, colors, np.array([0, 2]), k=2, resolution=8)
        with pytest.raises(ValueError, match="routing"):
            bake_points(uv, colors, np.array([0, -1]), k=2, resolution=8)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="2 uvs"):
            bake_points(np.zeros((2, 2)), np.zeros((3, 3)),
                        np.zeros(2, dtype=np.int64), k=1, resolution=8)

    def test_texel_center_bake_is_exact(self):
        rng = np.random.default_rng(21)
        r = 16
        img = rng.random((r, r, 3))
        uv = texel_center_uvs(r)
        routing = np.zeros(len(uv), dtype=np.int64)
        tex, = bake_points(uv, img.reshape(-1, 3), routing, k=1, resolution=r)
        assert np.array_equal(tex.raster, img.astype(np.float32))
        assert np.array_equal(tex.counts, np.ones((r, r), dtype=np.int64))


class TestVertexNormals:
    def test_flat_quad_points_up(self):
        normals = vertex_normals(quad_mesh())
        assert np.allclose(normals, [[0.0, 0.0, 1.0]] * 4)

    def test_rows_are_unit_length(self):
        rng = np.random.default_rng(2)
        mesh = TexturedMesh(
            vertices=rng.random((10, 3)),
            triangles=rng.integers(0, 10, size=(12, 3)).astype(np.int64))
        normals = vertex_normals(mesh)
        lengths = np.linalg.norm(normals, axis=1)
        used = lengths > 0
        assert np.allclose(lengths[used], 1.0)

    def test_unreferenced_vertex_stays_zero(self):
        mesh = quad_mesh()
        mesh = TexturedMesh(
            vertices=np.vstack([mesh.vertices, [[5.0, 5.0, 5.0]]]),
            triangles=mesh.triangles)
        normals = vertex_normals(mesh)
        assert np.array_equal(normals[4], [0.0, 0.0, 0.0])


class TestFaceMajority:
    def test_unanimous_faces(self):
        face_tex, seams = face_majority(np.array([[1, 1, 1], [0, 0, 0]]), k=2)
        assert face_tex.tolist() == [1, 0]
        assert seams == 0

    def test_two_against_one(self):
        face_tex, seams = face_majority(np.array([[1, 0, 1], [0, 1, 0]]), k=2)
        assert face_tex.tolist() == [1, 0]
        assert seams == 2

    def test_three_way_tie_picks_lowest(self):
        face_tex, seams = face_majority(np.array([[2, 1, 3]]), k=4)
        assert face_tex.tolist() == [1]
        assert seams == 1

    def test_random_votes_match_recount_oracle(self):
        rng = np.random.default_rng(17)
        k = 4
        votes = rng.integers(0, k, size=(200, 3)).astype(np.int64)
        face_tex, seams = face_majority(votes, k)

        expect_seams = int((votes != votes[:, :1]).any(axis=1).sum())
        assert seams == expect_seams
        for row, got in zip(votes, face_tex):
            counts = [int((row == i).sum()) for i in range(k)]
            assert counts[got] == max(counts)
            assert all(counts[i] < counts[got] for i in range(got))


class TestBakeTexture:
    def make_sample(self, n=64, with_colors=True, seed=5):
        rng = np.random.default_rng(seed)
        points = rng.uniform(-0.5, 0.5, size=(n, 3))
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        colors = rng.random((n, 3)) if with_colors else None
        grid = rng.random((4, 8, 8, 8)).astype(np.float32)
        return ShapeSample(name="probe", grid=grid, points=points,
                           colors=colors, normals=normals)

    def test_untextured_sample_rejected(self):
        model = AuvModel(tiny_config(), seed=0)
        sample = self.make_sample(with_colors=False)
        with pytest.raises(ValueError, match="probe"):
            bake_texture(model, sample)

    def test_bake_produces_k_rasters_covering_all_samples(self):
        model = AuvModel(tiny_config(k=2), seed=0)
        sample = self.make_sample(n=128)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            textures = bake_texture(model, sample, resolution=16)
        assert len(textures) == 2
        assert all(t.resolution == 16 for t in textures)
        assert sum(int(t.counts.sum()) for t in textures) == 128


class TestExport:
    def make_parts(self, k=2, resolution=8, seed=3):
        rng = np.random.default_rng(seed)
        model = AuvModel(tiny_config(k=k), seed=0)
        mesh = quad_mesh()
        grid = rng.random((4, 8, 8, 8)).astype(np.float32)
        record = model.encoder_forward(grid)
        textures = [rng.random((resolution, resolution, 3)).astype(np.float32)
                    for _ in range(k)]
        return model, mesh, record, textures

    def test_texture_count_must_match_k(self):
        model, mesh, record, textures = self.make_parts(k=2)
        with pytest.raises(ValueError, match="K=2"):
            build_export(mesh, model, record, textures[:1])

    def test_build_export_fields(self):
        model, mesh, record, textures = self.make_parts(k=2)
        export = build_export(mesh, model, record, textures)
        assert export.uvs.shape == (4, 2)
        assert export.uvs.min() >= 0.0 and export.uvs.max() <= 1.0
        assert export.face_tex.shape == (2,)
        assert set(export.face_tex.tolist()) <= {0, 1}
        assert 0 <= export.seam_face_count <= 2
        assert export.files == {}

    def test_single_generator_routes_everything_to_texture_zero(self):
        model, mesh, record, textures = self.make_parts(k=1)
        export = build_export(mesh, model, record, textures)
        assert np.array_equal(export.face_tex, [0, 0])
        assert export.seam_face_count == 0

    def test_write_export_creates_all_files(self, tmp_path):
        model, mesh, record, textures = self.make_parts(k=2)
        export = build_export(mesh, model, record, textures)
        export = write_export(export, str(tmp_path / "shape"))

        obj_text = open(export.files["obj"]).read()
        assert obj_text.startswith("mtllib shape.mtl")
        assert obj_text.count("\nv ") == 4
        assert obj_text.count("\nvt ") == 4
        assert obj_text.endswith("\n")

        mtl_text = open(export.files["mtl"]).read()
        assert "newmtl tex0" in mtl_text and "newmtl tex1" in mtl_text
        assert "map_Kd shape_tex0.png" in mtl_text

        sidecar = json.load(open(export.files["sidecar"]))
        assert sidecar["resolution"] == 8
        assert sidecar["uv_window"] == UV_WINDOW
        assert sidecar["k"] == 2
        assert sidecar["seam_face_count"] == export.seam_face_count
        assert sidecar["textures"] == ["shape_tex0.png", "shape_tex1.png"]
        assert sidecar["base"] == "shape"
        assert not list(tmp_path.glob("*.tmp"))

    def test_obj_faces_share_vertex_and_uv_indices(self, tmp_path):
        model, mesh, record, textures = self.make_parts(k=2)
        export = write_export(build_export(mesh, model, record, textures),
                              str(tmp_path / "shape"))
        for line in open(export.files["obj"]):
            if line.startswith("f "):
                for corner in line.split()[1:]:
                    v_idx, vt_idx = corner.split("/")
                    assert v_idx == vt_idx

    def test_reload_round_trip_preserves_texture(self, tmp_path):
        rng = np.random.default_rng(9)
        model, mesh, record, _ = self.make_parts(k=1)
        # uint8-representable linear colors survive the sRGB PNG round trip
        linear = srgb_to_linear(rng.integers(0, 256, size=(8, 8, 3)) / 255.0)
        export = build_export(mesh, model, record, [linear.astype(np.float32)])
        export = write_export(export, str(tmp_path / "round"))

        loaded = load_textured_mesh(export.files["obj"])
        assert not loaded.untextured
        assert np.abs(loaded.texture - np.flipud(linear)).max() <= 1e-6

        # texel-center lookups through the loader convention agree too
        uv = (texel_center_uvs(8) + UV_WINDOW) / (2 * UV_WINDOW)
        sampled = bilinear_sample(loaded.texture, uv)
        assert np.abs(sampled - linear.reshape(-1, 3)).max() <= 1e-6


class TestTransfer:
    def test_donor_count_must_match(self):
        rng = np.random.default_rng(1)
        model = AuvModel(tiny_config(k=2), seed=0)
        record = model.encoder_forward(rng.random((4, 8, 8, 8)).astype(np.float32))
        textures = [rng.random((8, 8, 3)).astype(np.float32) for _ in range(2)]
        export = build_export(quad_mesh(), model, record, textures)
        with pytest.raises(ValueError, match="donor"):
            transfer_texture(export, textures[:1])

    def test_swap_replaces_rasters_and_shares_geometry(self):
        rng = np.random.default_rng(1)
        model = AuvModel(tiny_config(k=2), seed=0)
        record = model.encoder_forward(rng.random((4, 8, 8, 8)).astype(np.float32))
        mine = [rng.random((8, 8, 3)).astype(np.float32) for _ in range(2)]
        donor = [rng.random((8, 8, 3)).astype(np.float32) for _ in range(2)]
        export = build_export(quad_mesh(), model, record, mine)

        swapped = transfer_texture(export, donor)
        for got, want in zip(swapped.textures, donor):
            assert np.array_equal(got, want)
        assert swapped.vertices is export.vertices
        assert swapped.triangles is export.triangles
        assert swapped.uvs is export.uvs
        assert swapped.face_tex is export.face_tex
        assert swapped.seam_face_count == export.seam_face_count

        # swapping back restores the original rasters bitwise
        restored = transfer_texture(swapped, mine)
        for got, want in zip(restored.textures, export.textures):
            assert np.array_equal(got, want)

    def test_accepts_texture_images_as_donors(self):
        rng = np.random.default_rng(4)
        model = AuvModel(tiny_config(k=1), seed=0)
        record = model.encoder_forward(rng.random((4, 8, 8, 8)).astype(np.float32))
        export = build_export(quad_mesh(), model, record,
                              [rng.random((8, 8, 3)).astype(np.float32)])
        donor = TextureImage(raster=rng.random((8, 8, 3)).astype(np.float32),
                             counts=np.ones((8, 8), dtype=np.int64))
        swapped = transfer_texture(export, [donor])
        assert np.array_equal(swapped.textures[0], donor.raster)


class TestSharedTexelDisagreement:
    def test_no_overlap_returns_zero(self):
        a = TextureImage(raster=np.zeros((4, 4, 3), dtype=np.float32),
                         counts=np.zeros((4, 4), dtype=np.int64))
        b = TextureImage(raster=np.zeros((4, 4, 3), dtype=np.float32),
                         counts=np.ones((4, 4), dtype=np.int64))
        assert shared_texel_disagreement(a, b) == (0, 0.0)

    def test_overlap_mean_is_exact(self):
        raster_a = np.zeros((4, 4, 3), dtype=np.float32)
        raster_b = np.zeros((4, 4, 3), dtype=np.float32)
        counts_a = np.zeros((4, 4), dtype=np.int64)
        counts_b = np.zeros((4, 4), dtype=np.int64)
        counts_a[0, 0] = counts_a[1, 1] = counts_a[2, 2] = 1
        counts_b[1, 1] = counts_b[2, 2] = counts_b[3, 3] = 1
        raster_a[1, 1] = 0.5
        raster_b[2, 2] = 0.25
        count, mean = shared_texel_disagreement(
            TextureImage(raster_a, counts_a), TextureImage(raster_b, counts_b))
        assert count == 2
        assert mean == pytest.approx((0.5 * 3 + 0.25 * 3) / 6)
