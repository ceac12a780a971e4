"""Tests for headless report figures: files exist and inputs validate."""

import numpy as np
import pytest
from PIL import Image

from uvalign.baker import TextureImage
from uvalign.figures import (
    save_basis_grid, save_iou_bars, save_loss_curves, save_texture_preview,
    save_uv_scatter,
)
from uvalign.networks import AuvModel, ModelConfig


def is_png(path):
    with Image.open(path) as img:
        return img.format == "PNG" and img.size[0] > 0


class TestLossCurves:
    def make_rows(self):
        rows = []
        for e in range(1, 9):
            stage = 1 if e <= 4 else 2
            rows.append({"epoch": e, "stage": stage, "L_c": 1.0 / e,
                         "L_n": 0.5 / e, "L_x": 2.0 / e, "L_s": 0.1 / e,
                         "L_p": 1.0 / e if e <= 2 else None,
                         "total": 4.0 / e})
        return rows

    def test_writes_png(self, tmp_path):
        path = str(tmp_path / "losses.png")
        assert save_loss_curves(self.make_rows(), path) == path
        assert is_png(path)

    def test_all_none_column_is_skipped(self, tmp_path):
        rows = [{"epoch": e, "stage": 1, "L_c": 1.0, "L_n": None, "L_x": 1.0,
                 "L_s": 1.0, "L_p": None, "total": 3.0} for e in range(1, 4)]
        path = save_loss_curves(rows, str(tmp_path / "gaps.png"))
        assert is_png(path)

    def test_empty_rows_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no metric rows"):
            save_loss_curves([], str(tmp_path / "none.png"))

    def test_creates_missing_directory(self, tmp_path):
        path = str(tmp_path / "deep" / "dir" / "losses.png")
        save_loss_curves(self.make_rows(), path)
        assert is_png(path)


class TestUvScatter:
    def test_writes_png_with_named_groups(self, tmp_path):
        rng = np.random.default_rng(0)
        groups = [rng.uniform(-0.5, 0.5, (30, 2)) for _ in range(3)]
        path = save_uv_scatter(groups, str(tmp_path / "uv.png"),
                               group_names=["eye_l", "eye_r", "mouth"])
        assert is_png(path)

    def test_empty_groups_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no point groups"):
            save_uv_scatter([], str(tmp_path / "uv.png"))


class TestIouBars:
    def test_writes_png(self, tmp_path):
        path = save_iou_bars([0.9, 0.8, np.nan], ["face", "scalp", "neck"],
                             str(tmp_path / "iou.png"))
        assert is_png(path)

    def test_name_count_mismatch_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="scores"):
            save_iou_bars([0.9], ["a", "b"], str(tmp_path / "iou.png"))


class TestBasisGrid:
    def test_writes_png_for_each_generator(self, tmp_path):
        config = ModelConfig(
            kind="3d", basis_channels=(6, 3), basis_width=16, basis_depth=2,
            code_dim=8, out_channels=9, mapper_width=16, mapper_depth=2,
            masker_width=16, masker_depth=2, encoder_channels=(4, 8),
            resolution=8, in_channels=4)
        model = AuvModel(config, seed=0)
        for gen in range(2):
            path = save_basis_grid(model, gen, str(tmp_path / f"basis{gen}.png"),
                                   resolution=16)
            assert is_png(path)


class TestTexturePreview:
    def test_writes_png(self, tmp_path):
        rng = np.random.default_rng(1)
        textures = [
            TextureImage(raster=rng.random((8, 8, 3)).astype(np.float32),
                         counts=rng.integers(0, 2, (8, 8)).astype(np.int64))
            for _ in range(2)]
        path = save_texture_preview(textures, str(tmp_path / "tex.png"))
        assert is_png(path)

    def test_empty_list_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no textures"):
            save_texture_preview([], str(tmp_path / "tex.png"))
