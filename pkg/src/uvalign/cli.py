"""Command-line pipeline: generate data, preprocess, train, bake, evaluate.

Every subcommand validates its inputs before touching any output path,
writes files atomically, and is idempotent given identical inputs. Exit
codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .configs import (
    ConfigError, desk_model_config, full_model_config, load_run_config,
    toy_model_config,
)
from .geometry import MeshError, load_textured_mesh, sample_surface, voxelize_colored
from .networks import AuvModel
from .trainer import (
    NumericalFailure, ShapeSample, TrainRun, fit_new_shape, stages_from_dicts,
    toy_sample, train, train_toy, write_metrics_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class DataError(ValueError):
    """A required input artifact is missing or malformed."""


def _write_json(path, payload):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _read_json(path, what):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"{what} not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} is not valid JSON: {path}: {exc}") from exc


def _load_model(path):
    if not os.path.exists(path):
        raise DataError(f"model checkpoint not found: {path}")
    return AuvModel.load(path)


# ---------------------------------------------------------------- data


def cmd_gen_data(args):
    from . import synthdata
    names = []
    if args.kind == "toy":
        items = synthdata.make_toy_dataset(args.n, seed=args.seed,
                                           size=args.size)
        for i, item in enumerate(items):
            name = f"toy_{i:03d}"
            synthdata.save_toy_item(item, os.path.join(args.out, name))
            names.append(name)
    else:
        for i in range(args.n):
            name = f"head_{i:03d}"
            head = synthdata.make_head_mesh(args.seed * 1_000_003 + i)
            synthdata.save_head(head, os.path.join(args.out, name))
            names.append(name)
    _write_json(os.path.join(args.out, "manifest.json"), {
        "kind": args.kind, "n": args.n, "seed": args.seed,
        "size": args.size, "names": names,
    })
    print(f"gen-data: wrote {len(names)} {args.kind} items to {args.out}")
    return EXIT_OK


def _discover_meshes(data_dir):
    """Item prefixes for every OBJ in the dir (manifest order if present)."""
    if not os.path.isdir(data_dir):
        raise DataError(f"data directory not found: {data_dir}")
    manifest_path = os.path.join(data_dir, "manifest.json")
    if os.path.exists(manifest_path):
        manifest = _read_json(manifest_path, "manifest")
        if manifest.get("kind") == "toy":
            raise ConfigError(
                "toy datasets need no preprocessing; point train-toy at the data directory")
        return [os.path.join(data_dir, n) for n in manifest["names"]]
    prefixes = sorted(
        os.path.join(data_dir, f[:-4])
        for f in os.listdir(data_dir) if f.endswith(".obj"))
    if not prefixes:
        raise DataError(f"no .obj meshes in {data_dir}")
    return prefixes


def cmd_preprocess(args):
    prefixes = _discover_meshes(args.data)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for i, prefix in enumerate(prefixes):
        name = os.path.basename(prefix)
        obj_path = f"{prefix}.obj"
        if not os.path.exists(obj_path):
            raise DataError(f"mesh not found: {obj_path}")
        mesh = load_textured_mesh(obj_path)
        sidecar = {}
        if os.path.exists(f"{prefix}.json"):
            sidecar = _read_json(f"{prefix}.json", "sidecar")
        labels = sidecar.get("vertex_labels")
        labels = None if labels is None else np.asarray(labels, dtype=np.int64)

        cloud = sample_surface(mesh, args.points, seed=args.seed + i,
                               vertex_labels=labels)
        vox = voxelize_colored(cloud, args.voxels)

        arrays = {
            "points": cloud.positions.astype(np.float32),
            "normals": cloud.normals.astype(np.float32),
            "grid": vox.data.astype(np.float32),
        }
        if cloud.has_color:
            arrays["colors"] = cloud.colors.astype(np.float32)
        if cloud.labels is not None:
            arrays["labels"] = cloud.labels.astype(np.float32)
        if "landmarks" in sidecar:
            arrays["landmarks"] = np.asarray(sidecar["landmarks"], dtype=np.float32)
        out_path = os.path.join(args.out, f"{name}.pre.auvn")
        save_checkpoint(out_path, arrays, config={
            "name": name, "has_color": bool(cloud.has_color),
            "points": int(args.points), "voxel_resolution": int(args.voxels),
            "seed": int(args.seed + i), "mesh": os.path.abspath(obj_path),
        })
        written.append(out_path)
    print(f"preprocess: wrote {len(written)} shapes to {args.out}")
    return EXIT_OK


def _load_pre_shape(path):
    """(ShapeSample, preprocess config) from one .pre.auvn file."""
    arrays, config = load_checkpoint(path)
    if config is None or "name" not in config:
        raise DataError(f"{path}: missing preprocess config entry")
    for key in ("points", "normals", "grid"):
        if key not in arrays:
            raise DataError(f"{path}: missing array {key!r}")
    labels = arrays.get("labels")
    landmarks = arrays.get("landmarks")
    sample = ShapeSample(
        name=config["name"],
        grid=arrays["grid"],
        points=arrays["points"].astype(np.float64),
        colors=(arrays["colors"].astype(np.float64)
                if config.get("has_color") and "colors" in arrays else None),
        normals=arrays["normals"].astype(np.float64),
        labels=None if labels is None else np.rint(labels).astype(np.int64),
        landmarks=None if landmarks is None else landmarks.astype(np.float64),
    )
    return sample, config


def _sample_from_checkpoint(path):
    return _load_pre_shape(path)[0]


def _load_pre_samples(data_dir, limit=None):
    if not os.path.isdir(data_dir):
        raise DataError(f"data directory not found: {data_dir}")
    paths = sorted(
        os.path.join(data_dir, f)
        for f in os.listdir(data_dir) if f.endswith(".pre.auvn"))
    if not paths:
        raise DataError(f"no preprocessed shapes (*.pre.auvn) in {data_dir}")
    if limit is not None:
        paths = paths[:limit]
    return [_sample_from_checkpoint(p) for p in paths]


def _load_toy_samples(data_dir, limit=None):
    from .synthdata import load_toy_item
    if not os.path.isdir(data_dir):
        raise DataError(f"data directory not found: {data_dir}")
    prefixes = sorted(
        os.path.join(data_dir, f[:-5])
        for f in os.listdir(data_dir)
        if f.endswith(".json") and f != "manifest.json")
    prefixes = [p for p in prefixes if os.path.exists(f"{p}.png")]
    if not prefixes:
        raise DataError(f"no toy items (*.png + *.json) in {data_dir}")
    if limit is not None:
        prefixes = prefixes[:limit]
    return [toy_sample(load_toy_item(p), name=os.path.basename(p))
            for p in prefixes]


# ---------------------------------------------------------------- train


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out_dir"] = args.out
    if args.epoch_scale is not None:
        cfg["epoch_scale"] = args.epoch_scale
    if "out_dir" not in cfg:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    if "data_dir" not in cfg:
        raise ConfigError("no data directory: set data_dir in the config")
    return cfg


def _train_common(cfg, samples, model):
    stages = stages_from_dicts(cfg["stages"], cfg["epoch_scale"])
    run = TrainRun(
        model=model, samples=samples, stages=stages, seed=cfg["seed"],
        category=cfg["category"], learning_rate=cfg["learning_rate"],
        clip_norm=cfg["clip_norm"], smooth_subset=cfg["smooth_subset"],
        sigma=cfg["sigma"], out_dir=cfg["out_dir"],
    )
    if cfg["category"] == "toy":
        metrics = train_toy(run)
    else:
        metrics = train(run)

    out_dir = cfg["out_dir"]
    model.save(os.path.join(out_dir, "model.auvn"),
               extra_config={"category": cfg["category"], "seed": cfg["seed"]})
    write_metrics_csv(metrics, os.path.join(out_dir, "metrics.csv"))
    from .figures import save_loss_curves
    save_loss_curves(metrics, os.path.join(out_dir, "losses.png"))
    _write_json(os.path.join(out_dir, "report.json"), {
        "category": cfg["category"], "seed": cfg["seed"],
        "epochs_run": len(metrics), "n_shapes": len(samples),
        "final_total": metrics[-1]["total"] if metrics else None,
    })
    print(f"train: {len(metrics)} epochs over {len(samples)} shapes -> {out_dir}")
    return EXIT_OK


def cmd_train(args):
    cfg = _apply_overrides(load_run_config(args.config), args)
    if cfg["category"] == "toy":
        raise ConfigError("category 'toy' trains with the train-toy subcommand")
    samples = _load_pre_samples(cfg["data_dir"], cfg.get("n_shapes"))
    maker = desk_model_config if cfg["scale"] == "desk" else full_model_config
    overrides = dict(cfg.get("model", {}))
    overrides.setdefault("resolution", cfg["voxel_resolution"])
    model = AuvModel(maker(cfg["category"], **overrides), seed=cfg["seed"])
    return _train_common(cfg, samples, model)


def cmd_train_toy(args):
    cfg = _apply_overrides(load_run_config(args.config), args)
    if cfg["category"] != "toy":
        raise ConfigError("train-toy requires category 'toy'")
    samples = _load_toy_samples(cfg["data_dir"], cfg.get("n_shapes"))
    size = samples[0].grid.shape[1]
    overrides = dict(cfg.get("model", {}))
    n_basis = overrides.pop("n_basis", 128)
    model = AuvModel(toy_model_config(n_basis=n_basis, size=size, **overrides),
                     seed=cfg["seed"])
    return _train_common(cfg, samples, model)


# ----------------------------------------------------------------- bake


def cmd_bake(args):
    from .baker import TextureImage, bake_texture, build_export, forward_shape, write_export
    from .figures import save_texture_preview
    from .inpaint import inpaint_fmm

    model, _, _ = _load_model(args.model)
    pre_path = os.path.join(args.data, f"{args.shape}.pre.auvn")
    if not os.path.exists(pre_path):
        raise DataError(f"preprocessed shape not found: {pre_path}")
    sample, pre_config = _load_pre_shape(pre_path)
    obj_path = args.mesh or pre_config.get("mesh") or os.path.join(
        args.data, f"{args.shape}.obj")
    if not os.path.exists(obj_path):
        raise DataError(f"mesh not found: {obj_path}")
    mesh = load_textured_mesh(obj_path)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        baked = bake_texture(model, sample, resolution=args.resolution)
    for w in caught:
        print(f"bake: {w.message}", file=sys.stderr)

    filled = []
    for tex in baked:
        if tex.validity.any() and not tex.validity.all():
            raster = inpaint_fmm(tex.raster, tex.validity, radius=args.radius)
        else:
            raster = tex.raster
        filled.append(TextureImage(raster=raster.astype(np.float32),
                                   counts=tex.counts))

    _, _, record = forward_shape(model, sample.grid, sample.points,
                                 sample.normals)
    export = build_export(mesh, model, record, filled)
    export = write_export(export, args.out)
    save_texture_preview(filled, f"{args.out}_preview.png")
    print(f"bake: wrote {export.files['obj']} "
          f"({export.seam_face_count} seam faces)")
    return EXIT_OK


def cmd_transfer(args):
    geo = _read_json(f"{args.geometry}.json", "geometry export sidecar")
    don = _read_json(f"{args.textures}.json", "texture export sidecar")
    if geo.get("k") != don.get("k"):
        raise DataError(
            f"texture count mismatch: geometry has K={geo.get('k')}, "
            f"textures have K={don.get('k')}")

    geo_dir = os.path.dirname(args.geometry) or "."
    don_dir = os.path.dirname(args.textures) or "."
    out_dir = os.path.dirname(args.out) or "."
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.basename(args.out)

    obj_src = os.path.join(geo_dir, geo["obj"])
    if not os.path.exists(obj_src):
        raise DataError(f"geometry OBJ not found: {obj_src}")
    obj_lines = []
    with open(obj_src, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("mtllib "):
                obj_lines.append(f"mtllib {base}.mtl\n")
            else:
                obj_lines.append(line)

    png_names = []
    for k, tex_name in enumerate(don["textures"]):
        src = os.path.join(don_dir, tex_name)
        if not os.path.exists(src):
            raise DataError(f"texture PNG not found: {src}")
        with open(src, "rb") as fh:
            blob = fh.read()
        dst = os.path.join(out_dir, f"{base}_tex{k}.png")
        tmp = f"{dst}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, dst)
        png_names.append(os.path.basename(dst))

    mtl_lines = []
    for k, name in enumerate(png_names):
        mtl_lines += [f"newmtl tex{k}", "Kd 1.0 1.0 1.0", f"map_Kd {name}", ""]
    mtl_path = os.path.join(out_dir, f"{base}.mtl")
    tmp = f"{mtl_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(mtl_lines))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, mtl_path)

    obj_path = os.path.join(out_dir, f"{base}.obj")
    tmp = f"{obj_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.writelines(obj_lines)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, obj_path)

    _write_json(os.path.join(out_dir, f"{base}.json"), {
        "resolution": don["resolution"], "uv_window": geo["uv_window"],
        "k": geo["k"], "seam_face_count": geo["seam_face_count"],
        "obj": f"{base}.obj", "mtl": f"{base}.mtl", "textures": png_names,
        "base": base, "geometry_from": geo["base"], "textures_from": don["base"],
    })
    print(f"transfer: {geo['base']} geometry + {don['base']} textures -> {obj_path}")
    return EXIT_OK


def cmd_fit_new(args):
    model, config, _ = _load_model(args.model)
    pre_path = os.path.join(args.data, f"{args.shape}.pre.auvn")
    if not os.path.exists(pre_path):
        raise DataError(f"preprocessed shape not found: {pre_path}")
    sample = _sample_from_checkpoint(pre_path)
    category = args.category or config.get("category")
    if not category or category == "toy":
        raise ConfigError("fit-new needs a 3D category (pass --category)")

    result = fit_new_shape(
        model, sample, category, epochs=args.epochs,
        duplicates=args.duplicates, epoch_scale=args.epoch_scale,
        seed=args.seed if args.seed is not None else 0)

    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "fitted.auvn"),
               extra_config={"category": category, "fitted_shape": sample.name})
    write_metrics_csv(result.metrics, os.path.join(args.out, "fit_metrics.csv"))
    _write_json(os.path.join(args.out, "fit_report.json"), {
        "shape": sample.name, "category": category,
        "epochs_run": len(result.metrics),
        "basis_frozen": bool(result.basis_frozen),
        "basis_hash": result.basis_hashes[0],
        "untextured": sample.colors is None,
    })
    print(f"fit-new: {sample.name} fitted; basis_frozen={result.basis_frozen}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def cmd_eval_seg(args):
    from .evaluate import iou, one_shot_segmentation
    from .figures import save_iou_bars
    from .synthdata import LABEL_NAMES

    model, _, _ = _load_model(args.model)
    samples = _load_pre_samples(args.data)
    labeled = [s for s in samples if s.labels is not None]
    by_name = {s.name: s for s in labeled}
    if args.reference not in by_name:
        raise DataError(
            f"reference shape {args.reference!r} not found among labeled "
            f"shapes: {sorted(by_name)}")
    reference = by_name[args.reference]
    targets = [s for s in labeled if s.name != reference.name]
    if not targets:
        raise DataError("no labeled target shapes besides the reference")

    n_classes = len(LABEL_NAMES)
    preds = one_shot_segmentation(model, reference, targets, n_classes,
                                  resolution=args.resolution)
    per_shape = {}
    all_pred, all_true = [], []
    for target, pred in zip(targets, preds):
        _, mean = iou(pred, target.labels, n_classes)
        per_shape[target.name] = mean
        all_pred.append(pred)
        all_true.append(target.labels)
    per_class, overall = iou(np.concatenate(all_pred),
                             np.concatenate(all_true), n_classes)

    out_dir = os.path.dirname(args.out) or "."
    _write_json(args.out, {
        "reference": reference.name, "n_targets": len(targets),
        "mean_iou": overall,
        "per_class": {name: (None if np.isnan(v) else float(v))
                      for name, v in zip(LABEL_NAMES, per_class)},
        "per_shape": per_shape,
    })
    save_iou_bars(per_class, list(LABEL_NAMES),
                  os.path.join(out_dir, "iou.png"))
    print(f"eval-seg: mean IOU {overall:.4f} over {len(targets)} shapes")
    return EXIT_OK


def cmd_eval_landmarks(args):
    from .evaluate import landmark_alignment, landmark_uvs
    from .figures import save_uv_scatter
    from .synthdata import LANDMARK_NAMES

    model, _, _ = _load_model(args.model)
    if model.config.kind == "2d":
        samples = _load_toy_samples(args.data)
    else:
        samples = _load_pre_samples(args.data)
    samples = [s for s in samples if s.landmarks is not None]
    if len(samples) < 2:
        raise DataError("need at least two shapes with landmarks")

    stats = landmark_alignment(model, samples)
    uvs = landmark_uvs(model, samples)
    names = list(LANDMARK_NAMES[:uvs.shape[1]])
    while len(names) < uvs.shape[1]:
        names.append(f"landmark_{len(names)}")

    out_dir = os.path.dirname(args.out) or "."
    _write_json(args.out, {
        "n_shapes": len(samples),
        "landmarks": names,
        "uv_mean": stats.uv_mean.tolist(),
        "uv_spread": stats.uv_spread.tolist(),
        "input_spread": stats.input_spread.tolist(),
        "ratio": [None if not np.isfinite(r) else float(r)
                  for r in stats.ratio],
    })
    save_uv_scatter([uvs[:, l, :] for l in range(uvs.shape[1])],
                    os.path.join(out_dir, "landmarks_uv.png"),
                    group_names=names)
    spread = ", ".join(f"{n}={s:.4f}" for n, s in zip(names, stats.uv_spread))
    print(f"eval-landmarks: UV spread {spread}")
    return EXIT_OK


def cmd_render_basis(args):
    from PIL import Image
    from .figures import save_basis_grid

    model, _, _ = _load_model(args.model)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for gen in range(model.config.k):
        raster = model.basis_raster(gen, resolution=args.grid)
        for c in range(raster.shape[2]):
            img = raster[:, :, c].astype(np.float64)
            span = img.max() - img.min()
            shown = (img - img.min()) / span if span > 0 else np.full_like(img, 0.5)
            img8 = np.clip(np.round(shown * 255.0), 0, 255).astype(np.uint8)
            path = os.path.join(args.out, f"gen{gen}_basis{c:03d}.png")
            tmp = f"{path}.tmp"
            Image.fromarray(img8, mode="L").save(tmp, format="PNG")
            os.replace(tmp, path)
            written.append(os.path.basename(path))
        save_basis_grid(model, gen, os.path.join(args.out, f"gen{gen}_montage.png"),
                        resolution=min(args.grid, 128))
    _write_json(os.path.join(args.out, "basis_manifest.json"), {
        "grid": args.grid, "k": model.config.k,
        "channels": list(model.config.basis_channels), "files": written,
    })
    print(f"render-basis: wrote {len(written)} rasters to {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(
        prog="uvalign",
        description="aligned UV texture spaces: data, training, baking, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--kind", choices=("toy", "heads"), required=True)
    p.add_argument("--n", type=int, required=True, help="number of items")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64, help="toy image side length")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", help="meshes -> sampled clouds + voxel grids")
    p.add_argument("--data", required=True, help="directory of OBJ items")
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=4096)
    p.add_argument("--voxels", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="multi-stage 3D training from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--epoch-scale", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-toy", help="2D image-alignment training")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--epoch-scale", type=float, default=None)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("bake", help="bake + inpaint textures, export OBJ/MTL/PNG")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--radius", type=int, default=5)
    p.add_argument("--mesh", default=None,
                   help="OBJ for export (default: path recorded at preprocess)")
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("transfer", help="swap textures between two exports")
    p.add_argument("--geometry", required=True, help="export prefix supplying geometry")
    p.add_argument("--textures", required=True, help="export prefix supplying textures")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("fit-new", help="fit one unseen shape, basis frozen")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--category", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--duplicates", type=int, default=100)
    p.add_argument("--epoch-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_fit_new)

    p = sub.add_parser("eval-seg", help="one-shot segmentation IOU report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--reference", required=True, help="labeled reference shape name")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("eval-landmarks", help="landmark UV concentration report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval_landmarks)

    p = sub.add_parser("render-basis", help="write each generator's basis rasters")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=256)
    p.set_defaults(func=cmd_render_basis)

    return parser


def main(argv=None) -> int:
    cap = os.environ.get("AUV_THREADS")
    if cap is not None and (not cap.isdigit() or int(cap) < 1):
        print(f"uvalign: AUV_THREADS must be a positive integer, got {cap!r}",
              file=sys.stderr)
        return EXIT_CONFIG

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"uvalign: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MeshError, CheckpointError, FileNotFoundError) as exc:
        print(f"uvalign: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"uvalign: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"uvalign: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
