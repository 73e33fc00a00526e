"""Command-line front end: curate, featurize, train, predict, evaluate, ablate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ablation, evaluation
from .config import ConfigError, PipelineConfig, load_config
from .curation import (Manifest, ManifestEntry, ManifestError, chip, filter_by_hlf, hlf, read_manifest,
                       split_train_val, write_manifest)
from .features import CompositeSpec, assemble_composite, hist_equalize
from .network import ConfigError as ModelConfigError
from .network import WeightFileError, build_model, load_checkpoint, load_pretrained_encoder, save_checkpoint
from .raster import RasterError, Tile, load_mask, load_tile, save_raster
from .training import NonFiniteLossError, TileSet, predict_proba, prepare_images, train, write_history_csv

log = logging.getLogger("geoseg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
IMAGE_SUFFIXES = (".png", ".tif", ".tiff")
COMPOSITE_SUFFIXES = ("_cb0", "_cb1", "_cb2")


class DataError(Exception):
    pass


def _images_in(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def _read_sources(path: Path) -> dict[str, tuple[float, str]]:
    out = {}
    if not path.is_file():
        return out
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out[row["stem"]] = (float(row.get("gsd") or 1.0), row.get("source_id") or row["stem"])
    return out


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "composite", None):
        cfg = replace(cfg, composite=CompositeSpec(args.composite))
    if getattr(args, "threshold", None) is not None:
        cfg = replace(cfg, evaluation=replace(cfg.evaluation, threshold=args.threshold))
    return cfg


# -- curate ------------------------------------------------------------------


def cmd_curate(args) -> int:
    cfg = _config(args)
    cc = cfg.curation
    src = Path(args.input_dir)
    img_dir, mask_dir = src / "images", src / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"{src} must contain images/ and masks/ directories")
    out = Path(args.out_dir)
    (out / "tiles").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    sources = _read_sources(src / "sources.csv")

    pairs, total = [], 0
    for ip in _images_in(img_dir):
        mp = next((mask_dir / (ip.stem + s) for s in IMAGE_SUFFIXES if (mask_dir / (ip.stem + s)).is_file()), None)
        if mp is None:
            raise DataError(f"no mask for image {ip.name}")
        gsd, sid = sources.get(ip.stem, (1.0, ip.stem))
        image = load_tile(ip, 3, gsd=gsd, source_id=sid)
        chips = chip(image, load_mask(mp), cc.tile_size)
        total += len(chips)
        pairs += [(ip.stem, t, m) for t, m in chips]
    kept = [p for p in pairs if hlf(p[2]) >= cc.hlf_threshold]
    print(f"chipped {total} tiles; kept {len(kept)}, dropped {total - len(kept)} (HLF < {cc.hlf_threshold})")
    if not kept:
        raise DataError("no tiles passed the HLF filter")
    train_i, val_i = split_train_val(range(len(kept)), cc.split_ratio, cc.seed)
    tags = {i: "train" for i in train_i} | {i: "val" for i in val_i}
    m = Manifest(seed=cc.seed, meta={"tile_size": str(cc.tile_size), "hlf": repr(cc.hlf_threshold)})
    for i, (stem, tile, mask) in enumerate(kept):
        name = f"{stem}_{tile.origin[0]:05d}_{tile.origin[1]:05d}.png"
        save_raster(tile, out / "tiles" / name)
        save_raster(mask, out / "masks" / name)
        m.entries.append(ManifestEntry(f"tiles/{name}", f"masks/{name}", tile.gsd, tile.source_id,
                                       tags[i]))
    write_manifest(m, out / "manifest.tsv")
    print(f"train {len(train_i)}, val {len(val_i)} -> {out / 'manifest.tsv'}")
    return EXIT_OK


# -- featurize ---------------------------------------------------------------


def cmd_featurize(args) -> int:
    cfg = _config(args)
    spec = cfg.composite
    path = Path(args.manifest)
    m = read_manifest(path)
    new = []
    for e in m.entries:
        tile_path = m.resolve(e.tile_path)
        rel = Path(e.tile_path)
        comp_rel = rel.with_name(f"{rel.stem}_{spec.kind}.png")
        comp_path = m.resolve(str(comp_rel))
        if spec.kind == "cb0":
            shutil.copyfile(tile_path, comp_path)
        else:
            tile = load_tile(tile_path, 3, gsd=e.gsd, source_id=e.source_id)
            save_raster(assemble_composite(tile, spec, cfg.mbi), comp_path, value_range=(0.0, 255.0))
        new.append(replace(e, composite_path=comp_rel.as_posix()))
    m.entries = new
    m.meta = {**m.meta, "composite": spec.kind, "norm": "per-image"}
    write_manifest(m, args.out_manifest or path)
    print(f"wrote {len(new)} {spec.kind} composites")
    return EXIT_OK


# -- train -------------------------------------------------------------------


def load_tileset(m: Manifest, split: str) -> TileSet:
    entries = m.split(split)
    if not entries:
        raise DataError(f"manifest has no {split!r} entries")
    imgs, masks, ids = [], [], []
    for e in entries:
        src = e.composite_path or e.tile_path
        imgs.append(load_tile(m.resolve(src), 3).to_array().transpose(2, 0, 1))
        masks.append(load_mask(m.resolve(e.mask_path)).data)
        ids.append(Path(e.tile_path).stem)
    return TileSet(prepare_images(np.stack(imgs)), np.stack(masks), ids)


def cmd_train(args) -> int:
    cfg = _config(args)
    cfg.validate(for_training=True)
    m = read_manifest(args.manifest)
    ts = int(m.meta.get("tile_size", cfg.curation.tile_size))
    if ts != cfg.curation.tile_size:
        raise DataError(f"manifest tiles are {ts} px but the config expects {cfg.curation.tile_size}")
    train_set, val_set = load_tileset(m, "train"), load_tileset(m, "val")
    model = build_model(cfg.model)
    if args.pretrained:
        load_pretrained_encoder(model, args.pretrained)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, history = train(model, train_set, val_set, cfg.train, cfg.schedule, cfg.loss)
    best = min(history, key=lambda r: r.val_loss)
    save_checkpoint(model, out / "checkpoint.gst", epoch=best.epoch, best_val_loss=best.val_loss,
                    seed=cfg.seed, composite=m.meta.get("composite", "cb0"))
    write_history_csv(history, out / "history.csv")
    print(f"best epoch {best.epoch}: val loss {best.val_loss:.6f}, IoU {best.val_iou:.4f}")
    return EXIT_OK


# -- predict -----------------------------------------------------------------


def cmd_predict(args) -> int:
    cfg = _config(args)
    model, meta = load_checkpoint(args.checkpoint)
    kind = args.composite or meta.get("composite", "cb0")
    spec = CompositeSpec(kind)
    paths = []
    for t in args.tiles:
        p = Path(t)
        if p.is_dir():
            # featurize writes composites next to the tiles; predict from the raw tiles only
            paths += [q for q in _images_in(p) if not q.stem.endswith(COMPOSITE_SUFFIXES)]
        else:
            paths.append(p)
    if not paths:
        raise DataError("no input tiles")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = model.cfg.input_size
    for p in paths:
        tile = load_tile(p, 3)
        if tile.shape != (h, w):
            raise DataError(f"{p.name}: tile is {tile.shape}, model expects {(h, w)}")
        if args.equalize:
            tile = hist_equalize(tile)
        comp = assemble_composite(tile, spec, cfg.mbi)
        x = prepare_images(comp.to_array().transpose(2, 0, 1)[None])
        prob = predict_proba(model, x)[0].astype(np.float64)
        save_raster(prob, out / f"{p.stem}_prob.png", value_range=(0.0, 1.0))
        save_raster(evaluation.binarize(prob, cfg.evaluation.threshold), out / f"{p.stem}_mask.png")
    print(f"predicted {len(paths)} tiles -> {out}")
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------


def _index(d: Path, preds: bool = False) -> dict[str, Path]:
    """id -> file; in a prediction dir ``<id>_mask`` wins and ``<id>_prob`` is skipped."""
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    out: dict[str, Path] = {}
    for p in _images_in(d):
        stem = p.stem
        if preds and stem.endswith("_prob"):
            continue
        if preds and stem.endswith("_mask"):
            out[stem[:-5]] = p
        else:
            out.setdefault(stem, p)
    return out


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    preds = _index(Path(args.pred_dir), preds=True)
    gts = _index(Path(args.gt_dir))
    if not preds:
        raise DataError(f"no predictions in {args.pred_dir}")
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise DataError(f"no ground truth for: {', '.join(missing)}")
    groups = {}
    if args.groups:
        with open(args.groups, newline="", encoding="utf-8") as f:
            groups = {r["id"]: r["group"] for r in csv.DictReader(f)}
    out = Path(args.out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    rows, per_group = [], []
    for ident in sorted(preds):
        pred, gt = load_mask(preds[ident]), load_mask(gts[ident])
        c = evaluation.confusion(pred, gt)
        r = evaluation.metrics(c)
        g = groups.get(ident, "all")
        rows.append(evaluation.metric_row(ident, g, c, r))
        per_group.append((g, c))
        save_raster(evaluation.confusion_map(pred, gt), out / "maps" / f"{ident}_map.png")
    evaluation.write_metrics_csv(out / "metrics.csv", rows)
    mode = cfg.evaluation.aggregate
    agg = evaluation.aggregate(per_group, mode)
    summed = {}
    for g, c in per_group:
        summed[g] = summed.get(g, evaluation.ConfusionCounts()) + c
    evaluation.write_metrics_csv(out / "group_metrics.csv",
                                 [evaluation.metric_row(mode, g, summed[g], rep) for g, rep in agg.items()])
    for g, rep in agg.items():
        print(f"{g}: accuracy {rep.accuracy:.3f}  F1 {rep.f1:.3f}  IoU {100 * rep.iou:.1f}%")
    return EXIT_OK


# -- ablate ------------------------------------------------------------------


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.which in ("loss", "all"):
        res = ablation.loss_ablation(steps=args.steps, seed=cfg.seed)
        ablation.write_loss_ablation_csv(res, out / "loss_ablation.csv")
        for k, r in res.items():
            print(f"loss {k}: mean IoU {r.mean_iou:.4f}, L-shape IoU {r.ious[-1]:.4f}")
    if args.which in ("policy", "all"):
        conv, prop, match = ablation.policy_ablation(seed=cfg.seed)
        ablation.write_policy_ablation_csv(conv, prop, out / "policy_ablation.csv")
        print(f"conventional final val loss {conv.val_losses[-1]:.4f} after {len(conv.history)} epochs; "
              f"proposed reaches it at epoch {match}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default=".")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="geoseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("curate", parents=[common], help="chip, HLF-filter and split image/mask pairs")
    s.add_argument("input_dir")
    s.set_defaults(func=cmd_curate)

    s = sub.add_parser("featurize", parents=[common], help="write CB0/CB1/CB2 composites for a manifest")
    s.add_argument("manifest")
    s.add_argument("--composite", choices=("cb0", "cb1", "cb2"))
    s.add_argument("--out-manifest")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", parents=[common], help="train the Res-U-Net on a manifest")
    s.add_argument("manifest")
    s.add_argument("--pretrained", help="encoder weight archive to initialise from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="predict building maps for tiles")
    s.add_argument("checkpoint")
    s.add_argument("tiles", nargs="+")
    s.add_argument("--composite", choices=("cb0", "cb1", "cb2"))
    s.add_argument("--equalize", action="store_true")
    s.add_argument("--threshold", type=float)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="score predicted masks against ground truth")
    s.add_argument("pred_dir")
    s.add_argument("gt_dir")
    s.add_argument("--groups", help="CSV with columns id,group")
    s.add_argument("--threshold", type=float)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", parents=[common], help="desk-scale loss and training-policy ablations")
    s.add_argument("--which", choices=("loss", "policy", "all"), default="all")
    s.add_argument("--steps", type=int, default=200)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ModelConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, RasterError, ManifestError, WeightFileError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
