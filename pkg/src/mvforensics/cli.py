"""Command-line entry point: ``mvforensics <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .errors import MvError

log = logging.getLogger("mvforensics")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolution(text: str) -> tuple[int, int]:
    from .evalkit import parse_resolution

    try:
        return parse_resolution(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _json_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"config {path} must hold a JSON object")
    return obj


def _map(args, fn, items):
    """Order-preserving parallel map over ``items`` with ``--threads`` workers."""
    if args.threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(args.threads) as pool:
        return list(pool.map(fn, items))


def _load_motion(path: Path, size: tuple[int, int] | None):
    """(fields, width, height) from a stream, an MV dump or a saved field directory."""
    from .bitparse import decode_stream
    from .ingest import fields_from_dump, read_mvdump
    from .motionfield import fields_from_report, load_fields

    if path.is_dir():
        return load_fields(path)
    if path.suffix == ".jsonl":
        if size is None:
            raise UsageError("--size WxH is required when reading an MV dump")
        return fields_from_dump(read_mvdump(path), *size), size[0], size[1]
    data = path.read_bytes()
    if not data:
        raise DataError("empty stream")
    report = decode_stream(data)
    for err in report.errors:
        log.warning("%s", err)
    if not report.pictures:
        raise DataError("no decodable pictures in stream")
    pic = report.pictures[0]
    return fields_from_report(report), pic.width, pic.height


# -- subcommands ----------------------------------------------------------------------------

def cmd_extract(args) -> None:
    from .bitparse import decode_stream
    from .ingest import dump_from_macroblocks, write_mvdump

    data = Path(args.stream).read_bytes()
    if not data:
        raise DataError("empty stream")
    report = decode_stream(data)
    for err in report.errors:
        log.warning("%s", err)
    if not report.pictures:
        raise DataError("no decodable pictures in stream")
    records = [dump_from_macroblocks(p.index, p.records) for p in report.pictures]
    write_mvdump(args.dump, records)
    types = "".join(p.frame_type for p in report.pictures)
    print(f"{len(report.pictures)} pictures ({types}), {sum(map(len, records))} blocks -> {args.dump}")


def cmd_rasterize(args) -> None:
    from .ingest import write_ppm
    from .motionfield import field_to_rgb, save_fields

    flds, w, h = _load_motion(Path(args.input), args.size)
    save_fields(args.out, flds, w, h)
    if args.viz:
        def viz(i):
            write_ppm(Path(args.out) / f"{i:06d}.ppm", field_to_rgb(flds[i][1])[:h, :w])
        _map(args, viz, range(len(flds)))
    print(f"{len(flds)} fields ({w}x{h}) -> {args.out}")


def cmd_preprocess(args) -> None:
    from .dataset import VideoDataset
    from .pipeline import AugmentationConfig

    aug = AugmentationConfig.from_dict(_json_file(args.augment)) if args.augment else None
    ds = VideoDataset.load(args.manifest, args.input_res)
    out = Path(args.out)
    jobs = []
    for v in ds.videos:
        for i in v.usable(args.modality):
            jobs.append((v, i))

    def work(job):
        v, i = job
        s = v.sample(i, args.modality, aug, args.seed)
        d = out / v.entry.video_id
        d.mkdir(parents=True, exist_ok=True)
        if isinstance(s, tuple):
            np.save(d / f"{i:06d}.rgb.npy", s[0].data)
            np.save(d / f"{i:06d}.motion.npy", s[1].data)
        else:
            np.save(d / f"{i:06d}.npy", s.data)

    _map(args, work, jobs)
    print(f"{len(jobs)} samples from {len(ds.videos)} videos -> {out}")


def _train_config(args):
    from .net import TrainConfig

    cfg = _json_file(args.config)
    known = {f.name for f in fields(TrainConfig)}
    extra = set(cfg) - known - {"augmentation"}
    if extra:
        raise DataError(f"unknown training config keys: {sorted(extra)}")
    aug = cfg.pop("augmentation", None)
    for key in ("epochs", "modality", "input_res", "lr", "batch_size"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    cfg["seed"] = args.seed
    try:
        return TrainConfig(**cfg), aug
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad training config: {exc}") from exc


def cmd_train(args) -> None:
    from .dataset import VideoDataset
    from .net import train
    from .pipeline import AugmentationConfig

    cfg, aug = _train_config(args)
    if args.augment:
        aug = _json_file(args.augment)
    augmentation = None if args.no_augment else AugmentationConfig.from_dict(aug or {})
    log.info("train config: %s", json.dumps(asdict(cfg), sort_keys=True))
    ds = VideoDataset.load(args.manifest, cfg.input_res)
    log_path = args.log or str(Path(args.out).with_suffix(".csv"))
    res = train(ds, cfg, augmentation, checkpoint=args.out, log_path=log_path)
    last = res.history[res.best_epoch - 1]
    print(f"best epoch {res.best_epoch}: val_loss {last.val_loss:.4f} val_acc {last.val_acc:.4f} "
          f"-> {args.out}")


def cmd_eval(args) -> None:
    from .dataset import VideoDataset
    from .evalkit import cross_forgery_eval
    from .net import load_checkpoint

    models = {}
    for item in args.checkpoint:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--checkpoint expects NAME=PATH, got {item!r}")
        models[name] = path
    res = args.input_res
    if res is None:
        _, _, meta = load_checkpoint(next(iter(models.values())))
        res = int(meta.get("input_res", 224))
    ds = VideoDataset.load(args.manifest, res)
    matrix = cross_forgery_eval(models, ds, seed=args.seed, k=args.k, title=args.title)
    md = matrix.render_markdown()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".csv").write_text(matrix.to_csv())
        out.with_suffix(".md").write_text(md)
    sys.stdout.write(md)


def cmd_epe(args) -> None:
    from .evalkit import epe_mv_pipeline, write_epe_csv
    from .ingest import read_flo

    flds, _, _ = _load_motion(Path(args.fields), args.size)
    flo = sorted(Path(args.flo_dir).glob("*.flo"))
    if not flo:
        raise DataError(f"no .flo files in {args.flo_dir}")
    gts = [read_flo(p) for p in flo]
    reports = epe_mv_pipeline(flds, gts, tuple(args.downscale), args.method, args.temporal_scale)
    if args.out:
        write_epe_csv(args.out, reports)
    for r in reports:
        print(f"{r.method} 1/{r.downscale}: EPE {r.mean_epe:.4f} px over {r.frames} P frames")


def cmd_cost(args) -> None:
    from .evalkit import COST_CONVENTION, REFERENCE_RESOLUTIONS, flop_cost, render_cost_table

    res = args.resolutions or list(REFERENCE_RESOLUTIONS)
    table = render_cost_table([flop_cost(w, h) for w, h in res])
    print(f"convention: {COST_CONVENTION}")
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(f"convention: {COST_CONVENTION}\n\n{table}")


def cmd_synth(args) -> None:
    from .evalkit import SynthConfig, synth_dataset

    cfg = _json_file(args.config)
    cfg["seed"] = args.seed
    manifest = synth_dataset(SynthConfig.from_dict(cfg), args.out)
    print(f"{len(manifest.entries)} clips -> {Path(args.out) / 'manifest.jsonl'}")


def cmd_augment_preview(args) -> None:
    from .ingest import FaceBox, box_for_frame, read_boxes, read_frames, write_ppm
    from .motionfield import flow_to_rgb
    from .pipeline import (AugmentationConfig, base_stack, frame_rng, geometric_augment,
                           rgb_augment, square_pad)

    aug = AugmentationConfig.from_dict(_json_file(args.config))
    frames = read_frames(args.frames, [args.index])
    frame = frames[0]
    h, w = frame.shape[:2]
    box = box_for_frame(read_boxes(args.boxes), args.index) if args.boxes else FaceBox(args.index, 0, 0, w, h)
    box = square_pad(box, w, h)
    fld = None
    if args.motion:
        flds, _, _ = _load_motion(Path(args.motion), args.size or (w, h))
        if args.index >= len(flds):
            raise DataError(f"motion source has no frame {args.index}")
        fld = flds[args.index][1]
    before = base_stack(frame, fld, box, args.input_res)
    rng = frame_rng(args.seed, args.index)
    after = geometric_augment(rgb_augment(before, aug, rng), aug, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tag, s in (("before", before), ("after", after)):
        write_ppm(out / f"{tag}_rgb.ppm", np.moveaxis(s.data[0:3], 0, -1))
        if fld is not None:
            top = float(np.abs(before.data[3:5]).max()) or 1.0
            write_ppm(out / f"{tag}_mv.ppm", flow_to_rgb(s.data[3], s.data[4], top))
            write_ppm(out / f"{tag}_im.ppm", (s.data[7] * 255).astype(np.uint8))
    print(f"preview of frame {args.index} -> {out}")


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every randomized stage (default 0)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="workers for per-frame stages (default: all cores)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")

    p = _Parser(prog="mvforensics", description="Compressed-domain motion toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", parents=[common], help="parse an H.264 stream into an MV dump")
    s.add_argument("stream", help="Annex-B H.264 elementary stream (baseline, CAVLC)")
    s.add_argument("--dump", required=True, help="output MV dump (.jsonl)")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("rasterize", parents=[common], help="turn a stream or dump into motion fields")
    s.add_argument("input", help="H.264 stream, MV dump (.jsonl) or field directory")
    s.add_argument("--size", type=_resolution, help="frame size WxH (required for dumps)")
    s.add_argument("--out", required=True, help="output directory for fields")
    s.add_argument("--viz", action="store_true", help="also write colour-wheel PPMs of the past vectors")
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("preprocess", parents=[common], help="write classifier inputs for a manifest")
    s.add_argument("--manifest", required=True, help="dataset manifest (.jsonl)")
    s.add_argument("--out", required=True, help="output directory for .npy samples")
    s.add_argument("--modality", default="mv_im", choices=["rgb", "mv", "mv_p", "mv_im", "rgb+mv_im"])
    s.add_argument("--input-res", type=int, default=224, help="square input resolution (default 224)")
    s.add_argument("--augment", help="augmentation config (.json); omitted means no augmentation")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", parents=[common], help="train a classifier on a manifest")
    s.add_argument("--manifest", required=True, help="dataset manifest with train and val splits")
    s.add_argument("--config", help="training config (.json); keys of TrainConfig plus 'augmentation'")
    s.add_argument("--augment", help="augmentation config (.json), overrides the training config's")
    s.add_argument("--no-augment", action="store_true", help="train without augmentation")
    s.add_argument("--modality", choices=["rgb", "mv", "mv_p", "mv_im", "rgb+mv_im"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--input-res", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="training log CSV (default: checkpoint path with .csv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="cross-forgery accuracy matrix")
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint", action="append", required=True, metavar="NAME=PATH",
                   help="training set name (DF, F2F, FS, FSwap, NT or all) and its checkpoint")
    s.add_argument("--k", type=int, default=100, help="frames sampled per video (default 100)")
    s.add_argument("--input-res", type=int, help="default: the value stored in the first checkpoint")
    s.add_argument("--title", default="MV+IM", help="corner label of the rendered table")
    s.add_argument("--out", help="report path stem; writes .csv and .md")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("epe", parents=[common], help="end-point error of MV flow against .flo ground truth")
    s.add_argument("fields", help="H.264 stream, MV dump (.jsonl) or field directory")
    s.add_argument("--flo-dir", required=True, help="directory of .flo files; sorted file t is the flow t -> t+1")
    s.add_argument("--size", type=_resolution, help="frame size WxH (required for dumps)")
    s.add_argument("--downscale", type=int, nargs="+", default=[1, 4, 16], choices=[1, 4, 16])
    s.add_argument("--method", default="MV", help="method tag in the report")
    s.add_argument("--temporal-scale", action="store_true", help="divide vectors by reference distance")
    s.add_argument("--out", help="EPE report CSV")
    s.set_defaults(func=cmd_epe)

    s = sub.add_parser("cost", parents=[common], help="FLOP cost of the MV input transform")
    s.add_argument("--resolutions", type=_resolution, nargs="+",
                   help="WxH list (default: 480x360 640x480 1280x720 1920x1080)")
    s.add_argument("--out", help="also write the table here")
    s.set_defaults(func=cmd_cost)

    s = sub.add_parser("synth", parents=[common], help="generate the synthetic real/fake dataset")
    s.add_argument("--config", help="SynthConfig overrides (.json)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("augment-preview", parents=[common], help="before/after images of one augmented frame")
    s.add_argument("--frames", required=True, help="directory of %%06d.ppm frames")
    s.add_argument("--index", type=int, default=0, help="frame index (default 0)")
    s.add_argument("--boxes", help="face boxes (.jsonl); default: the whole frame")
    s.add_argument("--motion", help="stream, MV dump or field directory for the MV/IM previews")
    s.add_argument("--size", type=_resolution, help="frame size for MV dumps (default: the frame's)")
    s.add_argument("--config", help="augmentation config (.json)")
    s.add_argument("--input-res", type=int, default=224)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_augment_preview)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("resolved config: %s", json.dumps(resolved, default=str, sort_keys=True))
    try:
        args.func(args)
    except UsageError as exc:
        print(f"mvforensics {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MvError, OSError, ValueError) as exc:
        msg = exc.strerror + f": {exc.filename}" if isinstance(exc, OSError) and exc.strerror else str(exc)
        print(f"mvforensics {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
