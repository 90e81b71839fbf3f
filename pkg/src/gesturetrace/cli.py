"""Command-line entry point: simulate, track, featurize, dataset, train, eval, infer.

Exit status is 0 on success, 1 on usage errors and 2 on data or schema errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .core import ConfigError, GestureTraceError, SchemaError, SkeletonSpec
from .dataset import ClipDataset, split_recordings
from .features import BOX, MODES, MOTION, feature_names, featurize_detections
from .io import (PipelineConfig, histories_from_trace_stream, load_config, read_annotations,
                 read_detection_stream, read_jsonl, track_stream, write_annotations,
                 write_detection_stream, write_jsonl)
from .metrics import confusion_csv, format_report, metrics
from .network import (BOX_MODE, NET_MODES, NetConfig, init_network, load_model,
                      predict_proba_batched, save_model, train)
from .online import TriggerConfig, predict_stream
from .pipeline import build_dataset, recording_from_histories
from .synthetic import CorpusConfig, GestureScript, NoiseConfig, synth_corpus, synth_scene

log = logging.getLogger("gesturetrace")

DET_SUFFIX = ".det.jsonl"
TRACE_SUFFIX = ".trace.jsonl"
ANN_SUFFIX = ".ann.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _stem(path: Path, suffix: str) -> str:
    name = path.name
    return name[:-len(suffix)] if name.endswith(suffix) else path.stem


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _noise_from(d: dict, seed: int) -> NoiseConfig:
    return NoiseConfig(**{**d, "seed": seed})


def _script_from(d: dict) -> GestureScript:
    keys = {"class": "class_id", "src_id": "source_id"}
    kwargs = {keys.get(k, k): v for k, v in d.items()}
    if "base" in kwargs:
        kwargs["base"] = tuple(kwargs["base"])
    return GestureScript(**kwargs)


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    scene = json.loads(Path(args.scene).read_text(encoding="utf-8"))
    out = Path(args.out)
    try:
        if "corpus" in scene:
            c = dict(scene["corpus"])
            noise = NoiseConfig(**c.pop("noise", {})) if "noise" in c else CorpusConfig().noise
            corpus = CorpusConfig(**{**c, "seed": args.seed, "noise": noise})
            out.mkdir(parents=True, exist_ok=True)
            for rid, sc in synth_corpus(corpus, cfg.skeleton):
                write_detection_stream(out / f"{rid}{DET_SUFFIX}", sc.frames)
                write_annotations(out / f"{rid}{ANN_SUFFIX}", rid, len(sc.frames), sc.segments)
            return 0
        scripts = [_script_from(d) for d in scene["scripts"]]
        noise = _noise_from(scene.get("noise", {}), args.seed)
        sc = synth_scene(scripts, noise, scene.get("n_frames"), cfg.skeleton,
                         tuple(scene.get("image", (320, 240))))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{args.scene}: malformed scene config ({exc})") from exc
    rid = _stem(out, DET_SUFFIX if out.name.endswith(DET_SUFFIX) else out.suffix)
    write_detection_stream(out, sc.frames)
    ann = Path(args.annotations) if args.annotations else out.with_name(rid + ANN_SUFFIX)
    write_annotations(ann, rid, len(sc.frames), sc.segments)
    return 0


# ---------------------------------------------------------------------------
# track / featurize
# ---------------------------------------------------------------------------

def _track_file(src: Path, dst: Path, cfg: PipelineConfig) -> None:
    frames = read_detection_stream(src, cfg.skeleton)
    write_jsonl(dst, track_stream(frames, cfg.make_store()))


def cmd_track(args, cfg: PipelineConfig) -> int:
    src, dst = Path(args.input), Path(args.out)
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        for f in sorted(src.glob(f"*{DET_SUFFIX}")):
            _track_file(f, dst / f"{_stem(f, DET_SUFFIX)}{TRACE_SUFFIX}", cfg)
    else:
        _track_file(src, dst, cfg)
    return 0


def cmd_featurize(args, cfg: PipelineConfig) -> int:
    histories = histories_from_trace_stream(read_jsonl(args.input))
    names = feature_names(cfg.skeleton, args.mode)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["trace_id", "frame", *names])
        for tid, dets in histories.items():
            for run in featurize_detections(dets, cfg.skeleton, args.mode):
                for frame, row in zip(run.frame_indices, run.values):
                    writer.writerow([tid, int(frame), *(repr(float(v)) for v in row)])
    return 0


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

def _trace_files(inputs: list[str]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        files.extend(sorted(p.glob(f"*{TRACE_SUFFIX}")) if p.is_dir() else [p])
    if not files:
        raise SchemaError("no trace streams found")
    return files


def _load_recordings(args, cfg: PipelineConfig, mode: str):
    recs = []
    ann_dir = Path(args.annotations) if args.annotations else None
    for f in _trace_files(args.traces):
        rid = _stem(f, TRACE_SUFFIX)
        segments = []
        if ann_dir is not None:
            ann = ann_dir / f"{rid}{ANN_SUFFIX}" if ann_dir.is_dir() else ann_dir
            if ann.exists():
                _, segments = read_annotations(ann)
        histories = histories_from_trace_stream(read_jsonl(f))
        recs.append(recording_from_histories(rid, histories, segments, cfg.skeleton, mode))
    return recs


def cmd_dataset_build(args, cfg: PipelineConfig) -> int:
    aug = cfg.augmentation
    overrides = {k: getattr(args, k) for k in ("t_min", "delta_t", "t_obj", "stride")
                 if getattr(args, k) is not None}
    cfg = replace(cfg, augmentation=replace(aug, **overrides))
    recs = _load_recordings(args, cfg, args.mode)
    if args.test_out:
        train_ids, _ = split_recordings([r.recording_id for r in recs], args.ratio, args.seed)
        keep = set(train_ids)
        train_recs = [r for r in recs if r.recording_id in keep]
        test_recs = [r for r in recs if r.recording_id not in keep]
        build_dataset(test_recs, cfg, args.mode, augment=False).save(args.test_out)
    else:
        train_recs = recs
    build_dataset(train_recs, cfg, args.mode, augment=not args.no_augment).save(args.out)
    return 0


def cmd_dataset_inspect(args, cfg: PipelineConfig) -> int:
    ds = ClipDataset.load(args.path)
    print(f"mode      {ds.mode}")
    print(f"t_obj     {ds.t_obj}")
    print(f"width     {ds.width}")
    print(f"clips     {len(ds)}")
    for name, n in ds.class_counts().items():
        print(f"  {name:<14}{n:>8d}")
    return 0


# ---------------------------------------------------------------------------
# train / eval / infer
# ---------------------------------------------------------------------------

def _check_mode(net_mode: str, data_mode: str) -> None:
    if (net_mode == BOX_MODE) != (data_mode == BOX):
        raise SchemaError(f"network mode {net_mode!r} cannot read {data_mode!r} features")


def cmd_train(args, cfg: PipelineConfig) -> int:
    ts = cfg.train
    settings = {k: getattr(args, k) if getattr(args, k) is not None else getattr(ts, k)
                for k in ("lr", "hidden", "dropout", "epochs", "batch", "mode")}
    ds = ClipDataset.load(args.data)
    _check_mode(settings["mode"], ds.mode)
    if len(ds) == 0:
        raise SchemaError(f"{args.data}: empty dataset")
    net = NetConfig(input_width=ds.width,
                    velocity_width=ds.velocity_width if settings["mode"] == "two-branch" else 0,
                    hidden=settings["hidden"], classes=len(ds.labels),
                    dropout=settings["dropout"], mode=settings["mode"],
                    fc_hidden=ts.fc_hidden, layers=ts.layers)
    model = init_network(net, args.seed)
    val = ClipDataset.load(args.val) if args.val else None

    def report(rec):
        va = "" if rec.val_accuracy is None else f" val_acc={rec.val_accuracy:.4f}"
        log.info("epoch %d loss=%.5f train_acc=%.4f%s", rec.epoch, rec.loss,
                 rec.train_accuracy, va)

    model, history = train(model, ds.X, ds.y, epochs=settings["epochs"],
                           batch_size=settings["batch"], seed=args.seed, lr=settings["lr"],
                           X_val=None if val is None else val.X,
                           y_val=None if val is None else val.y, callback=report)
    extra = {"feature_mode": ds.mode, "t_obj": ds.t_obj, "skeleton": ds.skeleton.to_dict(),
             "labels": [{"id": lab.class_id, "name": lab.name} for lab in ds.labels],
             "train": settings}
    save_model(model, args.out, extra)
    Path(str(args.out) + ".history.json").write_text(
        json.dumps([asdict(h) for h in history], sort_keys=True, indent=1) + "\n",
        encoding="utf-8")
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    model, extra = load_model(args.model)
    ds = ClipDataset.load(args.data)
    if ds.width != model.config.input_width:
        raise SchemaError("dataset width does not match the model")
    pred = predict_proba_batched(model, ds.X).argmax(axis=1) if len(ds) else np.zeros(0, int)
    report = metrics(pred, ds.y, model.config.classes, [lab.name for lab in ds.labels])
    text = format_report(report)
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    Path(args.confusion).write_text(confusion_csv(report), encoding="utf-8")
    return 0


def cmd_infer(args, cfg: PipelineConfig) -> int:
    model, extra = load_model(args.model)
    skeleton = SkeletonSpec.from_dict(extra["skeleton"]) if "skeleton" in extra else cfg.skeleton
    frames = read_detection_stream(args.input, skeleton)
    tc = cfg.trigger
    trigger = TriggerConfig(
        args.threshold if args.threshold is not None else tc.threshold,
        args.consecutive if args.consecutive is not None else tc.consecutive,
        args.refractory if args.refractory is not None else tc.refractory)
    mode = extra.get("feature_mode", MOTION)
    t_obj = int(extra.get("t_obj", cfg.augmentation.t_obj))
    events = predict_stream(model, frames, skeleton, trigger, t_obj, mode, cfg.make_store())
    write_jsonl(args.out, (e.to_dict() for e in events))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file overriding pipeline defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gesturetrace", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="generate synthetic detection streams")
    s.add_argument("scene", help="scene config JSON")
    s.add_argument("--out", required=True, help="detection JSONL (or directory for a corpus)")
    s.add_argument("--annotations", help="annotation JSON output path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", parents=[common], help="associate detections into traces")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("featurize", parents=[common], help="trace stream to feature CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=MODES, default=MOTION)
    s.set_defaults(func=cmd_featurize)

    d = sub.add_parser("dataset", help="build or inspect clip datasets")
    dsub = d.add_subparsers(dest="dataset_command", required=True, parser_class=_Parser)
    s = dsub.add_parser("build", parents=[common])
    s.add_argument("--traces", nargs="+", required=True, help="trace streams or directories")
    s.add_argument("--annotations", help="annotation file or directory")
    s.add_argument("--out", required=True)
    s.add_argument("--test-out", help="also write a held-out, non-augmented test set")
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--mode", choices=MODES, default=MOTION)
    s.add_argument("--no-augment", action="store_true")
    s.add_argument("--t-min", dest="t_min", type=int)
    s.add_argument("--delta-t", dest="delta_t", type=int)
    s.add_argument("--t-obj", dest="t_obj", type=int)
    s.add_argument("--stride", type=int)
    s.set_defaults(func=cmd_dataset_build)
    s = dsub.add_parser("inspect", parents=[common])
    s.add_argument("path")
    s.set_defaults(func=cmd_dataset_inspect)

    s = sub.add_parser("train", parents=[common], help="train the recurrent classifier")
    s.add_argument("--data", required=True)
    s.add_argument("--val")
    s.add_argument("--out", required=True)
    s.add_argument("--lr", type=float)
    s.add_argument("--hidden", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--mode", choices=NET_MODES)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score a model on a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report")
    s.add_argument("--confusion", default="confusion.csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", parents=[common], help="gesture events from a detection stream")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--consecutive", type=int)
    s.add_argument("--refractory", type=int)
    s.set_defaults(func=cmd_infer)
    return p


def _thread_limit():
    """Cap BLAS/OpenMP pools at ``LEHGR_THREADS`` when it is set."""
    raw = os.environ.get("LEHGR_THREADS", "").strip()
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"LEHGR_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"LEHGR_THREADS must be a positive integer, got {n}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        with _thread_limit():
            return args.func(args, cfg)
    except (GestureTraceError, json.JSONDecodeError) as exc:
        print(f"gesturetrace: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gesturetrace: error: {exc}", file=sys.stderr)
        return 2


run_cli = main


if __name__ == "__main__":
    sys.exit(main())
