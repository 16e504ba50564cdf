"""Command-line entry points: gen | train | eval | ablate | plot | rerun.

Every command resolves one experiment config, writes its artifacts plus the
fully resolved config and a run manifest into --out, and exits 0 only when
the whole artifact set is on disk. The manifest records the resolved config
text, a content hash of the package sources, and the command line, which is
enough to re-run the experiment bit-identically (`polyseq rerun`).
"""

import argparse
import csv
import hashlib
import json
import pathlib
import sys
import time

import numpy as np

import polyseq
from polyseq import config as cfgmod
from polyseq import datagen, evaluation, seqcodec, svgplot
from polyseq.evaluation import (
    Detection,
    detections_from_ar,
    detections_from_parallel,
    emit_curves,
    gts_from_scenes,
)
from polyseq.model import Detector, Trainer, images_to_tensor

EVAL_SEED_OFFSET = 10_000_019  # eval scenes never overlap training indices


def code_hash():
    """SHA-256 over the package sources, stable path order."""
    root = pathlib.Path(polyseq.__file__).parent
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*.py")) + sorted(root.rglob("*.pyx")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def write_manifest(out_dir, command, cfg, artifacts, started, extra=None):
    manifest = {
        "command": command,
        "config": cfg.resolved_text(),
        "seed": cfg.seed,
        "code_hash": code_hash(),
        "package_version": polyseq.__version__,
        "started_unix": started,
        "finished_unix": time.time(),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }
    if extra:
        manifest.update(extra)
    path = pathlib.Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _prepare_out(out_dir, cfg):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.resolved_text())
    return out


def _print(msg):
    print(msg, flush=True)


# ---- scene plumbing ----------------------------------------------------------


def training_scenes(cfg):
    gen = cfgmod.build_gen_config(cfg)
    return [datagen.generate_scene(gen, i) for i in range(cfg.train_scenes)]


def eval_scenes(cfg, multiplier=1):
    n_max = cfg.n_max * multiplier
    gen = cfgmod.build_gen_config(cfg, n_max=n_max)
    start = EVAL_SEED_OFFSET
    return [datagen.generate_scene(gen, start + i) for i in range(cfg.eval_scenes)]


def collect_detections(model, scenes, batch_size=8):
    """Model detections for a scene list, either decode mode."""
    dets = []
    if model.config.decode_mode == "parallel":
        for i in range(0, len(scenes), batch_size):
            batch = scenes[i : i + batch_size]
            preds = model.predict_parallel(images_to_tensor(batch))
            for scene, pred in zip(batch, preds):
                dets.extend(
                    detections_from_parallel(pred, scene.index, model.config.task)
                )
    else:
        for scene in scenes:
            memory = model.forward_image(images_to_tensor([scene]))[0]
            pred = model.greedy_decode(memory)
            objects, confs = model.ar_detections(pred)
            dets.extend(detections_from_ar(objects, confs, scene.index))
    return dets


def quick_ap(model, scenes, cfg):
    """Single-threshold AP used for early stopping: IoU 0.5 on region tasks,
    L1 0.05 on point tasks."""
    dets = collect_detections(model, scenes, cfg.batch_size)
    gts = gts_from_scenes(scenes)
    if cfg.task in ("gates", "polygons"):
        return evaluation.ap_at_iou(dets, gts, 0.5, resolution=cfg.resolution)
    if cfg.task == "line":
        report = evaluation.map_l1_lines(dets, gts, thresholds=(0.05,))
    else:
        report = evaluation.map_l1_points(dets, gts, thresholds=(0.05,))
    return report.ap_per_threshold[0.05]


# ---- subcommands --------------------------------------------------------------


def cmd_gen(args):
    cfg = cfgmod.load_config(args.config)
    out = _prepare_out(args.out, cfg)
    started = time.time()
    gen = cfgmod.build_gen_config(cfg)
    scene_dir = datagen.write_dataset(
        gen, args.count, out / "scenes", workers=args.workers
    )
    write_manifest(out, "gen", cfg, {
        "scene_dir": scene_dir,
        "dataset_manifest": scene_dir / "manifest.json",
    }, started, extra={"count": args.count})
    _print(f"wrote {args.count} scenes to {out / 'scenes'}")
    return 0


def _train_loop(model, cfg, scenes, out, resume_meta=None):
    trainer = Trainer(
        model,
        lr=cfg.lr,
        lr_backbone=cfg.lr_backbone,
        weight_decay=cfg.weight_decay,
        lr_drop_step=cfg.lr_drop_step or None,
    )
    start_step = 0
    if resume_meta:
        start_step = int(resume_meta.get("steps_done", 0))
        trainer.steps_done = start_step
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    loss_rows, eval_rows = [], []
    ckpt = out / "model.ckpt"
    n = len(scenes)
    for step in range(start_step + 1, cfg.steps + 1):
        lo = ((step - 1) * cfg.batch_size) % n
        batch = scenes[lo : lo + cfg.batch_size]
        if len(batch) < cfg.batch_size:
            batch = batch + scenes[: cfg.batch_size - len(batch)]
        loss = trainer.step(batch)
        if step % cfg.log_every == 0 or step == cfg.steps:
            loss_rows.append((step, loss))
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            model.save(str(ckpt), extra_meta={"steps_done": step})
        if cfg.eval_every and step % cfg.eval_every == 0:
            ap = quick_ap(model, scenes, cfg)
            eval_rows.append((step, ap))
            _print(f"step {step} loss {loss:.4f} ap {ap:.4f}")
            if cfg.target_ap and ap >= cfg.target_ap:
                _print(f"target ap {cfg.target_ap} reached at step {step}")
                break
    model.save(str(ckpt), extra_meta={"steps_done": trainer.steps_done})
    loss_csv = out / "loss.csv"
    with open(loss_csv, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for step, loss in loss_rows:
            w.writerow([step, repr(loss)])
    artifacts = {"checkpoint": ckpt, "loss_csv": loss_csv}
    if eval_rows:
        eval_csv = out / "train_eval.csv"
        with open(eval_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "ap"])
            for step, ap in eval_rows:
                w.writerow([step, repr(ap)])
        artifacts["eval_csv"] = eval_csv
    return artifacts


def cmd_train(args):
    cfg = cfgmod.load_config(args.config)
    out = _prepare_out(args.out, cfg)
    started = time.time()
    resume_meta = None
    if args.resume:
        model, resume_meta = Detector.load(args.resume)
        _print(f"resumed at step {resume_meta.get('steps_done', 0)}")
    else:
        model = Detector(cfgmod.build_model_config(cfg), seed=cfg.seed)
    scenes = training_scenes(cfg)
    artifacts = _train_loop(model, cfg, scenes, out, resume_meta)
    write_manifest(out, "train", cfg, artifacts, started,
                   extra={"resume": args.resume})
    _print(f"training done; checkpoint at {artifacts['checkpoint']}")
    return 0


def cmd_eval(args):
    cfg = cfgmod.load_config(args.config)
    if args.cardinality_multiplier != 1:
        cfg = cfg.replace(cardinality_multiplier=args.cardinality_multiplier)
    out = _prepare_out(args.out, cfg)
    started = time.time()
    scenes = eval_scenes(cfg, cfg.cardinality_multiplier)
    gts = gts_from_scenes(scenes)
    if args.oracle:
        dets = [
            Detection(s.index, np.asarray(v, dtype=np.float64), 1.0)
            for s in scenes
            for v in s.labels
        ]
    else:
        if not args.checkpoint:
            raise SystemExit("eval needs --checkpoint (or --oracle)")
        model, _ = Detector.load(args.checkpoint)
        if model.config.task != cfg.task:
            raise SystemExit(
                f"checkpoint task {model.config.task!r} != config task {cfg.task!r}"
            )
        dets = collect_detections(model, scenes, cfg.batch_size)
    report = evaluation.evaluate(dets, gts, cfg.task, resolution=cfg.resolution)
    csv_path, json_path, svg_path = emit_curves(report, out)
    write_manifest(out, "eval", cfg, {
        "curves_csv": csv_path,
        "summary_json": json_path,
        "curves_svg": svg_path,
    }, started, extra={
        "mAP": report.mean_ap,
        "oracle": bool(args.oracle),
        "checkpoint": args.checkpoint,
    })
    _print(f"mAP {report.mean_ap:.4f} over {report.n_detections} detections "
           f"/ {report.n_gt} ground truths")
    return 0


def cmd_ablate(args):
    cfg = cfgmod.load_config(args.config)
    if cfg.decode_mode != "autoregressive":
        raise SystemExit("ablate requires decode_mode = autoregressive")
    out = _prepare_out(args.out, cfg)
    started = time.time()
    steps = cfg.ablate_steps or cfg.steps
    grid = [
        ("spatial", False),  # baseline first
        ("spatial", True),
        ("size", False),
        ("size", True),
    ]
    rows = []
    for order, pos_enc in grid:
        for k in range(cfg.ablate_seeds):
            run_cfg = cfg.replace(
                order_policy=order,
                use_decoder_pos_enc=pos_enc,
                steps=steps,
                seed=cfg.seed + k,
                eval_every=0,
                target_ap=0.0,
            )
            model = Detector(cfgmod.build_model_config(run_cfg), seed=run_cfg.seed)
            scenes = training_scenes(run_cfg)
            _train_loop(model, run_cfg, scenes, out / f"{order}_{int(pos_enc)}_{k}")
            held_out = eval_scenes(run_cfg)
            dets = collect_detections(model, held_out, run_cfg.batch_size)
            report = evaluation.evaluate(
                dets, gts_from_scenes(held_out), run_cfg.task,
                resolution=run_cfg.resolution,
            )
            rows.append((order, pos_enc, run_cfg.seed, report.mean_ap))
            _print(f"{order} pos_enc={pos_enc} seed={run_cfg.seed} "
                   f"mAP {report.mean_ap:.4f}")

    by_cell = {}
    for order, pos_enc, seed, ap in rows:
        by_cell.setdefault((order, pos_enc), []).append(ap)
    base_mean = float(np.mean(by_cell[("spatial", False)]))
    table = out / "ablation.csv"
    with open(table, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["order", "pos_enc", "seed", "map", "delta_vs_baseline"])
        for order, pos_enc, seed, ap in rows:
            w.writerow([order, int(pos_enc), seed, repr(ap), ""])
        for (order, pos_enc), aps in by_cell.items():
            mean, std = float(np.mean(aps)), float(np.std(aps))
            w.writerow([order, int(pos_enc), "mean",
                        repr(mean), repr(mean - base_mean)])
            w.writerow([order, int(pos_enc), "std", repr(std), ""])
    write_manifest(out, "ablate", cfg, {"ablation_csv": table}, started)
    _print(f"ablation table at {table}")
    return 0


def cmd_plot(args):
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = []
    for path in args.reports:
        p = pathlib.Path(path)
        if not p.exists():
            raise SystemExit(f"no such report: {p}")
        with open(p, newline="") as f:
            reader = csv.DictReader(f)
            fields = reader.fieldnames or []
            if len(fields) < 2:
                raise SystemExit(f"{p}: need at least two CSV columns")
            xs, ys = [], []
            xcol, ycol = fields[0], fields[1]
            for row in reader:
                xs.append(float(row[xcol]))
                ys.append(float(row[ycol]))
        series.append((p.stem, np.array(xs), np.array(ys)))
    svg = svgplot.line_plot(
        series, out / "comparison.svg",
        title=args.title, xlabel=args.xlabel, ylabel=args.ylabel,
    )
    _print(f"wrote {svg}")
    return 0


def cmd_rerun(args):
    manifest = json.loads(pathlib.Path(args.manifest).read_text())
    cfg_path = pathlib.Path(args.out) / "rerun.config"
    pathlib.Path(args.out).mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(manifest["config"])
    command = manifest["command"]
    argv = [command, "--config", str(cfg_path), "--out", args.out]
    if command == "gen":
        argv += ["--count", str(manifest.get("count", 0))]
    elif command == "train":
        if manifest.get("resume"):
            argv += ["--resume", manifest["resume"]]
    elif command == "eval":
        if manifest.get("oracle"):
            argv += ["--oracle"]
        else:
            argv += ["--checkpoint", manifest["checkpoint"]]
    _print(f"re-running: {' '.join(argv)}")
    return main(argv)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="polyseq",
        description="Parallel vs auto-regressive decoding on polygon toys.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a dataset directory")
    p.add_argument("--config", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or the GT oracle)")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--cardinality-multiplier", type=int, default=1,
                   help="scale n_max for generalization tests")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="order x positional-encoding grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("plot", help="overlay report CSVs as one SVG")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="")
    p.add_argument("--xlabel", default="")
    p.add_argument("--ylabel", default="")
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rerun)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (cfgmod.ConfigError, datagen.GenerationError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
