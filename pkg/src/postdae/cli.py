"""Command-line pipeline: generate, degrade, segment, train, postprocess, crf,
evaluate, report.

Every run writes one JSON manifest with the resolved configuration, seeds,
SHA-256 checksums of the files read and written, and the wall-clock time.
Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from . import crf as crf_mod
from . import dae
from . import degrade as deg
from . import metrics, synth
from .autodiff import TrainingError
from .autodiff.checkpoint import CheckpointError
from .raster import (
    LabelMask,
    argmax_labels,
    load_image,
    load_mask,
    load_soft,
    one_hot,
    save_image,
    save_mask,
    save_soft,
)

log = logging.getLogger("postdae")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects what a command touched and writes the manifest at the end."""

    def __init__(self, command: str, args, default_dir):
        self.command = command
        self.manifest_dir = Path(args.manifest_dir or default_dir)
        self.config: dict = {}
        self.seeds: dict = {}
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.start = time.perf_counter()

    def _rel(self, p: Path) -> str:
        return Path(os.path.relpath(Path(p).resolve(), self.manifest_dir.resolve())).as_posix()

    def write(self, name: str | None = None) -> Path:
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        path = self.manifest_dir / (name or f"{self.command}_manifest.json")
        doc = {
            "command": self.command,
            "version": __version__,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": {self._rel(p): sha256(p) for p in self.inputs},
            "outputs": {self._rel(p): sha256(p) for p in self.outputs},
            "duration_s": round(time.perf_counter() - self.start, 3),
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


# -- file helpers ---------------------------------------------------------------------------

INDEX_RE = re.compile(r"(\d{4,})$")


def sample_key(path: Path) -> str:
    """Trailing digit run of the file stem; files in different directories
    pair up on this key."""
    m = INDEX_RE.search(Path(path).stem)
    return m.group(1) if m else Path(path).stem


def list_files(directory, pattern: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"{d} is not a directory")
    return sorted(p for p in d.glob(pattern) if p.is_file())


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def load_any_mask(path: Path):
    """A LabelMask from a ``.pgm`` or a SoftMask from a ``.json`` index."""
    return load_soft(path) if path.suffix == ".json" else load_mask(path)


# -- commands ----------------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg_dict = read_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = synth.SceneConfig.from_dict(cfg_dict)
    if args.count < 0:
        raise UsageError("count must be >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run("generate", args, out)
    run.config = {"scene": json.loads(cfg.to_json()), "count": args.count, "start": args.start}
    run.seeds = {"scene": cfg.seed}
    for i in range(args.start, args.start + args.count):
        image, mask = synth.generate_scene(cfg, i)
        img_path, gt_path = out / f"img_{i:04d}.pgm", out / f"gt_{i:04d}.pgm"
        save_image(image, img_path)
        save_mask(mask, gt_path)
        run.outputs += [img_path, gt_path]
    run.write("manifest.json")
    return EXIT_OK


def cmd_degrade(args) -> int:
    if args.config:
        cfg = deg.DegradationConfig.from_dict(read_json(args.config))
        name = args.name or "custom"
    else:
        cfg = deg.preset(args.severity)
        name = args.name or args.severity
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    files = list_files(args.masks, args.pattern)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run("degrade", args, out)
    run.config = {"degradation": cfg.to_dict(), "name": name, "pattern": args.pattern}
    run.seeds = {"degradation": cfg.seed}
    for f in files:
        key = sample_key(f)
        mask = load_mask(f)
        # the sample key, when numeric, indexes the random stream
        index = int(key) if key.isdigit() else files.index(f)
        result = deg.degrade(mask, cfg, index)
        path = out / f"deg_{name}_{key}.pgm"
        save_mask(result, path)
        run.inputs.append(f)
        run.outputs.append(path)
    run.write()
    return EXIT_OK


def _paired(primary: list[Path], others: dict[str, list[Path]]):
    """Match files across directories by sample key; raise listing the
    unmatched keys."""
    keyed = {sample_key(p): p for p in primary}
    problems = []
    maps = {}
    for label, files in others.items():
        m = {sample_key(p): p for p in files}
        missing = sorted(set(keyed) - set(m))
        extra = sorted(set(m) - set(keyed))
        if missing:
            problems.append(f"{label}: no file for samples {', '.join(missing)}")
        if extra:
            problems.append(f"{label}: unmatched samples {', '.join(extra)}")
        maps[label] = m
    if problems:
        raise UsageError("unmatched files\n  " + "\n  ".join(problems))
    return [(k, keyed[k], {label: maps[label][k] for label in others}) for k in sorted(keyed)]


def cmd_segment(args) -> int:
    run = Run("segment", args, args.out)
    if args.params:
        params = synth.WeakClassifierParams(**read_json(args.params))
        run.inputs.append(Path(args.params))
    else:
        if not args.train:
            raise UsageError("segment needs --train (an img/gt directory) or --params")
        imgs = list_files(args.train, "img_*.pgm")
        gts = list_files(args.train, "gt_*.pgm")
        if not imgs:
            raise UsageError(f"no img_*.pgm files in {args.train}")
        pairs = _paired(imgs, {"ground truth": gts})
        params = synth.fit_weak_classifier(
            [load_image(p) for _, p, _ in pairs],
            [load_mask(o["ground truth"]) for _, _, o in pairs],
            smoothing_radius=args.smoothing,
        )
        run.inputs += [p for _, p, _ in pairs] + [o["ground truth"] for _, _, o in pairs]
    seed = params.seed if args.seed is None else args.seed
    params = synth.WeakClassifierParams(**{**asdict(params), "quality": args.quality, "seed": seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params_path = out / "weak_params.json"
    params_path.write_text(json.dumps(asdict(params), indent=2, sort_keys=True) + "\n")
    run.outputs.append(params_path)
    run.config = {"weak_classifier": asdict(params)}
    run.seeds = {"weak_classifier": params.seed}
    for f in list_files(args.images, "img_*.pgm"):
        key = sample_key(f)
        index = int(key) if key.isdigit() else 0
        soft = synth.weak_segment(load_image(f), params, index)
        run.inputs.append(f)
        run.outputs += save_soft(soft, out / f"prob_{key}.json")
        hard = out / f"seg_{key}.pgm"
        save_mask(argmax_labels(soft), hard)
        run.outputs.append(hard)
    run.write()
    return EXIT_OK


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise UsageError(f"dataset directory {data_dir} does not exist")
    files = list_files(data_dir, args.pattern)
    if not files:
        raise UsageError(f"no masks matching {args.pattern} in {data_dir}")
    masks = [load_mask(f) for f in files]
    dae_dict = read_json(args.dae_config) if args.dae_config else {}
    dae_dict.setdefault("input_size", masks[0].width)
    dae_dict.setdefault("num_classes", masks[0].num_classes)
    dae_cfg = dae.DaeConfig.from_dict(dae_dict)
    train_dict = read_json(args.train_config) if args.train_config else {}
    for key in ("epochs", "lr", "batch_size", "checkpoint_interval"):
        value = getattr(args, key)
        if value is not None:
            train_dict[key] = value
    if args.seed is not None:
        train_dict["seed"] = args.seed
    train_cfg = dae.TrainConfig.from_dict(train_dict)
    validation = None
    if args.validation:
        vfiles = list_files(args.validation, args.pattern)
        validation = [load_mask(f) for f in vfiles]
    out = Path(args.out)
    run = Run("train", args, out)
    run.inputs = list(files)
    run.config = {"dae": dae_cfg.to_dict(), "train": train_cfg.to_dict(), "pattern": args.pattern}
    run.seeds = {"train": train_cfg.seed, "degradation": train_cfg.degradation.seed}

    def progress(epoch, history):
        if (epoch + 1) % max(1, train_cfg.epochs // 10) == 0:
            log.info("epoch %d/%d loss %.4f", epoch + 1, train_cfg.epochs, history.loss[-1])

    model, history = dae.train(masks, train_cfg, dae_cfg, checkpoint_dir=out, validation=validation, on_epoch=progress)
    hist_path = out / "history.csv"
    with open(hist_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"] + (["val_loss"] if history.val_loss else []))
        for i, loss in enumerate(history.loss):
            row = [i + 1, repr(loss)]
            if history.val_loss:
                row.append(repr(history.val_loss[i]))
            w.writerow(row)
    run.outputs = sorted(out.glob("model_*.ckpt")) + [hist_path]
    run.write("train_manifest.json")
    return EXIT_OK


def cmd_postprocess(args) -> int:
    try:
        model = dae.load_model(args.model)
    except FileNotFoundError:
        raise UsageError(f"model {args.model} not found") from None
    files = list_files(args.masks, args.pattern)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run("postprocess", args, out)
    run.inputs = [Path(args.model)] + files
    run.config = {"model": str(args.model), "dae": model.config.to_dict(), "pattern": args.pattern}
    inputs = [load_any_mask(f) for f in files]
    projected = dae.postprocess_batch(model, inputs) if inputs else []
    scores_path = out / "scores.csv"
    with open(scores_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "score"])
        for f, m, p in zip(files, inputs, projected):
            path = out / f"{f.stem}.pgm"
            save_mask(p, path)
            run.outputs.append(path)
            w.writerow([path.name, repr(dae.plausibility_score(model, dae._as_label_mask(m), p))])
    run.outputs.append(scores_path)
    run.write()
    return EXIT_OK


def cmd_crf(args) -> int:
    unaries = list_files(args.unaries, args.pattern)
    images = list_files(args.images, "img_*.pgm")
    pairs = _paired(unaries, {"images": images}) if unaries else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run("crf", args, out)
    resolved = None
    for key, unary_path, other in pairs:
        unary = load_any_mask(unary_path)
        if isinstance(unary, LabelMask):
            unary = one_hot(unary)
        image = load_image(other["images"])
        params = crf_params(args, max(image.shape))
        resolved = resolved or params.to_dict()
        refined = crf_mod.meanfield_infer(unary, image, params)
        path = out / f"crf_{key}.pgm"
        save_mask(argmax_labels(refined), path)
        run.outputs.append(path)
        if args.save_soft:
            run.outputs += save_soft(refined, out / f"crf_{key}.json")
        run.inputs += [unary_path, other["images"]]
    run.config = {"crf": resolved or crf_params(args, None).to_dict(), "pattern": args.pattern}
    run.write()
    return EXIT_OK


def crf_params(args, size):
    base = crf_mod.desk_params(size) if size else crf_mod.CrfParams()
    overrides = {
        "theta_alpha": args.theta_alpha,
        "theta_beta": args.theta_beta,
        "theta_gamma": args.theta_gamma,
        "w_bilateral": args.w_bilateral,
        "w_smooth": args.w_smooth,
        "iterations": args.iterations,
    }
    return crf_mod.CrfParams(**{**base.to_dict(), **{k: v for k, v in overrides.items() if v is not None}})


def _method_sources(specs, default_pattern: str) -> dict[str, tuple[Path, str]]:
    """Parse ``DIR``, ``NAME=DIR`` or ``NAME=DIR/GLOB`` into name -> (dir, glob)."""
    methods = {}
    for s in specs:
        name, sep, path = s.partition("=")
        if not sep:
            path = s
        p = Path(path)
        directory, pattern = (p.parent, p.name) if any(ch in p.name for ch in "*?[") else (p, default_pattern)
        if not sep:
            name = directory.name
        if name in methods:
            raise UsageError(f"method name {name!r} given twice")
        methods[name] = (directory, pattern)
    return methods


def cmd_evaluate(args) -> int:
    gt_files = list_files(args.gt, args.gt_pattern)
    if not gt_files:
        raise UsageError(f"no ground-truth masks matching {args.gt_pattern} in {args.gt}")
    methods = _method_sources(args.pred, args.pattern)
    pairs = _paired(gt_files, {m: list_files(d, pat) for m, (d, pat) in methods.items()})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = Run("evaluate", args, out)
    gts = [load_mask(g) for _, g, _ in pairs]
    results = {}
    for m in methods:
        preds = [load_mask(o[m]) for _, _, o in pairs]
        records, _ = metrics.evaluate_pairs(preds, gts, [k for k, _, _ in pairs])
        results[m] = records
        run.inputs += [o[m] for _, _, o in pairs]
    run.inputs += [g for _, g, _ in pairs]
    report = metrics.compare_methods(results, alpha=args.alpha)
    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "sample", "class", "dice", "hd"])
        for m, records in results.items():
            for r in records:
                for c in sorted(r.dice):
                    w.writerow([m, r.sample_id, c, repr(r.dice[c]), repr(r.hausdorff[c])])
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    run.outputs += [metrics_path, report_path]
    run.config = {"methods": {m: (d / pat).as_posix() for m, (d, pat) in methods.items()}, "alpha": args.alpha}
    run.write()
    return EXIT_OK


def render_report(doc: dict) -> str:
    """Aligned text table, one row per method: Dice and HD as mean (std),
    followed by the pairwise tests."""
    rows = [("method", "n", "Dice", "HD (px)")]
    for m in doc["methods"]:
        s = doc["summary"][m]
        rows.append(
            (m, str(s["n"]), f"{s['dice_mean']:.3f} ({s['dice_std']:.3f})", f"{s['hd_mean']:.2f} ({s['hd_std']:.2f})")
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    if doc["comparisons"]:
        lines.append("")
        lines.append(f"Wilcoxon signed-rank, Bonferroni threshold {doc['bonferroni_threshold']:.4g}")
        for c in doc["comparisons"]:
            p = "n/a" if c["p_value"] is None else f"{c['p_value']:.3g}"
            mark = " *" if c["significant"] else ""
            lines.append(f"  {c['metric']:<4} {c['a']} vs {c['b']}: p = {p}{mark}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    path = Path(args.report)
    doc = read_json(path)
    if doc.get("schema_version") != 1:
        raise UsageError(f"{path} is not a version-1 evaluation report")
    text = render_report(doc)
    sys.stdout.write(text)
    run = Run("report", args, path.parent)
    run.inputs.append(path)
    if args.out:
        Path(args.out).write_text(text)
        run.outputs.append(Path(args.out))
    run.write()
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="postdae", description=__doc__.split("\n\n")[0].replace("\n", " "))
    p.add_argument("--seed", type=int, default=None, help="override the seed of the command's config")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1 for reproducibility)")
    p.add_argument("--manifest-dir", default=None, help="where to write the run manifest (default: output dir)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthetic image / ground-truth pairs")
    g.add_argument("--config", help="SceneConfig JSON")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--start", type=int, default=0, help="first sample index")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("degrade", help="corrupt a directory of masks")
    d.add_argument("--masks", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--severity", default="heavy", choices=sorted(deg.SEVERITY_PRESETS) + ["train", "identity"])
    d.add_argument("--config", help="DegradationConfig JSON (overrides --severity)")
    d.add_argument("--name", help="label used in output file names")
    d.add_argument("--pattern", default="gt_*.pgm")
    d.set_defaults(func=cmd_degrade)

    s = sub.add_parser("segment", help="weak intensity classifier producing soft masks")
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--train", help="img/gt directory to fit the class intensity model on")
    s.add_argument("--params", help="WeakClassifierParams JSON instead of fitting")
    s.add_argument("--quality", type=float, default=0.0, help="noise knob in [0, 1]; 0 is the plain classifier")
    s.add_argument("--smoothing", type=int, default=1, help="box smoothing radius when fitting")
    s.set_defaults(func=cmd_segment)

    t = sub.add_parser("train", help="train the denoising autoencoder")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--pattern", default="gt_*.pgm")
    t.add_argument("--validation", help="directory of clean validation masks")
    t.add_argument("--dae-config", help="DaeConfig JSON")
    t.add_argument("--train-config", help="TrainConfig JSON")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.set_defaults(func=cmd_train)

    pp = sub.add_parser("postprocess", help="project masks through a trained model")
    pp.add_argument("--model", required=True)
    pp.add_argument("--masks", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--pattern", default="*.pgm", help="glob; *.json picks soft-mask indexes")
    pp.set_defaults(func=cmd_postprocess)

    c = sub.add_parser("crf", help="dense CRF refinement of soft masks")
    c.add_argument("--unaries", required=True)
    c.add_argument("--images", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--pattern", default="prob_*.json")
    c.add_argument("--theta-alpha", type=float, help="appearance kernel spatial width in pixels")
    c.add_argument("--theta-beta", type=float, help="appearance kernel intensity width, [0, 1] scale")
    c.add_argument("--theta-gamma", type=float, help="smoothness kernel width in pixels")
    c.add_argument("--w-bilateral", type=float)
    c.add_argument("--w-smooth", type=float)
    c.add_argument("--iterations", type=int)
    c.add_argument("--save-soft", action="store_true", help="also write the refined soft masks")
    c.set_defaults(func=cmd_crf)

    e = sub.add_parser("evaluate", help="Dice / Hausdorff and pairwise Wilcoxon tests")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True, nargs="+", help="DIR, NAME=DIR or NAME=DIR/GLOB, one per method")
    e.add_argument("--out", required=True)
    e.add_argument("--gt-pattern", default="gt_*.pgm")
    e.add_argument("--pattern", default="*.pgm", help="glob for prediction files")
    e.add_argument("--alpha", type=float, default=0.05)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="render report.json as a text table")
    r.add_argument("report")
    r.add_argument("--out", help="also write the table to this file")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except TrainingError as exc:
        print(f"postdae {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, CheckpointError, synth.GenerationError, FileNotFoundError) as exc:
        print(f"postdae {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
