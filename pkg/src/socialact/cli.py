"""Command line: synth | train | eval | infer | gradcheck | plot.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .features import FeatureError, load_corpus, save_corpus, synth_corpus
from .gradcheck import TOLERANCE, run_suite
from .metrics import reports_to_csv
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .plotting import plot_group_histogram, plot_loss_curves, plot_metric_bars, read_log_csv
from .scene import AnnotationError, LabelSet, load_annotations
from .trainer import EVAL_MODES, TrainingError, evaluate, infer_social, train

log = logging.getLogger("socialact")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT_FILE = "model.ckpt"
LOG_FILE = "train_log.csv"
TRAIN_MODES = ("learn2cluster", "cluster", "group")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _labels() -> LabelSet:
    return LabelSet.cad()


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, epochs=getattr(args, "epochs", None),
                              lambda1=getattr(args, "lambda1", None), lambda2=getattr(args, "lambda2", None))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(args, name):
    if getattr(args, name) is None:
        raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")
    return getattr(args, name)


def cmd_synth(args) -> int:
    cfg = _config(args)
    labels = _labels()
    scfg = cfg.synth_config(labels)
    scenes, batches = synth_corpus(scfg)
    out = _out_dir(args)
    save_corpus(out, scenes, batches, labels)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    n_test = sum(s.split == "test" for s in scenes)
    print(f"wrote {len(scenes)} scenes ({len(scenes) - n_test} train / {n_test} test) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    mode = args.mode or "learn2cluster"
    if mode not in TRAIN_MODES:
        raise UsageError(f"train --mode must be one of {TRAIN_MODES}, got {mode!r}")
    if mode == "cluster":
        cfg = cfg.with_overrides(lambda2=0.0)
    if mode == "group":
        cfg = RunConfig.from_dict({**cfg.to_dict(), "train": {**cfg.train, "task": "group"}})
    labels = _labels()
    scenes, batches = load_corpus(_require(args, "data"), labels, split="train")
    if not scenes:
        raise FeatureError("no training scenes in the corpus")
    b = batches[0]
    tcfg = cfg.train_config(cfg.model_config(labels, b.P, b.D, b.D_g))
    result = train(scenes, batches, tcfg, labels)
    out = _out_dir(args)
    save_checkpoint(out / CHECKPOINT_FILE, result.model, labels, echo={"mode": mode, **cfg.to_dict()})
    (out / LOG_FILE).write_text(result.log_csv())
    last = result.log[-1]
    print(f"trained {tcfg.epochs} epochs on {len(scenes)} scenes; final loss {last['loss']:.4f}, "
          f"edge {last['edge']:.4f}; wrote {out / CHECKPOINT_FILE}")
    return EXIT_OK


def _modes(args, cfg: RunConfig) -> tuple[str, ...]:
    if args.mode in (None, "all"):
        return cfg.modes
    if args.mode not in EVAL_MODES:
        raise UsageError(f"unknown mode {args.mode!r}; expected one of {EVAL_MODES} or 'all'")
    return (args.mode,)


def cmd_eval(args) -> int:
    cfg = _config(args)
    modes = _modes(args, cfg)
    labels = _labels()
    model, _ = load_checkpoint(_require(args, "checkpoint"), labels)
    scenes, batches = load_corpus(_require(args, "data"), labels, split=args.split)
    out = _out_dir(args)
    reports = [evaluate(model, scenes, batches, m, labels, k_max=cfg.k_max) for m in modes]
    lines = []
    for rep in reports:
        (out / f"report_{rep.mode}.json").write_text(rep.to_json())
        r = rep.rates()
        lines.append(f"{rep.mode:>13}  membership {r['membership_acc']:.4f}  social {r['social_acc']:.4f}  "
                     f"individual {r['individual_acc']:.4f}  mpca {r['mpca']:.4f}")
    (out / "report.csv").write_text(reports_to_csv(reports))
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _config(args)
    mode = args.mode or "learn2cluster"
    if mode not in EVAL_MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {EVAL_MODES}")
    labels = _labels()
    model, _ = load_checkpoint(_require(args, "checkpoint"), labels)
    scenes, batches = load_corpus(_require(args, "data"), labels, split=args.split)
    out = _out_dir(args)
    with open(out / "predictions.jsonl", "w") as fh:
        for s, b in zip(scenes, batches):
            pred = infer_social(model, b, mode, cfg.k_max)
            rec = {
                "scene_id": s.scene_id,
                "groups": [
                    {"members": list(g), "activity": labels.social_labels[a]}
                    for g, a in zip(pred.partition.groups, pred.group_activity)
                ],
                "actions": [labels.action_labels[a] for a in pred.actor_action],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote predictions for {len(scenes)} scenes to {out / 'predictions.jsonl'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_suite(seed)
    for r in results:
        flag = "ok" if r.ok else "FAIL"
        print(f"{r.name:<28} max rel err {r.max_rel_error:.3e}  ({r.checked} coords, {r.kinks} at kinks)  {flag}")
    worst = max(r.max_rel_error for r in results)
    print(f"worst {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst <= TOLERANCE else EXIT_NUMERIC


def cmd_plot(args) -> int:
    labels = _labels()
    out = _out_dir(args)
    written = []
    if args.data:
        scenes = load_annotations(Path(args.data) / "annotations.jsonl", labels)
        written += plot_group_histogram(scenes, labels, out)
    if args.log:
        logs = {Path(p).parent.name or Path(p).stem: read_log_csv(p) for p in args.log}
        written += plot_loss_curves(logs, out)
    if args.report:
        rates = {}
        for p in args.report:
            d = json.loads(Path(p).read_text())
            rates[d["mode"]] = d
        written += plot_metric_bars(rates, out)
    if not written:
        raise UsageError("plot needs at least one of --data, --log, --report")
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="socialact", description="Social grouping and activity recognition toolkit.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--verbose", "-v", action="store_true")
        if name in ("train", "eval", "infer"):
            sp.add_argument("--mode", help="learn2cluster | cluster | group | individuals (eval also: all)")
            sp.add_argument("--data", help="corpus directory written by synth")
        if name == "train":
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--lambda1", type=float)
            sp.add_argument("--lambda2", type=float)
        if name in ("eval", "infer"):
            sp.add_argument("--checkpoint")
            sp.add_argument("--split", default="test", help="train | test (default test)")
        if name == "plot":
            sp.add_argument("--data", help="corpus directory for the group-size histogram")
            sp.add_argument("--log", action="append", help="training log CSV (repeatable)")
            sp.add_argument("--report", action="append", help="report_<mode>.json (repeatable)")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AnnotationError, FeatureError, CheckpointError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
