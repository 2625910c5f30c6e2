"""Command-line entry point: ``dmfp <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from dmfp.config import BASELINE_NAMES, RunConfig, load_config
from dmfp.data import load_dataset
from dmfp.errors import DMFPError
from dmfp.fusion import Variant
from dmfp.metrics import format_metrics_table
from dmfp.synth import oracle_report, write_synthetic

log = logging.getLogger("dmfp")


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def run_dir(cfg: RunConfig, out: str | None = None) -> Path:
    return Path(out or cfg.run.out) / f"run-{cfg.hash()[:12]}"


def _prepare(cfg: RunConfig, out: str | None) -> Path:
    d = run_dir(cfg, out)
    d.mkdir(parents=True, exist_ok=True)
    echo = {"config_hash": cfg.hash(), "config": cfg.to_dict()}
    _write(d / "config.json", _json(echo))
    return d


def _trained(cfg: RunConfig, d: Path, retrain: bool = False):
    """Load the run's models, training and saving them first if needed."""
    from dmfp.pipeline import load_system, make_splits, save_system, train_system

    train_set, estimate_set, test_set = make_splits(cfg)
    models = d / "models"
    if retrain or not (models / "base.json").exists():
        system = train_system(train_set, estimate_set, cfg)
        save_system(system, models)
    system = load_system(models, train_set, estimate_set, cfg)
    return system, (train_set, estimate_set, test_set)


def cmd_generate(cfg: RunConfig, args) -> int:
    directory = Path(args.out or cfg.run.out) / "data"
    manifest, truth = write_synthetic(cfg.synth, directory, args.stem)
    print(json.dumps({"manifest": str(manifest), "truth": str(truth)}))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    d = _prepare(cfg, args.out)
    _trained(cfg, d, retrain=True)
    print(json.dumps({"run_dir": str(d), "models": str(d / "models")}))
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    from dmfp.pipeline import evaluate_system, labels_jsonl, decisions_jsonl

    d = _prepare(cfg, args.out)
    system, (_, _, test_set) = _trained(cfg, d)
    h = cfg.hash()
    variants = cfg.run.variants
    ev = evaluate_system(system, test_set, variants, {"seed": cfg.split.seed, "config_hash": h})
    reports = d / "reports"
    _write(reports / "metrics.json", _json({
        "config_hash": h,
        "config": cfg.to_dict(),
        "systems": {k: r.to_dict() for k, r in ev.reports.items()},
        "exploratory": ev.exploratory.to_dict(),
        "error_correction": ev.corrections.to_dict(),
    }))
    header = f"config_hash {h}\n\n"
    _write(reports / "metrics.txt", header + format_metrics_table(ev.reports, "Test-set metrics"))
    _write(reports / "exploratory.txt", header + ev.exploratory.format())
    _write(reports / "error_correction.txt", header + ev.corrections.format())
    _write(d / "predictions" / "dmfp.jsonl", decisions_jsonl(test_set.ids, ev.decisions, h))
    for name, bits in ev.predictions.items():
        if name != Variant.DMFP.value:
            _write(d / "predictions" / f"{name}.jsonl", labels_jsonl(test_set.ids, bits, name, h))
    if not cfg.data.manifest:
        from dmfp.synth import generate
        from dmfp.data import split_dataset

        ds, truth = generate(cfg.synth)
        test = split_dataset(ds, cfg.split)[2]
        _write(reports / "oracle.json", _json({"config_hash": h,
                                               **oracle_report(test, truth, system.base)}))
    if args.seeds and args.seeds > 1:
        from dmfp.experiments import multi_seed_run

        res = multi_seed_run(cfg, args.seeds)
        _write(reports / "multi_seed.json", _json({"config_hash": h, **res.to_dict()}))
    sys.stdout.write(format_metrics_table(ev.reports))
    print(json.dumps({"run_dir": str(d), "reports": str(reports)}))
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    from dmfp.pipeline import decisions_jsonl, labels_jsonl

    d = _prepare(cfg, args.out)
    system, (_, _, test_set) = _trained(cfg, d)
    targets = load_dataset(args.input) if args.input else test_set
    h = cfg.hash()
    if args.baseline:
        if args.baseline not in system.baselines:
            raise DMFPError(f"baseline {args.baseline!r} was not trained in this run")
        bits = system.baselines[args.baseline].predict_bits(targets)
        text, name = labels_jsonl(targets.ids, bits, args.baseline, h), args.baseline
    else:
        variant = Variant(args.variant or "dmfp")
        if variant.learned and variant not in system.competence:
            raise DMFPError(f"variant {variant.value!r} was not trained in this run")
        text = decisions_jsonl(targets.ids, system.system(variant).decisions(targets), h)
        name = variant.value
    path = _write(d / "predictions" / f"{name}.predict.jsonl", text)
    sys.stdout.write(text)
    log.info("wrote %s", path)
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    from dmfp.experiments import run_sweep

    d = _prepare(cfg, args.out)
    res = run_sweep(cfg)
    _write(d / "reports" / "sweep.csv", res.to_csv())
    kv, kp, f1 = res.best
    print(json.dumps({"best": {"k_v": kv, "k_p": kp, "private_f1": f1},
                      "grid": str(d / "reports" / "sweep.csv")}))
    return 0


def cmd_reproduce_figure3(cfg: RunConfig, args) -> int:
    from dmfp.walkthrough import reproduce

    sys.stdout.write(reproduce()[1])
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "reproduce-figure3": cmd_reproduce_figure3,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="split and training seed")
    common.add_argument("--out", help="output root (default: [run] out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dmfp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset").add_argument(
        "--stem", default="synth")
    sub.add_parser("train", parents=[common], help="train base, competence and baseline models")
    p = sub.add_parser("predict", parents=[common], help="JSON-lines decisions")
    p.add_argument("--input", help="manifest of records to label (default: test split)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--variant", choices=[v.value for v in Variant])
    g.add_argument("--baseline", choices=BASELINE_NAMES)
    e = sub.add_parser("evaluate", parents=[common], help="metrics and analysis tables")
    e.add_argument("--variant", action="append", choices=[v.value for v in Variant],
                   help="restrict the ablations evaluated (repeatable)")
    e.add_argument("--baseline", action="append", choices=BASELINE_NAMES,
                   help="restrict the baselines evaluated (repeatable)")
    e.add_argument("--seeds", type=int, default=0, help="also average over this many splits")
    sub.add_parser("sweep", parents=[common], help="k_v x k_p grid of private F1")
    sub.add_parser("reproduce-figure3", parents=[common], help="print the worked example")
    return parser


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["split.seed"] = ov["train.seed"] = args.seed
    if args.command == "evaluate":
        if args.variant:
            ov["run.variants"] = args.variant
        if args.baseline:
            ov["baselines.names"] = args.baseline
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except DMFPError as e:
        sys.stderr.write(json.dumps(e.to_json()) + "\n")
        return 2
    except (ValueError, OSError, KeyError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
