"""Command-line entry point: ``uppsqa <subcommand>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch
import yaml

from .datamodel import SplitManifests, load_manifest, save_pairs
from .evaluation import evaluate, evaluate_model, report
from .pairgen import MODES, SCENARIOS, PairGenConfig, build_pairs, build_scenario, scenario_modes
from .samos import FeatureCache, ModelConfig, build_model
from .toy import ToyCorpusConfig, make_toy_corpus
from .training import LABEL_CONDITIONS, TrainConfig, multi_seed_run, train

log = logging.getLogger("uppsqa")


def load_config(path) -> dict:
    """Read a YAML/JSON experiment config; data paths are made absolute."""
    path = Path(path)
    cfg = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    data = cfg.get("data", {})
    for key in ("train", "dev", "test"):
        if key not in data:
            raise SystemExit(f"config {path}: data.{key} manifest is required")
        p = Path(data[key])
        data[key] = str(p if p.is_absolute() else path.parent / p)
    out = Path(cfg.get("out_dir", "runs"))
    cfg["out_dir"] = str(out if out.is_absolute() else path.parent / out)
    return cfg


def _prepare(cfg: dict, scenario: str, condition: str):
    train_mode, test_mode = scenario_modes(scenario)
    data = cfg["data"]
    need_mos = condition != "LM"
    manifests = SplitManifests(
        load_manifest(data["train"], require_mos=need_mos),
        load_manifest(data["dev"], require_mos=True),
        load_manifest(data["test"]),
    )
    pg = PairGenConfig(**cfg.get("pairgen", {}))
    splits = build_scenario(train_mode, test_mode, manifests, pg)
    train_cfg = TrainConfig.from_dict({**cfg.get("train", {}), "label_condition": condition})
    model_cfg = ModelConfig.from_dict(cfg.get("model"))
    run_dir = Path(cfg["out_dir"]) / f"{condition}_{scenario}"
    run_dir.mkdir(parents=True, exist_ok=True)
    for split in splits:
        save_pairs(run_dir / f"{split.name}_pairs.csv", split.pairs)
    return splits, train_cfg, model_cfg, run_dir


def cmd_build_pairs(args) -> int:
    utts = load_manifest(args.manifest, require_mos=True)
    cfg = PairGenConfig(eps=args.eps, min_samples=args.min_samples, rng_seed=args.seed, keep_tied_pairs=not args.drop_ties)
    pairs = build_pairs(args.mode, utts, cfg)
    save_pairs(args.out, pairs)
    print(f"wrote {len(pairs)} {args.mode} pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    (train_split, dev_split, test_split), train_cfg, model_cfg, run_dir = _prepare(cfg, args.scenario, args.label_condition)
    seed_dir = run_dir / f"seed_{args.seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(args.seed)
    model = build_model(model_cfg)
    cache = FeatureCache()
    result = train(model, train_split, dev_split, train_cfg, args.seed, cache=cache, log_path=seed_dir / "epochs.csv")
    result.checkpoint.train_config["scenario"] = args.scenario
    result.checkpoint.save(seed_dir / "checkpoint.pt")
    rep = evaluate_model(
        result.checkpoint.build_model(),
        test_split,
        cache=cache,
        condition=args.label_condition,
        scenario=args.scenario,
        seed=args.seed,
        expected_seeds=train_cfg.seeds,
    )
    rep.save(seed_dir / "eval.json")
    print(
        f"best epoch {result.checkpoint.epoch} (dev SRCC {result.checkpoint.dev_srcc:.4f}), "
        f"stopped at {result.stop_epoch}; test ACC {rep.mean_acc:.4f} -> {seed_dir}"
    )
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    splits, train_cfg, model_cfg, run_dir = _prepare(cfg, args.scenario, args.label_condition)
    result = multi_seed_run(lambda: build_model(model_cfg), splits, train_cfg, out_dir=run_dir, scenario=args.scenario)
    for o in result.outcomes:
        print(f"seed {o.seed}: " + (f"ACC {o.acc:.4f}" if o.error is None else f"FAILED {o.error}"))
    print(f"mean ACC {result.mean_acc:.4f} over {len(result.per_seed_acc)} seed(s)")
    return 0 if result.complete else 1


def cmd_evaluate(args) -> int:
    rep = evaluate(args.checkpoint, args.pairs, args.manifest, args.out, scenario=args.scenario)
    print(f"ACC {rep.mean_acc:.4f} on {rep.n_pairs} pairs ({rep.n_ties} tied labels)")
    if args.exclude_ties:
        excl = "n/a" if rep.acc_excluding_ties is None else f"{rep.acc_excluding_ties:.4f}"
        print(f"ACC excluding ties {excl}")
    for name, value in (("utterance SRCC", rep.utt_srcc), ("system SRCC", rep.sys_srcc)):
        print(f"{name} {'n/a' if value is None else f'{value:.4f}'}")
    return 0


def cmd_report(args) -> int:
    sys.stdout.write(report(args.runs, args.format))
    return 0


def cmd_make_toy(args) -> int:
    make_toy_corpus(args.out, ToyCorpusConfig(seed=args.seed))
    config = {
        "data": {"train": "train.csv", "dev": "dev.csv", "test": "test.csv"},
        "pairgen": {"eps": 0.2, "min_samples": 1, "rng_seed": 0},
        "model": {},
        "train": {"lr": 0.01, "max_epochs": 200, "patience": 15, "seeds": [1, 2, 3, 4, 5]},
        "out_dir": "runs",
    }
    (Path(args.out) / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    print(f"toy corpus and config.yaml written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uppsqa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-pairs", help="build content-matched or content-unmatched pairs")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--min-samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop-ties", action="store_true")
    p.set_defaults(func=cmd_build_pairs)

    for name, func, helptext in (
        ("train", cmd_train, "train one seed and evaluate it on the test split"),
        ("experiment", cmd_experiment, "train and evaluate every configured seed"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--scenario", choices=list(SCENARIOS), required=True)
        p.add_argument("--label-condition", choices=LABEL_CONDITIONS, required=True)
        if name == "train":
            p.add_argument("--seed", type=int, required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a pair file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--scenario", default=None)
    p.add_argument("--exclude-ties", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarize eval.json files as a scenario table")
    p.add_argument("--runs", required=True)
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-toy", help="write the synthetic noise-level corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
