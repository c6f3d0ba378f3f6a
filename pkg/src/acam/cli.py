"""Command-line entry point: generate | train | evaluate | gradcheck.

Every command takes one sectioned config file; individual keys can be
overridden with ``--set section.key=value`` or the dedicated flags.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import checkpoint
from .config import (RUN_SCHEMA, WORLD_SCHEMA, ConfigError, RunConfig,
                     load_run_config, load_world_spec, schema_help)
from .evaluation import (evaluate, model_scorer, oracle_scorer, split,
                         write_metrics_csv, write_metrics_json)
from .gradcheck import check_gradients
from .kg import Dataset, load_dataset
from .sampling import popularity_counts
from .synthetic import generate, write_world
from .training import train, write_loss_log


def _parse_override(text: str) -> tuple[str, str]:
    dotted, sep, value = text.partition("=")
    if not sep or "." not in dotted:
        raise argparse.ArgumentTypeError(
            f"expected section.key=value, got {text!r}")
    return dotted.strip(), value.strip()


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config not found: {p}"])
    return p


def _collect_overrides(args: argparse.Namespace,
                       flag_map: dict[str, str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for attr, dotted in flag_map.items():
        value = getattr(args, attr, None)
        if value is None or value is False:
            continue
        overrides[dotted] = "false" if value is True and attr.startswith(
            "no_") else str(value)
    for dotted, value in getattr(args, "set", None) or []:
        overrides[dotted] = value
    return overrides


def _load_data(config: RunConfig, num_attributes: int) -> Dataset:
    return load_dataset(config.interactions, config.triples, num_attributes,
                        relation_names=config.relations or None)


def _threads() -> int:
    return max(1, int(os.environ.get("ACAM_THREADS", "1")))


def cmd_generate(args: argparse.Namespace) -> int:
    overrides = _collect_overrides(args, {"seed": "world.seed"})
    spec = load_world_spec(_require_file(args.spec), overrides)
    world = generate(spec)
    paths = write_world(world, args.out)
    print(f"wrote {len(world.interactions)} interactions and "
          f"{len(world.triples)} triples for {spec.users} users / "
          f"{spec.items} items")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def _prepare_training_inputs(config: RunConfig, dataset: Dataset):
    split_result = split(dataset.interactions, config.split_spec)
    popularity = popularity_counts(split_result.train_interactions,
                                   dataset.num_items)
    exclusions = {
        user: set(items) | set(split_result.test_items.get(user, ()))
        for user, items in split_result.train_items.items()
    }
    return split_result, popularity, exclusions


def cmd_train(args: argparse.Namespace) -> int:
    overrides = _collect_overrides(args, {
        "seed": "train.seed", "epochs": "train.epochs",
        "lambda1": "model.lambda1", "lambda2": "model.lambda2",
        "out": "output.out_dir", "no_coattention": "model.use_coattention",
        "attention_softmax": "model.attention_softmax",
    })
    config = load_run_config(_require_file(args.config), overrides)
    dataset = _load_data(config, config.hyper.num_attributes)
    split_result, popularity, exclusions = _prepare_training_inputs(
        config, dataset)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = config.out_dir / "checkpoint.bin"

    def progress(stats):
        print(f"epoch {stats.epoch}: total={stats.loss_total:.6f} "
              f"bce={stats.loss_bce:.6f} kge={stats.loss_kge:.6f} "
              f"l2={stats.loss_l2:.6f} ({stats.seconds:.1f}s)")

    _, log = train(split_result.train_items, exclusions, popularity,
                   dataset.triples, dataset.attr_table, dataset.num_entities,
                   config.hyper, config.train, checkpoint_path=checkpoint_path,
                   on_epoch=progress)
    write_loss_log(config.out_dir / "loss_log.csv", log)
    from .report import save_loss_figure
    save_loss_figure(log, config.out_dir / "loss_curves.png")
    print(f"checkpoint: {checkpoint_path}")
    print(f"loss log: {config.out_dir / 'loss_log.csv'}")
    print(f"loss figure: {config.out_dir / 'loss_curves.png'}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    overrides = _collect_overrides(args, {"out": "output.out_dir"})
    config = load_run_config(_require_file(args.config), overrides)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise ConfigError([f"checkpoint not found: {ckpt_path}"])
    params, hyper = checkpoint.load(ckpt_path)
    if args.no_coattention:
        hyper = dataclasses.replace(hyper, use_coattention=False)
    dataset = _load_data(config, hyper.num_attributes)
    if params.entity_emb.shape[0] != dataset.num_entities:
        raise RuntimeError(
            f"checkpoint holds {params.entity_emb.shape[0]} entity embeddings "
            f"but the data has {dataset.num_entities} entities; it was "
            "trained on different files")
    split_result, popularity, _ = _prepare_training_inputs(config, dataset)
    if args.oracle:
        scorer = oracle_scorer(split_result.test_items)
    else:
        scorer = model_scorer(params, hyper, dataset.attr_table)
    seed = config.train.seed if args.seed is None else args.seed
    report = evaluate(scorer, split_result, popularity, config.split_spec,
                      hyper.history_len, n_values=config.n_values, seed=seed,
                      repetitions=config.repetitions, threads=_threads())
    config.out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(config.out_dir / "metrics.csv", report)
    write_metrics_json(config.out_dir / "metrics.json", report)
    from .report import save_metrics_figure
    save_metrics_figure(report, config.out_dir / "metrics.png")
    for row in report.rows:
        name = row.metric if row.n is None else f"{row.metric}@{row.n}"
        print(f"{name}: {row.value:.4f} (stderr {row.stderr:.4f})")
    print(f"evaluated {report.users_evaluated} users "
          f"({report.users_skipped} skipped), "
          f"{report.repetitions} repetitions")
    print(f"metrics: {config.out_dir / 'metrics.csv'}")
    print(f"figure: {config.out_dir / 'metrics.png'}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = load_run_config(_require_file(args.config), {},
                             require_data=False)
    failing: dict[str, float] = {}
    for seed in range(args.seeds):
        report = check_gradients(config.hyper, seed)
        worst = max(report.checks, key=lambda c: c.worst_rel_err)
        print(f"seed {seed}: worst rel err {worst.worst_rel_err:.2e} "
              f"({worst.name})")
        for check in report.checks:
            if check.failing > 0:
                failing[check.name] = max(failing.get(check.name, 0.0),
                                          check.worst_rel_err)
    if failing:
        names = ", ".join(sorted(failing))
        print(f"FAIL: {len(failing)} failing tensors: {names}")
        return 1
    print("PASS: 0 failing tensors")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acam",
        description="attribute-level co-attention recommender")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser(
        "generate", help="write a synthetic dataset",
        epilog=schema_help(WORLD_SCHEMA),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    gen.add_argument("spec", help="world spec file ([world] section)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, help="override world.seed")
    gen.add_argument("--set", action="append", type=_parse_override,
                     metavar="SECTION.KEY=VALUE", help="override any spec key")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser(
        "train", help="train a model from a run config",
        epilog=schema_help(RUN_SCHEMA),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    tr.add_argument("config", help="run config file")
    tr.add_argument("--out", help="override output.out_dir")
    tr.add_argument("--seed", type=int, help="override train.seed")
    tr.add_argument("--epochs", type=int, help="override train.epochs")
    tr.add_argument("--lambda1", type=float, help="override model.lambda1")
    tr.add_argument("--lambda2", type=float, help="override model.lambda2")
    tr.add_argument("--no-coattention", action="store_true",
                    dest="no_coattention",
                    help="replace learned co-attention with uniform mixing")
    tr.add_argument("--attention-softmax", action="store_true",
                    dest="attention_softmax",
                    help="normalize history-attention weights")
    tr.add_argument("--set", action="append", type=_parse_override,
                    metavar="SECTION.KEY=VALUE", help="override any config key")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser(
        "evaluate", help="rank held-out items with a trained checkpoint",
        epilog=schema_help(RUN_SCHEMA),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    ev.add_argument("config", help="run config file")
    ev.add_argument("--checkpoint", required=True, help="trained model file")
    ev.add_argument("--seed", type=int,
                    help="seed for negative draws (default: train.seed)")
    ev.add_argument("--oracle", action="store_true",
                    help="debug upper bound: score by relevance labels")
    ev.add_argument("--no-coattention", action="store_true",
                    dest="no_coattention",
                    help="evaluate with uniform mixing instead of co-attention")
    ev.add_argument("--out", help="override output.out_dir")
    ev.add_argument("--set", action="append", type=_parse_override,
                    metavar="SECTION.KEY=VALUE", help="override any config key")
    ev.set_defaults(func=cmd_evaluate)

    gc = sub.add_parser(
        "gradcheck", help="finite-difference check of the full loss gradient",
        epilog=schema_help(RUN_SCHEMA),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    gc.add_argument("config", help="run config file (model section is used)")
    gc.add_argument("--seeds", type=int, default=5,
                    help="number of random worlds to check (default 5)")
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
