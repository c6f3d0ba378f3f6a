"""Sectioned key = value run configuration with strict validation.

A run is described by one INI-style file; command-line flags override
individual keys. Unknown sections or keys are rejected, and validation
reports every problem at once rather than stopping at the first.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .evaluation import SplitSpec
from .model import Hyperparams
from .synthetic import WorldSpec
from .training import TrainConfig


class ConfigError(Exception):
    """Carries every validation problem found in one pass."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    items = tuple(int(part.strip()) for part in text.split(",") if part.strip())
    if not items:
        raise ValueError("expected a comma-separated integer list")
    return items


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class Key:
    default: str | None   # None marks a required-at-use key
    parse: Callable[[str], object]
    help: str


RUN_SCHEMA: dict[str, dict[str, Key]] = {
    "data": {
        "interactions": Key(None, str, "path to the interactions TSV"),
        "triples": Key(None, str, "path to the knowledge triples TSV"),
        "relations": Key("", _parse_str_list,
                         "comma-separated relation names fixing slot order "
                         "(default: first-seen order)"),
    },
    "model": {
        "dim": Key("512", int, "embedding width d"),
        "key_dim": Key("", int, "key width (default: dim)"),
        "value_dim": Key("", int, "value width (default: dim)"),
        "num_attributes": Key("4", int, "attribute slots per item M"),
        "history_len": Key("3", int, "recent interactions per user L"),
        "mlp_hidden": Key("256,128", _parse_int_list,
                          "two hidden widths of the prediction MLP"),
        "lambda1": Key("0.1", float, "knowledge-energy loss weight"),
        "lambda2": Key("0.001", float, "L2 regularization weight"),
        "tie_kv": Key("true", _parse_bool,
                      "share key and value transforms (requires "
                      "dim == key_dim == value_dim)"),
        "attention_softmax": Key("false", _parse_bool,
                                 "normalize history-attention weights"),
        "use_coattention": Key("true", _parse_bool,
                               "learned co-attention (false: uniform mixing)"),
    },
    "train": {
        "learning_rate": Key("0.001", float, "Adam learning rate"),
        "batch_size": Key("128", int, "pairs per optimization step"),
        "epochs": Key("5", int, "training epochs"),
        "negatives_per_positive": Key("4", int,
                                      "sampled negatives per training positive"),
        "kge_batch": Key("128", int, "triples sampled per step"),
        "seed": Key("7", int, "seed for init, sampling and shuffling"),
    },
    "eval": {
        "test_positives": Key("10", int,
                              "most recent interactions held out per user"),
        "eval_negatives_per_positive": Key("4", int,
                                           "sampled negatives per test positive"),
        "n_values": Key("3,5,10", _parse_int_list, "cutoffs for HR@n and nDCG@n"),
        "repetitions": Key("3", int, "evaluation repetitions (fresh negatives)"),
    },
    "output": {
        "out_dir": Key("runs/acam", str, "directory for artifacts"),
    },
}

WORLD_SCHEMA: dict[str, dict[str, Key]] = {
    "world": {
        "users": Key("200", int, "number of users"),
        "items": Key("500", int, "number of items"),
        "num_attributes": Key("2", int, "attribute slots per item"),
        "values_per_attribute": Key("4", int, "distinct values per attribute"),
        "interactions_min": Key("20", int, "minimum interactions per user"),
        "interactions_max": Key("40", int, "maximum interactions per user"),
        "correlation": Key("0.8", float,
                           "fraction of signal-driven interactions (rho)"),
        "sharpness": Key("16.0", float, "preference softmax sharpness"),
        "taste_seeds": Key("1", int, "items defining each user's taste"),
        "taste_concentration": Key("20.0", float,
                                   "how strongly taste seeds cluster around "
                                   "one anchor item (0: uniform)"),
        "seed": Key("0", int, "world seed"),
    },
}


@dataclass
class RunConfig:
    interactions: Path | None
    triples: Path | None
    relations: tuple[str, ...]
    hyper: Hyperparams
    train: TrainConfig
    split_spec: SplitSpec
    n_values: tuple[int, ...]
    repetitions: int
    out_dir: Path


def _read_values(path: str | Path, schema: dict[str, dict[str, Key]],
                 overrides: dict[str, str] | None,
                 problems: list[str]) -> dict[str, dict[str, str]]:
    """Merge file values and overrides over schema defaults."""
    values = {section: {key: spec.default for key, spec in keys.items()}
              for section, keys in schema.items()}
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        problems.append(f"cannot parse config: {exc}")
        return values
    for section in parser.sections():
        if section not in schema:
            problems.append(f"unknown section [{section}]")
            continue
        for key, value in parser.items(section):
            if key not in schema[section]:
                problems.append(f"unknown key {section}.{key}")
            else:
                values[section][key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in schema or key not in schema[section]:
            problems.append(f"unknown override {dotted}")
        else:
            values[section][key] = value
    return values


def _parse_values(values: dict[str, dict[str, str]],
                  schema: dict[str, dict[str, Key]],
                  problems: list[str]) -> dict[str, dict[str, object]]:
    parsed: dict[str, dict[str, object]] = {}
    for section, keys in schema.items():
        parsed[section] = {}
        for key, spec in keys.items():
            raw = values[section][key]
            if raw is None or raw == "":
                # empty is only meaningful for keys whose default is unset
                if raw == "" and spec.default != "":
                    problems.append(f"{section}.{key} must not be empty")
                parsed[section][key] = None
                continue
            try:
                parsed[section][key] = spec.parse(raw)
            except ValueError as exc:
                problems.append(f"{section}.{key}: {exc}")
                parsed[section][key] = None
    return parsed


def load_run_config(path: str | Path, overrides: dict[str, str] | None = None,
                    require_data: bool = True) -> RunConfig:
    problems: list[str] = []
    values = _read_values(path, RUN_SCHEMA, overrides, problems)
    parsed = _parse_values(values, RUN_SCHEMA, problems)

    data, model, train, evl, output = (parsed["data"], parsed["model"],
                                       parsed["train"], parsed["eval"],
                                       parsed["output"])

    def section_parsed(section: str, *keys: str) -> bool:
        """True when every listed key has a usable value, so constructing
        the section object can only add new information to `problems`."""
        return all(parsed[section][key] is not None for key in keys)
    paths: dict[str, Path | None] = {}
    for name in ("interactions", "triples"):
        raw = data[name]
        if raw is None:
            if require_data:
                problems.append(f"data.{name} is required")
            paths[name] = None
            continue
        p = Path(raw)
        if not p.exists():
            problems.append(f"data.{name}: no such file: {p}")
        paths[name] = p

    dim = model["dim"]
    hyper = None
    if section_parsed("model", "dim", "num_attributes", "history_len",
                      "mlp_hidden", "lambda1", "lambda2", "tie_kv",
                      "attention_softmax", "use_coattention"):
        try:
            hyper = Hyperparams(
                dim=dim,
                key_dim=(model["key_dim"]
                         if model["key_dim"] is not None else dim),
                value_dim=(model["value_dim"]
                           if model["value_dim"] is not None else dim),
                num_attributes=model["num_attributes"],
                history_len=model["history_len"],
                mlp_hidden=tuple(model["mlp_hidden"]),
                lambda1=model["lambda1"],
                lambda2=model["lambda2"],
                tie_kv=model["tie_kv"],
                attention_softmax=model["attention_softmax"],
                use_coattention=model["use_coattention"],
            )
        except (TypeError, ValueError) as exc:
            problems.append(f"model: {exc}")

    train_config = None
    if section_parsed("train", "learning_rate", "batch_size", "epochs",
                      "negatives_per_positive", "kge_batch", "seed"):
        try:
            train_config = TrainConfig(
                learning_rate=train["learning_rate"],
                batch_size=train["batch_size"],
                epochs=train["epochs"],
                negatives_per_positive=train["negatives_per_positive"],
                kge_batch=train["kge_batch"],
                seed=train["seed"],
            )
        except (TypeError, ValueError) as exc:
            problems.append(f"train: {exc}")

    split_spec = None
    if section_parsed("eval", "test_positives", "eval_negatives_per_positive"):
        try:
            split_spec = SplitSpec(
                test_positives=evl["test_positives"],
                negatives_per_positive=evl["eval_negatives_per_positive"],
            )
        except (TypeError, ValueError) as exc:
            problems.append(f"eval: {exc}")
    if evl["repetitions"] is not None and evl["repetitions"] < 1:
        problems.append("eval.repetitions must be >= 1")
    if evl["n_values"] is not None and any(n < 1 for n in evl["n_values"]):
        problems.append("eval.n_values must all be >= 1")

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        interactions=paths["interactions"],
        triples=paths["triples"],
        relations=data["relations"] or (),
        hyper=hyper,
        train=train_config,
        split_spec=split_spec,
        n_values=tuple(evl["n_values"]),
        repetitions=evl["repetitions"],
        out_dir=Path(output["out_dir"]),
    )


def load_world_spec(path: str | Path,
                    overrides: dict[str, str] | None = None) -> WorldSpec:
    problems: list[str] = []
    values = _read_values(path, WORLD_SCHEMA, overrides, problems)
    parsed = _parse_values(values, WORLD_SCHEMA, problems)
    if problems:
        raise ConfigError(problems)
    world = parsed["world"]
    try:
        return WorldSpec(**world)
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"world: {exc}"]) from None


def schema_help(schema: dict[str, dict[str, Key]]) -> str:
    """Render every key with its default, for --help epilogs."""
    lines = ["configuration keys (defaults in parentheses):"]
    for section, keys in schema.items():
        lines.append(f"  [{section}]")
        for key, spec in keys.items():
            default = "required" if spec.default is None else (
                repr(spec.default) if spec.default != "" else "unset")
            lines.append(f"    {key} ({default}): {spec.help}")
    return "\n".join(lines)
