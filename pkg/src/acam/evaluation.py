"""Leave-recent-out splitting and ranked-list quality metrics.

Each evaluated user's recent interactions are held out as test
positives, pooled with popularity-sampled negatives, scored, and ranked.
HR@n here is the fraction of the top n that are true positives
(precision at n) over that pooled list; nDCG@n normalizes by the best
achievable ordering; RR is the reciprocal rank of the first positive.
Results are averaged over users and over several repetitions with fresh
negative draws.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape
from .kg import AttributeTable, Interaction
from .model import Hyperparams, ModelParams, RepCache, UserHistory, predict
from .sampling import sample_negatives


@dataclass(frozen=True)
class SplitSpec:
    test_positives: int = 10
    negatives_per_positive: int = 4

    def __post_init__(self):
        if self.test_positives < 1 or self.negatives_per_positive < 1:
            raise ValueError(
                "test_positives and negatives_per_positive must be >= 1")


@dataclass
class SplitResult:
    """Training interactions plus per-user splits, items newest-first.

    Users whose whole record fits inside the test quota keep everything
    in training and are absent from ``test_items`` (they cannot be
    evaluated without training history); ``excluded_users`` counts them.
    """

    train_interactions: list[Interaction]
    train_items: dict[int, tuple[int, ...]]
    test_items: dict[int, tuple[int, ...]]
    excluded_users: int


def split(interactions: Sequence[Interaction], spec: SplitSpec) -> SplitResult:
    """Hold out each user's most recent interactions as test positives.

    Timestamp ties keep input order (stable sort), so the split is
    deterministic for a fixed input file.
    """
    by_user: dict[int, list[Interaction]] = {}
    for interaction in interactions:
        by_user.setdefault(interaction.user, []).append(interaction)
    result = SplitResult([], {}, {}, 0)
    for user in sorted(by_user):
        records = sorted(by_user[user], key=lambda r: r.timestamp)
        if len(records) <= spec.test_positives:
            result.excluded_users += 1
            train_records = records
        else:
            train_records = records[:-spec.test_positives]
            test_records = records[-spec.test_positives:]
            result.test_items[user] = tuple(
                r.item for r in reversed(test_records))
        result.train_interactions.extend(train_records)
        result.train_items[user] = tuple(
            r.item for r in reversed(train_records))
    return result


@dataclass(frozen=True)
class RankedList:
    """One user's pooled candidates, already sorted for consumption."""

    items: tuple[int, ...]
    scores: tuple[float, ...]
    labels: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)


def make_ranked_list(items: Sequence[int], scores: Sequence[float],
                     labels: Sequence[int]) -> RankedList:
    """Sort by score descending, breaking ties by item id ascending."""
    if not (len(items) == len(scores) == len(labels)):
        raise ValueError("items, scores and labels must have equal length")
    if len(items) == 0:
        raise ValueError("ranked list must be nonempty")
    order = sorted(range(len(items)), key=lambda i: (-scores[i], items[i]))
    return RankedList(tuple(items[i] for i in order),
                      tuple(scores[i] for i in order),
                      tuple(labels[i] for i in order))


def _check_n(ranked: RankedList, n: int) -> None:
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if n > len(ranked):
        raise ValueError(f"n={n} exceeds list length {len(ranked)}")


def hr_at_n(ranked: RankedList, n: int) -> float:
    """Fraction of the top n that are relevant."""
    _check_n(ranked, n)
    return sum(ranked.labels[:n]) / n


def ndcg_at_n(ranked: RankedList, n: int) -> float:
    """Discounted gain of the top n over the ideal ordering's gain."""
    _check_n(ranked, n)
    dcg = sum(label / math.log2(k + 2)
              for k, label in enumerate(ranked.labels[:n]))
    positives = sum(ranked.labels)
    ideal = sum(1.0 / math.log2(k + 2) for k in range(min(n, positives)))
    return dcg / ideal if ideal > 0.0 else 0.0


def rr(ranked: RankedList) -> float:
    """Reciprocal rank of the first relevant item; 0 if none."""
    for k, label in enumerate(ranked.labels):
        if label == 1:
            return 1.0 / (k + 1)
    return 0.0


@dataclass(frozen=True)
class MetricRow:
    metric: str
    n: int | None
    value: float
    stderr: float


@dataclass
class EvalReport:
    rows: list[MetricRow]
    users_evaluated: int
    users_skipped: int
    repetitions: int

    def value(self, metric: str, n: int | None = None) -> float:
        for r in self.rows:
            if r.metric == metric and r.n == n:
                return r.value
        raise KeyError(f"no metric {metric}@{n}")


ScoreFn = Callable[[int, UserHistory, Sequence[int]], Sequence[float]]


def model_scorer(params: ModelParams, hyper: Hyperparams,
                 attr_table: AttributeTable) -> ScoreFn:
    """Score candidates with the trained model, one tape per call."""

    def score(user: int, history: UserHistory,
              candidates: Sequence[int]) -> list[float]:
        tape = Tape()
        cache = RepCache(tape, params, attr_table)
        return [predict(tape, history, item, params, hyper, attr_table,
                        cache).item()
                for item in candidates]

    return score


def oracle_scorer(test_items: dict[int, tuple[int, ...]]) -> ScoreFn:
    """Debug upper bound: score 1 for true test positives, 0 otherwise."""

    def score(user: int, history: UserHistory,
              candidates: Sequence[int]) -> list[float]:
        positives = set(test_items.get(user, ()))
        return [1.0 if item in positives else 0.0 for item in candidates]

    return score


def evaluate(score_fn: ScoreFn, split_result: SplitResult,
             popularity: np.ndarray, spec: SplitSpec, history_len: int,
             n_values: Sequence[int] = (3, 5, 10), seed: int = 0,
             repetitions: int = 3, threads: int = 1) -> EvalReport:
    """Pooled-candidate ranking metrics, averaged over users and reps.

    Negative draws are derived from (seed, repetition, user), so results
    do not depend on evaluation order or thread count. The reported
    stderr is the standard error over repetition means.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    users = sorted(split_result.test_items)
    metric_keys = [("hr", n) for n in n_values]
    metric_keys += [("ndcg", n) for n in n_values]
    metric_keys.append(("rr", None))

    exclusions = {
        user: set(split_result.train_items.get(user, ()))
        | set(split_result.test_items[user])
        for user in users
    }

    def eval_user(user: int) -> list[dict[tuple, float]] | None:
        history_items = split_result.train_items.get(user, ())[:history_len]
        if not history_items:
            return None
        history = UserHistory(history_items)
        positives = split_result.test_items[user]
        score_memo: dict[int, float] = {}
        per_rep = []
        for rep in range(repetitions):
            rng = np.random.default_rng([seed, rep, user])
            negatives = sample_negatives(
                spec.negatives_per_positive * len(positives), popularity,
                exclusions[user], rng)
            candidates = list(positives) + negatives
            unscored = [c for c in candidates if c not in score_memo]
            if unscored:
                for item, value in zip(unscored,
                                       score_fn(user, history, unscored)):
                    score_memo[item] = value
            ranked = make_ranked_list(
                candidates, [score_memo[c] for c in candidates],
                [1] * len(positives) + [0] * len(negatives))
            values = {("rr", None): rr(ranked)}
            for n in n_values:
                values[("hr", n)] = hr_at_n(ranked, n)
                values[("ndcg", n)] = ndcg_at_n(ranked, n)
            per_rep.append(values)
        return per_rep

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(eval_user, users))
    else:
        outcomes = [eval_user(user) for user in users]

    evaluated = [o for o in outcomes if o is not None]
    skipped = len(outcomes) - len(evaluated)
    if not evaluated:
        raise ValueError("no users were evaluable (all histories empty)")
    rows = []
    for key in metric_keys:
        rep_means = [
            sum(per_rep[rep][key] for per_rep in evaluated) / len(evaluated)
            for rep in range(repetitions)
        ]
        value = float(np.mean(rep_means))
        stderr = (float(np.std(rep_means, ddof=1) / math.sqrt(repetitions))
                  if repetitions > 1 else 0.0)
        rows.append(MetricRow(key[0], key[1], value, stderr))
    return EvalReport(rows, len(evaluated), skipped, repetitions)


def write_metrics_csv(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("metric,n,value,stderr\n")
        for row in report.rows:
            n = "" if row.n is None else row.n
            fh.write(f"{row.metric},{n},{row.value!r},{row.stderr!r}\n")


def write_metrics_json(path: str | Path, report: EvalReport) -> None:
    blob = {
        "users_evaluated": report.users_evaluated,
        "users_skipped": report.users_skipped,
        "repetitions": report.repetitions,
        "metrics": [
            {"metric": r.metric, "n": r.n, "value": r.value, "stderr": r.stderr}
            for r in report.rows
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")
