"""Joint training: cross-entropy over labeled pairs, the knowledge-graph
energy term, L2 over all parameters, optimized with Adam.

Every epoch re-pairs each training positive with freshly sampled
popularity-weighted negatives, shuffles the pair stream, and walks it in
mini-batches. The relation hyperplane normals are renormalized to unit
length after every optimizer step. Everything is driven by one seeded
generator, so a (seed, data) pair fixes the trained parameters exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .autodiff import Tape, Tensor, add, clamp, log_map, mul, neg, stack, sub, sum_all
from .kg import AttributeTable, Triple, kge_batch_loss
from .model import Hyperparams, ModelParams, RepCache, UserHistory, predict
from .sampling import sample_negatives

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LabeledPair:
    """One training example: label 1 for an observed interaction, else 0."""
    user: int
    item: int
    label: int


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 5
    negatives_per_positive: int = 4
    kge_batch: int = 128
    seed: int = 7

    def __post_init__(self):
        problems = []
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.negatives_per_positive < 1:
            problems.append("negatives_per_positive must be >= 1")
        if self.kge_batch < 1:
            problems.append("kge_batch must be >= 1")
        if problems:
            raise ValueError("invalid train config: " + "; ".join(problems))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss_total: float
    loss_bce: float
    loss_kge: float
    loss_l2: float
    seconds: float


class Adam:
    """Standard Adam with bias correction; updates arrays in place."""

    def __init__(self, arrays: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(a) for n, a in arrays.items()}
        self.v = {n: np.zeros_like(a) for n, a in arrays.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, arr in self.arrays.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            arr -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def bce_loss(tape: Tape, scores: Sequence[Tensor], labels: Sequence[int]) -> Tensor:
    """Mean binary cross-entropy; scores are clamped away from 0 and 1."""
    terms = []
    for score, label in zip(scores, labels):
        p = clamp(score, PROB_CLAMP, 1.0 - PROB_CLAMP)
        terms.append(neg(log_map(p)) if label == 1 else neg(log_map(sub(1.0, p))))
    return sum_all(stack(terms)) * (1.0 / len(terms))


def l2_penalty(tape: Tape, params: ModelParams) -> Tensor:
    """Sum of squares of every trainable array (tied aliases counted once)."""
    total: Tensor | None = None
    for arr in params.named().values():
        leaf = tape.leaf(arr)
        term = sum_all(mul(leaf, leaf))
        total = term if total is None else add(total, term)
    return total


def joint_loss(tape: Tape, batch: Sequence[tuple[LabeledPair, UserHistory]],
               kge_triples: Sequence[Triple], params: ModelParams,
               hyper: Hyperparams, attr_table: AttributeTable,
               ) -> tuple[Tensor, dict[str, float]]:
    """Mean BCE + lambda1 * mean triple energy + lambda2 * L2, with parts.

    The knowledge term is skipped (contributes exactly 0) when lambda1
    is 0 or no triples are supplied, and the L2 term when lambda2 is 0,
    so disabled terms leave no gradient path at all.
    """
    if len(batch) == 0:
        raise ValueError("joint_loss needs a nonempty pair batch")
    cache = RepCache(tape, params, attr_table)
    scores = [predict(tape, history, pair.item, params, hyper, attr_table, cache)
              for pair, history in batch]
    bce = bce_loss(tape, scores, [pair.label for pair, _ in batch])
    parts = {"bce": bce.item(), "kge": 0.0, "l2": 0.0}
    total = bce
    if hyper.lambda1 > 0.0 and len(kge_triples) > 0:
        kge = kge_batch_loss(tape, kge_triples, params.entity_emb,
                             params.rel_normals, params.rel_trans)
        parts["kge"] = kge.item()
        total = add(total, kge * hyper.lambda1)
    if hyper.lambda2 > 0.0:
        l2 = l2_penalty(tape, params)
        parts["l2"] = l2.item()
        total = add(total, l2 * hyper.lambda2)
    parts["total"] = total.item()
    return total, parts


def build_epoch_pairs(train_items: dict[int, tuple[int, ...]],
                      exclusions: dict[int, set[int]], popularity: np.ndarray,
                      hyper: Hyperparams, config: TrainConfig,
                      rng: np.random.Generator,
                      ) -> list[tuple[LabeledPair, UserHistory]]:
    """One epoch's shuffled pair stream at an exact 1:k positive ratio.

    The history used to score a positive excludes that item itself (the
    candidate must not vouch for itself); positives whose exclusion
    leaves no history are dropped together with their negatives, which
    preserves the exact ratio.
    """
    pairs: list[tuple[LabeledPair, UserHistory]] = []
    for user in sorted(train_items):
        items = train_items[user]
        neg_history = items[:hyper.history_len]
        for positive in items:
            pos_history = tuple(i for i in items if i != positive)
            pos_history = pos_history[:hyper.history_len]
            if not pos_history:
                continue
            pairs.append((LabeledPair(user, positive, 1),
                          UserHistory(pos_history)))
            negatives = sample_negatives(config.negatives_per_positive,
                                         popularity, exclusions[user], rng)
            history = UserHistory(neg_history)
            for item in negatives:
                pairs.append((LabeledPair(user, item, 0), history))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def _param_norms(params: ModelParams) -> str:
    return ", ".join(f"{name}={np.linalg.norm(arr):.4g}"
                     for name, arr in params.named().items())


def _renormalize_hyperplanes(params: ModelParams) -> None:
    norms = np.linalg.norm(params.rel_normals, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise RuntimeError("a relation hyperplane normal collapsed to zero")
    params.rel_normals /= norms


def train(train_items: dict[int, tuple[int, ...]],
          exclusions: dict[int, set[int]], popularity: np.ndarray,
          triples: Sequence[Triple], attr_table: AttributeTable,
          num_entities: int, hyper: Hyperparams, config: TrainConfig,
          checkpoint_path: str | Path | None = None,
          params: ModelParams | None = None,
          on_epoch: Callable[[EpochStats], None] | None = None,
          ) -> tuple[ModelParams, list[EpochStats]]:
    """Run the optimization loop; returns final params and per-epoch stats.

    ``train_items`` maps each user to training items newest-first;
    ``exclusions`` must contain every user's train and test positives so
    sampled negatives never collide with them. With ``epochs == 0`` the
    freshly initialized (or supplied) params are returned untouched.
    """
    if not train_items:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = ModelParams.init(num_entities, hyper, rng)
    named = params.named()
    adam = Adam(named, config.learning_rate)
    use_kge = hyper.lambda1 > 0.0 and len(triples) > 0
    log: list[EpochStats] = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        pairs = build_epoch_pairs(train_items, exclusions, popularity, hyper,
                                  config, rng)
        sums = {"total": 0.0, "bce": 0.0, "kge": 0.0, "l2": 0.0}
        for batch_index, start in enumerate(range(0, len(pairs), config.batch_size)):
            batch = pairs[start:start + config.batch_size]
            kge_triples: list[Triple] = []
            if use_kge:
                picks = rng.integers(0, len(triples), size=config.kge_batch)
                kge_triples = [triples[i] for i in picks]
            tape = Tape()
            handles = {name: tape.leaf(arr) for name, arr in named.items()}
            loss, parts = joint_loss(tape, batch, kge_triples, params, hyper,
                                     attr_table)
            if not np.isfinite(parts["total"]):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} batch {batch_index}; "
                    f"parameter norms: {_param_norms(params)}")
            grads_by_leaf = tape.backward(loss)
            adam.step({name: grads_by_leaf[handle]
                       for name, handle in handles.items()})
            _renormalize_hyperplanes(params)
            for key in sums:
                sums[key] += parts[key] * len(batch)
        n = len(pairs)
        stats = EpochStats(epoch, sums["total"] / n, sums["bce"] / n,
                           sums["kge"] / n, sums["l2"] / n,
                           time.perf_counter() - started)
        log.append(stats)
        if checkpoint_path is not None:
            checkpoint.save(checkpoint_path, params, hyper)
        if on_epoch is not None:
            on_epoch(stats)
    if checkpoint_path is not None and config.epochs == 0:
        checkpoint.save(checkpoint_path, params, hyper)
    return params, log


def train_kge_only(triples: Sequence[Triple], num_entities: int,
                   hyper: Hyperparams, steps: int, learning_rate: float,
                   seed: int, on_step: Callable[[int, ModelParams], None]
                   | None = None) -> tuple[ModelParams, list[float]]:
    """Optimize only the knowledge term; returns mean-energy trajectory.

    The returned list has ``steps + 1`` entries: the full-set mean energy
    before training and after each step. ``on_step`` (if given) observes
    the parameters after each optimizer step and renormalization.
    """
    if len(triples) == 0:
        raise ValueError("train_kge_only needs a nonempty triple set")
    rng = np.random.default_rng(seed)
    params = ModelParams.init(num_entities, hyper, rng)
    subset = {name: params.named()[name]
              for name in ("entity_emb", "rel_normals", "rel_trans")}
    adam = Adam(subset, learning_rate)

    def mean_energy() -> float:
        tape = Tape()
        return kge_batch_loss(tape, triples, params.entity_emb,
                              params.rel_normals, params.rel_trans).item()

    energies = [mean_energy()]
    for step in range(steps):
        tape = Tape()
        handles = {name: tape.leaf(arr) for name, arr in subset.items()}
        loss = kge_batch_loss(tape, triples, params.entity_emb,
                              params.rel_normals, params.rel_trans)
        grads = tape.backward(loss)
        adam.step({name: grads[handle] for name, handle in handles.items()})
        _renormalize_hyperplanes(params)
        if on_step is not None:
            on_step(step, params)
        energies.append(mean_energy())
    return params, energies


def write_loss_log(path: str | Path, log: Sequence[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,loss_total,loss_bce,loss_kge,loss_l2,seconds\n")
        for row in log:
            fh.write(f"{row.epoch},{row.loss_total!r},{row.loss_bce!r},"
                     f"{row.loss_kge!r},{row.loss_l2!r},{row.seconds:.3f}\n")
