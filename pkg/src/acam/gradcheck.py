"""Central finite-difference validation of the backward pass.

Builds a small in-memory dataset, evaluates the full joint training loss,
and compares every parameter gradient produced by the tape against
central differences, coordinate by coordinate. A coordinate passes when
the difference is tiny in absolute terms or small relative to the larger
of the two magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tape
from .kg import AttributeTable, Triple
from .model import Hyperparams, ModelParams, UserHistory
from .training import LabeledPair, joint_loss

REL_TOL = 1e-3
ABS_TOL = 1e-6
STEP = 1e-4
# central differences are invalid if a perturbation can push a relu input
# across 0; draws closer than this to the kink are redrawn
KINK_MARGIN = 2e-3


def finite_difference_grad(loss_fn: Callable[[], float], arr: np.ndarray,
                           step: float = STEP) -> np.ndarray:
    """Central differences of loss_fn w.r.t. every coordinate of arr.

    Perturbs arr in place and restores it, so loss_fn must read the same
    array object.
    """
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        original = arr[idx]
        arr[idx] = original + step
        plus = loss_fn()
        arr[idx] = original - step
        minus = loss_fn()
        arr[idx] = original
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


def gradient_mismatches(analytic: np.ndarray, numeric: np.ndarray,
                        rel_tol: float = REL_TOL,
                        abs_tol: float = ABS_TOL) -> tuple[int, float]:
    """(number of failing coordinates, worst relative error)."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ok = (diff <= abs_tol) | (diff <= rel_tol * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0.0, diff / scale, 0.0)
    worst = float(rel.max()) if rel.size else 0.0
    return int(np.size(ok) - np.count_nonzero(ok)), worst


@dataclass
class TensorCheck:
    name: str
    failing: int
    worst_rel_err: float


@dataclass
class GradCheckReport:
    seed: int
    checks: list[TensorCheck]

    @property
    def failing_tensors(self) -> list[str]:
        return [c.name for c in self.checks if c.failing > 0]

    @property
    def passed(self) -> bool:
        return not self.failing_tensors


def micro_dataset(hyper: Hyperparams, rng: np.random.Generator,
                  num_items: int = 8, values_per_attribute: int = 3,
                  num_pairs: int = 6,
                  ) -> tuple[list[tuple[LabeledPair, UserHistory]],
                             list[Triple], AttributeTable, int]:
    """A tiny random world exercising every parameter path.

    Item 0 keeps all slots empty (stand-in embeddings), item 1 gets two
    values in slot 1 (multi-value averaging); labels alternate so both
    cross-entropy branches appear.
    """
    m = hyper.num_attributes
    table = AttributeTable(m)
    triples = []
    next_entity = num_items
    value_ids = {}
    for a in range(1, m + 1):
        for v in range(values_per_attribute):
            value_ids[(a, v)] = next_entity
            next_entity += 1
    for item in range(1, num_items):
        for a in range(1, m + 1):
            count = 2 if (item == 1 and a == 1) else int(rng.integers(1, 3))
            picks = rng.choice(values_per_attribute, size=count, replace=False)
            for v in picks:
                tail = value_ids[(a, int(v))]
                table.add(item, a, tail)
                triples.append(Triple(item, a, tail))
    pairs = []
    for p in range(num_pairs):
        length = int(rng.integers(1, hyper.history_len + 1))
        history = tuple(int(i) for i in
                        rng.choice(num_items, size=length, replace=False))
        candidate = int(rng.integers(0, num_items))
        pairs.append((LabeledPair(0, candidate, p % 2), UserHistory(history)))
    return pairs, triples, table, next_entity


def check_gradients(hyper: Hyperparams, seed: int,
                    kge_batch: int = 6) -> GradCheckReport:
    """Compare tape gradients of the joint loss with central differences.

    Parameter draws whose relu inputs sit within KINK_MARGIN of zero are
    redrawn (deterministically, from the same stream): across the kink
    the numeric quotient stops being a derivative estimate.
    """
    rng = np.random.default_rng([seed, 20210527])
    pairs, triples, table, num_entities = micro_dataset(hyper, rng)
    picks = rng.integers(0, len(triples), size=kge_batch)
    kge_triples = [triples[i] for i in picks]
    for _ in range(100):
        params = ModelParams.init(num_entities, hyper, rng)
        probe = Tape()
        joint_loss(probe, pairs, kge_triples, params, hyper, table)
        if probe.relu_input_margin() >= KINK_MARGIN:
            break
    else:
        raise RuntimeError("could not draw parameters clear of relu kinks")

    def loss_value() -> float:
        tape = Tape()
        loss, _ = joint_loss(tape, pairs, kge_triples, params, hyper, table)
        return loss.item()

    tape = Tape()
    named = params.named()
    handles = {name: tape.leaf(arr) for name, arr in named.items()}
    loss, _ = joint_loss(tape, pairs, kge_triples, params, hyper, table)
    grads = tape.backward(loss)

    checks = []
    for name, arr in named.items():
        numeric = finite_difference_grad(loss_value, arr)
        failing, worst = gradient_mismatches(grads[handles[name]], numeric)
        checks.append(TensorCheck(name, failing, worst))
    return GradCheckReport(seed, checks)
