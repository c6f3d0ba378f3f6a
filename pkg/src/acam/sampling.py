"""Popularity-weighted negative sampling.

Negatives are drawn proportionally to how often each item was interacted
with, on the theory that an ignored popular item is stronger evidence of
disinterest than an ignored obscure one. A small additive floor keeps
zero-count items reachable.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .kg import Interaction

SMOOTHING = 0.1


def popularity_counts(interactions: Iterable[Interaction], num_items: int) -> np.ndarray:
    """Interaction count per item id over the given (training) set."""
    counts = np.zeros(num_items)
    for interaction in interactions:
        counts[interaction.item] += 1.0
    return counts


def sampling_probabilities(popularity: np.ndarray, exclusions: set[int],
                           smoothing: float = SMOOTHING) -> np.ndarray:
    """Exact first-draw distribution: (count + floor) over the allowed pool."""
    weights = popularity + smoothing
    if exclusions:
        weights[list(exclusions)] = 0.0
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("no items available outside the exclusion set")
    return weights / total


def sample_negatives(k: int, popularity: np.ndarray, exclusions: set[int],
                     rng: np.random.Generator,
                     smoothing: float = SMOOTHING) -> list[int]:
    """k distinct non-excluded item ids, popularity-proportional."""
    num_items = popularity.shape[0]
    pool = num_items - len(exclusions)
    if k > pool:
        raise ValueError(
            f"cannot draw {k} negatives: only {pool} items outside the "
            f"exclusion set")
    weights = popularity + smoothing
    if exclusions:
        weights[list(exclusions)] = 0.0
    drawn: list[int] = []
    for _ in range(k):
        probs = weights / weights.sum()
        pick = int(rng.choice(num_items, p=probs))
        drawn.append(pick)
        weights[pick] = 0.0
    return drawn
