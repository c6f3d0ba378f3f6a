"""Synthetic interaction and knowledge-graph worlds with planted structure.

Every attribute's k-th value shares one latent concept direction with the
k-th value of every other attribute; an item's latent is the mean of its
value latents and a user's is the mean of a few "taste seed" items. Each
interaction is drawn from a softmax over user-item latent affinity mixed
with uniform noise, so the correlation strength rho is exactly the
fraction of signal-driven choices. The planted cross-attribute value
groups are written out as ground truth for diagnostics.

Taste seeds are not drawn uniformly: one anchor item is picked per world
and seed sampling is tilted toward items whose latents align with the
anchor's (strength set by taste_concentration, 0 recovers uniform).
Shared seeds give users overlapping tastes, which is what produces a
realistic heavy-tailed item popularity distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LATENT_DIM = 8


@dataclass(frozen=True)
class WorldSpec:
    users: int = 200
    items: int = 500
    num_attributes: int = 2
    values_per_attribute: int = 4
    interactions_min: int = 20
    interactions_max: int = 40
    correlation: float = 0.8
    sharpness: float = 16.0
    taste_seeds: int = 1
    taste_concentration: float = 20.0
    seed: int = 0

    def __post_init__(self):
        problems = []
        for name in ("users", "items", "num_attributes", "values_per_attribute",
                     "interactions_min", "interactions_max", "taste_seeds"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if not 0.0 <= self.correlation <= 1.0:
            problems.append("correlation must be in [0, 1]")
        if self.values_per_attribute > LATENT_DIM:
            problems.append(
                f"values_per_attribute exceeds the {LATENT_DIM} available "
                "latent directions")
        if self.interactions_min > self.interactions_max:
            problems.append("interactions_min must be <= interactions_max")
        if self.interactions_max > self.items:
            problems.append(
                "interactions_max exceeds item count (draws are distinct)")
        if self.taste_seeds > self.items:
            problems.append("taste_seeds exceeds item count")
        if self.sharpness < 0:
            problems.append("sharpness must be >= 0")
        if self.taste_concentration < 0:
            problems.append("taste_concentration must be >= 0")
        if problems:
            raise ValueError("invalid world spec: " + "; ".join(problems))


@dataclass
class World:
    spec: WorldSpec
    interactions: list[tuple[str, str, int]]   # (user token, item token, ts)
    triples: list[tuple[str, str, str]]        # (item, relation, value tokens)
    item_values: np.ndarray                    # (items, M) value indices
    item_latents: np.ndarray                   # (items, LATENT_DIM)
    user_latents: np.ndarray                   # (users, LATENT_DIM)
    user_seeds: list[list[int]]                # taste-seed item ids per user
    anchor_item: int                           # item whose latent tilts seeds


def user_token(u: int) -> str:
    return f"u{u}"


def item_token(i: int) -> str:
    return f"i{i}"


def value_token(attribute: int, value: int) -> str:
    return f"a{attribute}v{value}"


def relation_token(attribute: int) -> str:
    return f"attr{attribute}"


def generate(spec: WorldSpec) -> World:
    """Build one world deterministically from its spec."""
    rng = np.random.default_rng(spec.seed)
    k = spec.values_per_attribute
    # orthonormal concept directions, one per value index
    basis, _ = np.linalg.qr(rng.standard_normal((LATENT_DIM, LATENT_DIM)))
    concepts = basis.T[:k]

    item_values = rng.integers(0, k, size=(spec.items, spec.num_attributes))
    item_latents = concepts[item_values].mean(axis=1)

    anchor = int(rng.integers(spec.items))
    tilt = spec.taste_concentration * (item_latents @ item_latents[anchor])
    seed_probs = np.exp(tilt - tilt.max())
    seed_probs /= seed_probs.sum()

    user_seeds = []
    user_latents = np.zeros((spec.users, LATENT_DIM))
    for u in range(spec.users):
        seeds = sorted(int(i) for i in
                       rng.choice(spec.items, size=spec.taste_seeds,
                                  replace=False, p=seed_probs))
        user_seeds.append(seeds)
        user_latents[u] = item_latents[seeds].mean(axis=0)

    interactions = []
    timestamp = 0
    uniform = 1.0 / spec.items
    for u in range(spec.users):
        affinity = item_latents @ user_latents[u]
        shifted = np.exp(spec.sharpness * (affinity - affinity.max()))
        preference = (spec.correlation * shifted / shifted.sum()
                      + (1.0 - spec.correlation) * uniform)
        count = int(rng.integers(spec.interactions_min,
                                 spec.interactions_max + 1))
        weights = preference.copy()
        for _ in range(count):
            probs = weights / weights.sum()
            pick = int(rng.choice(spec.items, p=probs))
            weights[pick] = 0.0
            timestamp += 1
            interactions.append((user_token(u), item_token(pick), timestamp))

    triples = [(item_token(i), relation_token(a),
                value_token(a, int(item_values[i, a])))
               for i in range(spec.items)
               for a in range(spec.num_attributes)]
    return World(spec, interactions, triples, item_values, item_latents,
                 user_latents, user_seeds, anchor)


def ground_truth_blob(world: World) -> dict:
    spec = world.spec
    groups = [[value_token(a, v) for a in range(spec.num_attributes)]
              for v in range(spec.values_per_attribute)]

    def rounded(arr: np.ndarray) -> list[list[float]]:
        return [[round(float(x), 6) for x in row] for row in arr]

    return {
        "spec": {
            "users": spec.users, "items": spec.items,
            "num_attributes": spec.num_attributes,
            "values_per_attribute": spec.values_per_attribute,
            "interactions_min": spec.interactions_min,
            "interactions_max": spec.interactions_max,
            "correlation": spec.correlation, "sharpness": spec.sharpness,
            "taste_seeds": spec.taste_seeds,
            "taste_concentration": spec.taste_concentration,
            "seed": spec.seed,
        },
        "latent_dim": LATENT_DIM,
        "anchor_item": item_token(world.anchor_item),
        "correlated_value_groups": groups,
        "relations": [relation_token(a) for a in range(spec.num_attributes)],
        "user_seed_items": {user_token(u): [item_token(i) for i in seeds]
                            for u, seeds in enumerate(world.user_seeds)},
        "item_latents": rounded(world.item_latents),
        "user_latents": rounded(world.user_latents),
    }


def write_world(world: World, out_dir: str | Path) -> dict[str, Path]:
    """Write interactions.tsv, triples.tsv and ground_truth.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": out / "interactions.tsv",
        "triples": out / "triples.tsv",
        "ground_truth": out / "ground_truth.json",
    }
    with open(paths["interactions"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user\titem\ttimestamp\n")
        for user, item, ts in world.interactions:
            fh.write(f"{user}\t{item}\t{ts}\n")
    with open(paths["triples"], "w", encoding="utf-8", newline="\n") as fh:
        for head, relation, tail in world.triples:
            fh.write(f"{head}\t{relation}\t{tail}\n")
    with open(paths["ground_truth"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(ground_truth_blob(world), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
