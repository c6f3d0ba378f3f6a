"""Interaction logs, knowledge-graph triples and the transH energy.

File formats are plain TSV with LF line endings:

* ``interactions.tsv``: ``user <TAB> item <TAB> timestamp`` (header optional)
* ``triples.tsv``: ``head <TAB> relation <TAB> tail`` with string ids

Items are head entities, so the entity vocabulary is seeded with the item
vocabulary and an item's embedding row is its head-entity row. Relation
ids are 1-based and double as attribute slot indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, add, dot, mul, row, stack, sub, sum_all


class Vocab:
    """Dense string-to-id mapping in first-seen order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._tokens: list[str] = []
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        found = self._ids.get(token)
        if found is not None:
            return found
        new_id = len(self._tokens)
        self._ids[token] = new_id
        self._tokens.append(token)
        return new_id

    def id(self, token: str) -> int:
        return self._ids[token]

    def token(self, i: int) -> str:
        return self._tokens[i]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __len__(self) -> int:
        return len(self._tokens)


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    timestamp: int


@dataclass(frozen=True)
class Triple:
    """One knowledge fact: head entity, 1-based relation id, tail entity."""
    head: int
    relation: int
    tail: int


class AttributeTable:
    """Per-item attribute slots; slot i holds the tail ids of relation i."""

    def __init__(self, num_attributes: int):
        if num_attributes < 1:
            raise ValueError("num_attributes must be >= 1")
        self.num_attributes = num_attributes
        self._slots: dict[int, list[list[int]]] = {}
        self._empty: tuple[tuple[int, ...], ...] = tuple(
            () for _ in range(num_attributes))

    def add(self, head: int, relation: int, tail: int) -> None:
        if not 1 <= relation <= self.num_attributes:
            raise ValueError(f"relation id {relation} outside [1, {self.num_attributes}]")
        slots = self._slots.setdefault(
            head, [[] for _ in range(self.num_attributes)])
        values = slots[relation - 1]
        if tail not in values:
            values.append(tail)

    def slots(self, head: int) -> tuple[tuple[int, ...], ...]:
        """M value tuples for one item; all empty if the item has no triples."""
        slots = self._slots.get(head)
        if slots is None:
            return self._empty
        return tuple(tuple(v) for v in slots)

    def heads(self) -> list[int]:
        return sorted(self._slots)

    def __len__(self) -> int:
        return len(self._slots)


def _read_rows(path: str | Path, n_cols: int) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != n_cols:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_cols} tab-separated fields, "
                    f"got {len(fields)}")
            rows.append((lineno, fields))
    if not rows:
        raise ValueError(f"{path}: file is empty")
    return rows


def load_interactions(path: str | Path) -> tuple[list[Interaction], Vocab, Vocab]:
    """Read ``user \\t item \\t timestamp`` rows.

    Ids are assigned densely in first-seen order. Duplicate (user, item)
    pairs collapse to the latest timestamp. A first line whose timestamp
    column does not parse as an integer is treated as a header.
    """
    rows = _read_rows(path, 3)
    users, items = Vocab(), Vocab()
    latest: dict[tuple[int, int], int] = {}
    order: list[tuple[int, int]] = []
    for pos, (lineno, (user_tok, item_tok, ts_tok)) in enumerate(rows):
        try:
            ts = int(ts_tok)
        except ValueError:
            if pos == 0:
                continue  # header line
            raise ValueError(
                f"{path}:{lineno}: timestamp {ts_tok!r} is not an integer") from None
        key = (users.add(user_tok), items.add(item_tok))
        if key not in latest:
            order.append(key)
        elif latest[key] >= ts:
            continue
        latest[key] = ts
    if not latest:
        raise ValueError(f"{path}: no interaction rows")
    interactions = [Interaction(u, i, latest[(u, i)]) for u, i in order]
    return interactions, users, items


def load_triples(path: str | Path, num_attributes: int,
                 entity_vocab: Vocab | None = None,
                 relation_names: Sequence[str] | None = None,
                 ) -> tuple[list[Triple], Vocab, list[str], AttributeTable]:
    """Read ``head \\t relation \\t tail`` rows into triples and slots.

    ``entity_vocab`` is usually pre-seeded with the item vocabulary so item
    ids and head-entity ids coincide; unseen heads and all tails extend it.
    ``relation_names`` pins the slot order; otherwise slots follow
    first-seen relation order. More than ``num_attributes`` distinct
    relations is a configuration error.
    """
    entities = entity_vocab if entity_vocab is not None else Vocab()
    relations: list[str] = list(relation_names) if relation_names else []
    if len(relations) > num_attributes:
        raise ValueError(
            f"{len(relations)} relation names configured but num_attributes={num_attributes}")
    table = AttributeTable(num_attributes)
    triples: list[Triple] = []
    try:
        rows = _read_rows(path, 3)
    except ValueError as exc:
        if str(exc).endswith("file is empty"):
            return [], entities, relations, table
        raise
    for lineno, (head_tok, rel_tok, tail_tok) in rows:
        if rel_tok in relations:
            rel_id = relations.index(rel_tok) + 1
        elif relation_names is not None:
            raise ValueError(
                f"{path}:{lineno}: relation {rel_tok!r} not in the configured "
                f"relation list {relations}")
        else:
            relations.append(rel_tok)
            if len(relations) > num_attributes:
                raise ValueError(
                    f"{path}:{lineno}: found more than {num_attributes} distinct "
                    f"relations (adding {rel_tok!r})")
            rel_id = len(relations)
        head = entities.add(head_tok)
        tail = entities.add(tail_tok)
        triples.append(Triple(head, rel_id, tail))
        table.add(head, rel_id, tail)
    return triples, entities, relations, table


@dataclass
class Dataset:
    """Everything the trainer and evaluator need, loaded once."""

    interactions: list[Interaction]
    users: Vocab
    items: Vocab
    entities: Vocab
    triples: list[Triple]
    relations: list[str]
    attr_table: AttributeTable

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_items(self) -> int:
        return len(self.items)

    @property
    def num_entities(self) -> int:
        return len(self.entities)


def load_dataset(interactions_path: str | Path, triples_path: str | Path,
                 num_attributes: int,
                 relation_names: Sequence[str] | None = None) -> Dataset:
    interactions, users, items = load_interactions(interactions_path)
    entities = Vocab(items.token(i) for i in range(len(items)))
    triples, entities, relations, table = load_triples(
        triples_path, num_attributes, entity_vocab=entities,
        relation_names=relation_names)
    return Dataset(interactions, users, items, entities, triples, relations, table)


def transh_energy(tape: Tape, triple: Triple, entity_table: np.ndarray,
                  normals: np.ndarray, translations: np.ndarray) -> Tensor:
    """Squared norm of the hyperplane-projected translation residual.

    Head and tail embeddings are projected off the relation's unit normal,
    then the translation is applied: ||(h - (w.h)w) + d - (t - (w.t)w)||^2.
    Differentiable in all four tensors; zero exactly when the projected
    head plus the translation meets the projected tail.
    """
    ent = tape.leaf(entity_table)
    h = row(ent, triple.head)
    t = row(ent, triple.tail)
    w = row(tape.leaf(normals), triple.relation - 1)
    d = row(tape.leaf(translations), triple.relation - 1)
    h_proj = sub(h, mul(w, dot(w, h)))
    t_proj = sub(t, mul(w, dot(w, t)))
    resid = sub(add(h_proj, d), t_proj)
    return dot(resid, resid)


def kge_batch_loss(tape: Tape, triples: Sequence[Triple], entity_table: np.ndarray,
                   normals: np.ndarray, translations: np.ndarray) -> Tensor:
    """Mean transH energy over a sampled triple batch."""
    if len(triples) == 0:
        raise ValueError("kge_batch_loss needs a nonempty triple batch")
    energies = [transh_energy(tape, t, entity_table, normals, translations)
                for t in triples]
    return sum_all(stack(energies)) * (1.0 / len(energies))
