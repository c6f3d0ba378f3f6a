"""TSV loaders, vocabularies, attribute slots and the transH energy."""

import numpy as np
import pytest

import oracles
from acam.autodiff import Tape
from acam.gradcheck import finite_difference_grad, gradient_mismatches
from acam.kg import (
    AttributeTable,
    Triple,
    Vocab,
    kge_batch_loss,
    load_dataset,
    load_interactions,
    load_triples,
    transh_energy,
)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# vocabularies and attribute slots


def test_vocab_assigns_dense_first_seen_ids():
    vocab = Vocab(["b", "a", "b", "c"])
    assert [vocab.id(t) for t in ("b", "a", "c")] == [0, 1, 2]
    assert vocab.add("a") == 1
    assert vocab.add("d") == 3
    assert vocab.token(2) == "c"
    assert "a" in vocab and "z" not in vocab
    assert len(vocab) == 4


def test_attribute_table_dedups_and_slots():
    table = AttributeTable(2)
    table.add(7, 1, 100)
    table.add(7, 1, 100)
    table.add(7, 1, 101)
    table.add(7, 2, 200)
    assert table.slots(7) == ((100, 101), (200,))
    assert table.slots(99) == ((), ())
    assert table.heads() == [7]
    with pytest.raises(ValueError, match=r"relation id 3 outside"):
        table.add(7, 3, 1)
    with pytest.raises(ValueError, match=r"relation id 0 outside"):
        table.add(7, 0, 1)
    with pytest.raises(ValueError):
        AttributeTable(0)


# ---------------------------------------------------------------------------
# interaction loading


def test_load_interactions_basic(tmp_path):
    path = write(tmp_path, "i.tsv", "u1\ti1\t5\nu2\ti2\t3\nu1\ti2\t9\n")
    interactions, users, items = load_interactions(path)
    assert [(r.user, r.item, r.timestamp) for r in interactions] == [
        (0, 0, 5), (1, 1, 3), (0, 1, 9)]
    assert users.token(0) == "u1" and items.token(1) == "i2"


def test_load_interactions_skips_header(tmp_path):
    path = write(tmp_path, "i.tsv", "user\titem\ttimestamp\nu1\ti1\t5\n")
    interactions, users, items = load_interactions(path)
    assert len(interactions) == 1
    assert "user" not in users and "item" not in items


def test_load_interactions_duplicate_keeps_latest_timestamp(tmp_path):
    path = write(tmp_path, "i.tsv", "u1\ti1\t5\nu1\ti1\t9\nu1\ti1\t2\n")
    interactions, _, _ = load_interactions(path)
    assert interactions == [type(interactions[0])(0, 0, 9)]


def test_load_interactions_bad_timestamp_names_line(tmp_path):
    path = write(tmp_path, "i.tsv", "u1\ti1\t5\nu2\ti2\t3\nu3\ti3\tlater\n")
    with pytest.raises(ValueError, match=r"i\.tsv:3.*'later'"):
        load_interactions(path)


def test_load_interactions_bad_column_count_names_line(tmp_path):
    path = write(tmp_path, "i.tsv", "u1\ti1\t5\nu2\ti2\n")
    with pytest.raises(ValueError, match=r"i\.tsv:2.*expected 3"):
        load_interactions(path)


def test_load_interactions_empty_file_rejected(tmp_path):
    path = write(tmp_path, "i.tsv", "")
    with pytest.raises(ValueError, match="empty"):
        load_interactions(path)
    header_only = write(tmp_path, "h.tsv", "user\titem\ttimestamp\n")
    with pytest.raises(ValueError, match="no interaction rows"):
        load_interactions(header_only)


def test_load_interactions_blank_lines_ignored(tmp_path):
    path = write(tmp_path, "i.tsv", "u1\ti1\t5\n\nu2\ti2\t3\n")
    interactions, _, _ = load_interactions(path)
    assert len(interactions) == 2


# ---------------------------------------------------------------------------
# triple loading


def test_load_triples_fills_slots_and_extends_vocab(tmp_path):
    path = write(tmp_path, "t.tsv", "i1\tgenre\trock\ni1\tgenre\tjazz\n"
                                    "i2\tartist\tmiles\n")
    vocab = Vocab(["i1", "i2"])
    triples, entities, relations, table = load_triples(path, 2, vocab)
    assert relations == ["genre", "artist"]
    assert [t for t in triples] == [Triple(0, 1, 2), Triple(0, 1, 3),
                                    Triple(1, 2, 4)]
    assert table.slots(0) == ((2, 3), ())
    assert table.slots(1) == ((), (4,))
    assert entities.token(4) == "miles"


def test_load_triples_unseen_head_becomes_new_entity(tmp_path):
    path = write(tmp_path, "t.tsv", "weird\tgenre\trock\n")
    vocab = Vocab(["i1"])
    triples, entities, _, _ = load_triples(path, 1, vocab)
    assert triples == [Triple(1, 1, 2)]
    assert entities.token(1) == "weird"


def test_load_triples_too_many_relations_rejected(tmp_path):
    path = write(tmp_path, "t.tsv", "i1\tgenre\trock\ni1\tartist\tmiles\n")
    with pytest.raises(ValueError, match=r"t\.tsv:2.*more than 1.*'artist'"):
        load_triples(path, 1)


def test_load_triples_pinned_relation_order(tmp_path):
    path = write(tmp_path, "t.tsv", "i1\tartist\tmiles\ni1\tgenre\trock\n")
    triples, _, relations, _ = load_triples(
        path, 2, relation_names=["genre", "artist"])
    assert relations == ["genre", "artist"]
    assert [t.relation for t in triples] == [2, 1]


def test_load_triples_unknown_relation_with_pinned_names(tmp_path):
    path = write(tmp_path, "t.tsv", "i1\tcolor\tred\n")
    with pytest.raises(ValueError, match=r"t\.tsv:1.*'color'"):
        load_triples(path, 2, relation_names=["genre", "artist"])


def test_load_triples_empty_file_is_valid(tmp_path):
    path = write(tmp_path, "t.tsv", "")
    triples, entities, relations, table = load_triples(path, 3)
    assert triples == [] and relations == [] and len(table) == 0


def test_load_dataset_items_head_entity_ids_coincide(tmp_path):
    inter = write(tmp_path, "i.tsv", "u1\tm2\t1\nu1\tm1\t2\n")
    trip = write(tmp_path, "t.tsv", "m1\tgenre\trock\n")
    ds = load_dataset(inter, trip, 2)
    assert ds.num_users == 1 and ds.num_items == 2
    # item id == head entity id for every item token
    for i in range(ds.num_items):
        assert ds.entities.id(ds.items.token(i)) == i
    assert ds.num_entities == 3
    assert ds.attr_table.slots(ds.items.id("m1")) == ((2,), ())


# ---------------------------------------------------------------------------
# transH energy


def rand_kg(rng, num_entities=6, m=2, d=4):
    ent = rng.standard_normal((num_entities, d))
    normals = rng.standard_normal((m, d))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    trans = rng.standard_normal((m, d))
    return ent, normals, trans


@pytest.mark.parametrize("seed", range(20))
def test_transh_energy_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    ent, normals, trans = rand_kg(rng)
    triple = Triple(int(rng.integers(6)), int(rng.integers(1, 3)),
                    int(rng.integers(6)))
    tape = Tape()
    got = transh_energy(tape, triple, ent, normals, trans).item()
    want = oracles.transh_energy(ent[triple.head], ent[triple.tail],
                                 normals[triple.relation - 1],
                                 trans[triple.relation - 1])
    assert got == pytest.approx(want, abs=1e-12)
    assert got >= 0.0


def test_transh_energy_zero_when_projection_matches():
    # identical head and tail with zero translation: residual vanishes
    ent = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    normals = np.array([[1.0, 0.0, 0.0]])
    trans = np.zeros((1, 3))
    tape = Tape()
    assert transh_energy(tape, Triple(0, 1, 1), ent, normals, trans).item() == 0.0
    # head and tail differing only along the normal also project together
    ent2 = np.array([[5.0, 2.0, 3.0], [-1.0, 2.0, 3.0]])
    tape2 = Tape()
    assert transh_energy(tape2, Triple(0, 1, 1), ent2, normals,
                         trans).item() == pytest.approx(0.0, abs=1e-12)


def test_transh_energy_invariant_to_normal_sign():
    rng = np.random.default_rng(7)
    ent, normals, trans = rand_kg(rng)
    tape = Tape()
    plus = transh_energy(tape, Triple(0, 1, 3), ent, normals, trans).item()
    tape2 = Tape()
    minus = transh_energy(tape2, Triple(0, 1, 3), ent, -normals, trans).item()
    assert plus == pytest.approx(minus, abs=1e-12)


def test_transh_energy_hand_value():
    # h=(1,0), t=(0,0), w=(0,1), d=(0.5,0): residual (1.5, 0) -> 2.25
    ent = np.array([[1.0, 0.0], [0.0, 0.0]])
    normals = np.array([[0.0, 1.0]])
    trans = np.array([[0.5, 0.0]])
    tape = Tape()
    assert transh_energy(tape, Triple(0, 1, 1), ent, normals,
                         trans).item() == pytest.approx(2.25, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_transh_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ent, normals, trans = rand_kg(rng)
    triples = [Triple(int(rng.integers(6)), int(rng.integers(1, 3)),
                      int(rng.integers(6))) for _ in range(4)]

    def loss_value():
        tape = Tape()
        return kge_batch_loss(tape, triples, ent, normals, trans).item()

    tape = Tape()
    leaves = [tape.leaf(a) for a in (ent, normals, trans)]
    grads = tape.backward(kge_batch_loss(tape, triples, ent, normals, trans))
    for arr, leaf in zip((ent, normals, trans), leaves):
        numeric = finite_difference_grad(loss_value, arr)
        failing, worst = gradient_mismatches(grads[leaf], numeric)
        assert failing == 0, f"worst rel err {worst}"


def test_kge_batch_loss_is_mean_of_triple_energies():
    rng = np.random.default_rng(3)
    ent, normals, trans = rand_kg(rng)
    triples = [Triple(0, 1, 2), Triple(3, 2, 4), Triple(5, 1, 0)]
    tape = Tape()
    got = kge_batch_loss(tape, triples, ent, normals, trans).item()
    want = oracles.kge_mean_energy(triples, ent, normals, trans)
    assert got == pytest.approx(want, abs=1e-12)


def test_kge_batch_loss_rejects_empty_batch():
    rng = np.random.default_rng(0)
    ent, normals, trans = rand_kg(rng)
    with pytest.raises(ValueError, match="nonempty"):
        kge_batch_loss(Tape(), [], ent, normals, trans)
