"""Item/user representations, co-attention and the prediction head."""

import time

import numpy as np
import pytest

import oracles
from acam.autodiff import Tape
from acam.kg import AttributeTable
from acam.model import (
    Hyperparams,
    ModelParams,
    RepCache,
    UserHistory,
    coattention,
    item_representation,
    predict,
    user_representation,
)

TINY = Hyperparams(dim=4, key_dim=4, value_dim=4, num_attributes=2,
                   history_len=3, mlp_hidden=(5, 3), lambda1=0.1, lambda2=0.01)


def tiny_world(rng, num_items=6, values_per_attribute=3,
               hyper=TINY, all_slots_filled=False):
    """Random params and attribute table; item 0 keeps empty slots."""
    m = hyper.num_attributes
    table = AttributeTable(m)
    next_entity = num_items
    value_ids = {}
    for a in range(1, m + 1):
        for v in range(values_per_attribute):
            value_ids[(a, v)] = next_entity
            next_entity += 1
    first_item = 0 if all_slots_filled else 1
    for item in range(first_item, num_items):
        for a in range(1, m + 1):
            count = int(rng.integers(1, 3))
            picks = rng.choice(values_per_attribute, size=count, replace=False)
            for v in picks:
                table.add(item, a, value_ids[(a, int(v))])
    params = ModelParams.init(next_entity, hyper, rng)
    return params, table


# ---------------------------------------------------------------------------
# hyperparameter validation


def test_hyperparams_validation_collects_problems():
    with pytest.raises(ValueError) as err:
        Hyperparams(dim=0, num_attributes=0, lambda1=-1.0)
    message = str(err.value)
    assert "dim" in message and "num_attributes" in message
    assert "lambda1" in message


def test_hyperparams_tie_requires_matching_dims():
    with pytest.raises(ValueError, match="tie_kv"):
        Hyperparams(dim=4, key_dim=8, value_dim=4, tie_kv=True)
    untied = Hyperparams(dim=4, key_dim=8, value_dim=6, tie_kv=False,
                         num_attributes=2, mlp_hidden=(3, 2))
    assert untied.mlp_input_dim == 2 * 6 + 2 * 4


def test_hyperparams_mlp_hidden_must_be_two_widths():
    with pytest.raises(ValueError, match="mlp_hidden"):
        Hyperparams(mlp_hidden=(4,))


# ---------------------------------------------------------------------------
# parameter containers


def test_tied_params_share_arrays_and_named_dedupes():
    rng = np.random.default_rng(0)
    params = ModelParams.init(10, TINY, rng)
    assert params.w_vu is params.w_ku
    assert params.b_vv is params.b_kv
    named = params.named()
    assert "w_vu" not in named and "b_vv" not in named
    assert len(named) == 18


def test_untied_params_keep_all_arrays():
    hyper = Hyperparams(dim=4, key_dim=3, value_dim=5, num_attributes=2,
                        mlp_hidden=(5, 3), tie_kv=False)
    params = ModelParams.init(10, hyper, np.random.default_rng(0))
    assert params.w_vu is not params.w_ku
    assert params.w_vu.shape == (4, 5) and params.w_ku.shape == (4, 3)
    assert len(params.named()) == 22


def test_init_is_seed_deterministic():
    a = ModelParams.init(8, TINY, np.random.default_rng(42))
    b = ModelParams.init(8, TINY, np.random.default_rng(42))
    for name, arr in a.named().items():
        assert np.array_equal(arr, b.named()[name])


def test_init_relation_normals_are_unit_length():
    params = ModelParams.init(8, TINY, np.random.default_rng(1))
    np.testing.assert_allclose(np.linalg.norm(params.rel_normals, axis=1),
                               1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# item representation


def test_item_representation_shape_and_rows():
    rng = np.random.default_rng(0)
    params, table = tiny_world(rng)
    tape = Tape()
    rep = item_representation(tape, 2, params, table)
    assert rep.shape == (TINY.num_attributes + 1, TINY.dim)
    np.testing.assert_array_equal(rep.data[0], params.entity_emb[2])


def test_item_representation_multivalue_slot_is_mean():
    table = AttributeTable(1)
    table.add(0, 1, 1)
    table.add(0, 1, 2)
    hyper = Hyperparams(dim=2, key_dim=2, value_dim=2, num_attributes=1,
                        mlp_hidden=(2, 2))
    params = ModelParams.zeros(3, hyper)
    params.entity_emb[1] = [2.0, 0.0]
    params.entity_emb[2] = [0.0, 2.0]
    tape = Tape()
    rep = item_representation(tape, 0, params, table)
    np.testing.assert_array_equal(rep.data[1], np.array([1.0, 1.0]))


def test_item_representation_empty_slot_uses_stand_in():
    rng = np.random.default_rng(0)
    params, table = tiny_world(rng)
    tape = Tape()
    rep = item_representation(tape, 0, params, table)   # item 0 has no triples
    np.testing.assert_array_equal(rep.data[1:], params.unknown_emb)


def test_item_representation_matches_loop_oracle():
    rng = np.random.default_rng(5)
    params, table = tiny_world(rng)
    for item in range(6):
        tape = Tape()
        got = item_representation(tape, item, params, table).data
        want = oracles.item_rep(params, table, item)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_item_representation_rejects_unknown_item():
    rng = np.random.default_rng(0)
    params, table = tiny_world(rng)
    with pytest.raises(ValueError, match="unknown item"):
        item_representation(Tape(), 999, params, table)


def test_item_representation_gradient_reaches_entity_table():
    rng = np.random.default_rng(0)
    params, table = tiny_world(rng)
    tape = Tape()
    ent = tape.leaf(params.entity_emb)
    rep = item_representation(tape, 2, params, table)
    from acam.autodiff import sum_all
    grads = tape.backward(sum_all(rep))
    assert np.any(grads[ent] != 0.0)


def test_rep_cache_reuses_subgraphs():
    rng = np.random.default_rng(0)
    params, table = tiny_world(rng)
    tape = Tape()
    cache = RepCache(tape, params, table)
    assert cache.get(3) is cache.get(3)
    before = len(tape)
    cache.get(3)
    assert len(tape) == before


# ---------------------------------------------------------------------------
# user representation


def test_user_history_rejects_empty():
    with pytest.raises(ValueError, match="at least one item"):
        UserHistory(())


def test_user_representation_matches_loop_oracle():
    rng = np.random.default_rng(9)
    params, table = tiny_world(rng)
    history = UserHistory((2, 4, 0))
    tape = Tape()
    cache = RepCache(tape, params, table)
    cand = cache.get(5)
    got = user_representation(tape, history, cand, params, TINY, cache).data
    hist_reps = [oracles.item_rep(params, table, i) for i in history.items]
    cand_rep = oracles.item_rep(params, table, 5)
    want = oracles.user_rep(params, TINY, hist_reps, cand_rep)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_user_representation_softmax_variant_matches_oracle():
    hyper = Hyperparams(dim=4, key_dim=4, value_dim=4, num_attributes=2,
                        history_len=3, mlp_hidden=(5, 3),
                        attention_softmax=True)
    rng = np.random.default_rng(10)
    params, table = tiny_world(rng, hyper=hyper)
    history = UserHistory((1, 3))
    tape = Tape()
    cache = RepCache(tape, params, table)
    cand = cache.get(2)
    got = user_representation(tape, history, cand, params, hyper, cache).data
    hist_reps = [oracles.item_rep(params, table, i) for i in history.items]
    want = oracles.user_rep(params, hyper, hist_reps,
                            oracles.item_rep(params, table, 2))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_user_representation_single_item_weights_that_item():
    # with one history item the pooled row i is weight_i * item_row_i
    rng = np.random.default_rng(4)
    params, table = tiny_world(rng)
    tape = Tape()
    cache = RepCache(tape, params, table)
    cand = cache.get(3)
    got = user_representation(tape, UserHistory((2,)), cand, params, TINY,
                              cache).data
    rep = oracles.item_rep(params, table, 2)
    cand_rep = oracles.item_rep(params, table, 3)
    for i in range(TINY.num_attributes + 1):
        weight = oracles.attention_weight(params, rep[i], cand_rep[i])
        np.testing.assert_allclose(got[i], weight * rep[i], atol=1e-12)


def test_user_representation_is_candidate_conditioned():
    rng = np.random.default_rng(8)
    params, table = tiny_world(rng)
    history = UserHistory((1, 2))
    tape = Tape()
    cache = RepCache(tape, params, table)
    rep_a = user_representation(tape, history, cache.get(3), params, TINY,
                                cache).data.copy()
    rep_b = user_representation(tape, history, cache.get(4), params, TINY,
                                cache).data.copy()
    assert not np.allclose(rep_a, rep_b)


def test_constant_attention_net_reduces_to_plain_sum():
    # zero the attention net and set its output bias to 1: pooling becomes
    # an unweighted sum of history rows
    rng = np.random.default_rng(2)
    params, table = tiny_world(rng)
    params.attn_w1[:] = 0.0
    params.attn_b1[:] = 0.0
    params.attn_w2[:] = 0.0
    params.attn_b2 = np.asarray(1.0)
    history = UserHistory((1, 2, 4))
    tape = Tape()
    cache = RepCache(tape, params, table)
    cand = cache.get(5)
    got = user_representation(tape, history, cand, params, TINY, cache).data
    want = sum(oracles.item_rep(params, table, i) for i in history.items)
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---------------------------------------------------------------------------
# co-attention


def test_coattention_matches_loop_oracle_small():
    hyper = Hyperparams(dim=2, key_dim=2, value_dim=2, num_attributes=1,
                        mlp_hidden=(3, 2))
    rng = np.random.default_rng(3)
    params = ModelParams.init(4, hyper, rng)
    e_u = rng.standard_normal((2, 2))
    e_v = rng.standard_normal((2, 2))
    tape = Tape()
    r_u, r_v, s = coattention(tape, tape.constant(e_u), tape.constant(e_v),
                              params, hyper)
    want_u, want_v, want_s = oracles.coattention(params, hyper, e_u, e_v)
    np.testing.assert_allclose(s.data, want_s, atol=1e-12)
    np.testing.assert_allclose(r_u.data, want_u, atol=1e-12)
    np.testing.assert_allclose(r_v.data, want_v, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_coattention_matches_loop_oracle_random(seed):
    rng = np.random.default_rng(seed)
    params, _ = tiny_world(rng)
    m1 = TINY.num_attributes + 1
    e_u = rng.standard_normal((m1, TINY.dim))
    e_v = rng.standard_normal((m1, TINY.dim))
    tape = Tape()
    r_u, r_v, s = coattention(tape, tape.constant(e_u), tape.constant(e_v),
                              params, TINY)
    want_u, want_v, want_s = oracles.coattention(params, TINY, e_u, e_v)
    np.testing.assert_allclose(r_u.data, want_u, atol=1e-12)
    np.testing.assert_allclose(r_v.data, want_v, atol=1e-12)
    np.testing.assert_allclose(s.data, want_s, atol=1e-12)


def test_coattention_ablation_uses_uniform_weights():
    rng = np.random.default_rng(6)
    hyper_off = Hyperparams(dim=4, key_dim=4, value_dim=4, num_attributes=2,
                            mlp_hidden=(5, 3), use_coattention=False)
    params, _ = tiny_world(rng, hyper=hyper_off)
    m1 = hyper_off.num_attributes + 1
    e_u = rng.standard_normal((m1, 4))
    e_v = rng.standard_normal((m1, 4))
    tape = Tape()
    r_u, r_v, _ = coattention(tape, tape.constant(e_u), tape.constant(e_v),
                              params, hyper_off)
    want_u, want_v, _ = oracles.coattention(params, hyper_off, e_u, e_v)
    np.testing.assert_allclose(r_u.data, want_u, atol=1e-12)
    np.testing.assert_allclose(r_v.data, want_v, atol=1e-12)


def test_coattention_row_permutation_leaves_summaries_unchanged():
    rng = np.random.default_rng(12)
    params, _ = tiny_world(rng)
    m1 = TINY.num_attributes + 1
    e_u = rng.standard_normal((m1, TINY.dim))
    e_v = rng.standard_normal((m1, TINY.dim))
    perm = np.array([2, 0, 1])
    tape = Tape()
    r_u, r_v, s = coattention(tape, tape.constant(e_u), tape.constant(e_v),
                              params, TINY)
    tape2 = Tape()
    r_u_p, r_v_p, s_p = coattention(tape2, tape2.constant(e_u[perm]),
                                    tape2.constant(e_v[perm]), params, TINY)
    np.testing.assert_allclose(r_u_p.data, r_u.data, atol=1e-12)
    np.testing.assert_allclose(r_v_p.data, r_v.data, atol=1e-12)
    np.testing.assert_allclose(s_p.data, s.data[perm][:, perm], atol=1e-12)


def test_coattention_rejects_wrong_shapes():
    rng = np.random.default_rng(0)
    params, _ = tiny_world(rng)
    tape = Tape()
    good = tape.constant(rng.standard_normal((3, 4)))
    bad = tape.constant(rng.standard_normal((2, 4)))
    with pytest.raises(ValueError, match="coattention expects"):
        coattention(tape, good, bad, params, TINY)


# ---------------------------------------------------------------------------
# prediction


def test_predict_zero_params_scores_one_half():
    hyper = TINY
    params = ModelParams.zeros(8, hyper)
    table = AttributeTable(hyper.num_attributes)
    tape = Tape()
    score = predict(tape, UserHistory((1, 2)), 3, params, hyper, table)
    assert score.item() == 0.5


def test_predict_output_in_unit_interval():
    rng = np.random.default_rng(0)
    params, table = tiny_world(rng)
    for item in range(6):
        tape = Tape()
        score = predict(tape, UserHistory((0, 1)), item, params, TINY,
                        table).item()
        assert 0.0 < score < 1.0


def test_predict_matches_loop_oracle():
    rng = np.random.default_rng(21)
    params, table = tiny_world(rng)
    history = (5, 1, 0)
    tape = Tape()
    got = predict(tape, UserHistory(history), 2, params, TINY, table).item()
    want = oracles.predict(params, TINY, table, history, 2)
    assert got == pytest.approx(want, abs=1e-10)


def test_predict_matches_loop_oracle_many_random_worlds():
    start = time.perf_counter()
    count = 100
    for seed in range(count):
        rng = np.random.default_rng([seed, 77])
        hyper = Hyperparams(
            dim=int(rng.integers(2, 6)),
            key_dim=int(rng.integers(2, 6)),
            value_dim=int(rng.integers(2, 6)),
            num_attributes=int(rng.integers(1, 4)),
            history_len=int(rng.integers(1, 5)),
            mlp_hidden=(int(rng.integers(2, 7)), int(rng.integers(2, 5))),
            tie_kv=False,
            attention_softmax=bool(rng.integers(0, 2)),
            use_coattention=bool(rng.integers(0, 2)),
        )
        num_items = int(rng.integers(3, 8))
        params, table = tiny_world(rng, num_items=num_items, hyper=hyper)
        length = int(rng.integers(1, min(hyper.history_len, num_items) + 1))
        history = tuple(int(i) for i in
                        rng.choice(num_items, size=length, replace=False))
        item = int(rng.integers(0, num_items))
        tape = Tape()
        got = predict(tape, UserHistory(history), item, params, hyper,
                      table).item()
        want = oracles.predict(params, hyper, table, history, item)
        assert got == pytest.approx(want, abs=1e-10), f"seed {seed}"
    assert time.perf_counter() - start < 30.0


def test_predict_depends_on_candidate_and_history():
    rng = np.random.default_rng(14)
    params, table = tiny_world(rng)
    tape = Tape()
    s_a = predict(tape, UserHistory((1, 2)), 3, params, TINY, table).item()
    s_b = predict(Tape(), UserHistory((1, 2)), 4, params, TINY, table).item()
    s_c = predict(Tape(), UserHistory((4, 5)), 3, params, TINY, table).item()
    assert s_a != s_b and s_a != s_c


def test_predict_ablation_changes_score():
    rng = np.random.default_rng(15)
    params, table = tiny_world(rng)
    hyper_off = Hyperparams(dim=4, key_dim=4, value_dim=4, num_attributes=2,
                            history_len=3, mlp_hidden=(5, 3),
                            use_coattention=False)
    on = predict(Tape(), UserHistory((1, 2)), 3, params, TINY, table).item()
    off = predict(Tape(), UserHistory((1, 2)), 3, params, hyper_off,
                  table).item()
    assert on != off


def test_predict_is_pure():
    rng = np.random.default_rng(16)
    params, table = tiny_world(rng)
    args = (UserHistory((2, 0)), 5, params, TINY, table)
    first = predict(Tape(), *args).item()
    second = predict(Tape(), *args).item()
    assert first == second
