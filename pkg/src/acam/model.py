"""The scoring model: attribute-level representations, co-attention, MLP.

An item is a small matrix: its own embedding plus one row per attribute,
where a multi-valued attribute contributes the mean of its value
embeddings. A user is the same shape, built by attention-pooling the
matrices of their recent items conditioned on the candidate item. The
co-attention stage turns the affinity between the two matrices into
revised representations, and a small MLP maps everything to a score in
(0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    avg_over_attributes,
    concat,
    dot,
    embedding_mean,
    matmul,
    relu_map,
    row,
    sigmoid_map,
    softmax_cols,
    softmax_rows,
    softmax_vec,
    stack,
    sum_cols,
    tanh_map,
    transpose,
    weighted_sum,
)
from .kg import AttributeTable


@dataclass(frozen=True)
class Hyperparams:
    """Model shape and loss weights.

    ``tie_kv`` shares the key and value transforms (and forces
    dim == key_dim == value_dim). ``attention_softmax`` normalizes the
    history-pooling weights; the default is the raw weighted sum.
    ``use_coattention`` is the ablation switch: off replaces the learned
    affinity softmaxes with uniform weights.
    """

    dim: int = 512
    key_dim: int = 512
    value_dim: int = 512
    num_attributes: int = 4
    history_len: int = 3
    mlp_hidden: tuple[int, int] = (256, 128)
    lambda1: float = 0.1
    lambda2: float = 0.001
    tie_kv: bool = True
    attention_softmax: bool = False
    use_coattention: bool = True

    def __post_init__(self):
        problems = []
        for name in ("dim", "key_dim", "value_dim", "num_attributes",
                     "history_len"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if len(self.mlp_hidden) != 2 or any(h < 1 for h in self.mlp_hidden):
            problems.append("mlp_hidden must be two widths >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            problems.append("lambda1 and lambda2 must be >= 0")
        if self.tie_kv and not (self.dim == self.key_dim == self.value_dim):
            problems.append(
                "tie_kv requires dim == key_dim == value_dim "
                f"(got {self.dim}/{self.key_dim}/{self.value_dim})")
        if problems:
            raise ValueError("invalid hyperparameters: " + "; ".join(problems))

    @property
    def mlp_input_dim(self) -> int:
        return 2 * self.value_dim + 2 * self.dim


# checkpoint / optimizer ordering; value-transform names are dropped when tied
_PARAM_ORDER = (
    "entity_emb", "rel_normals", "rel_trans", "unknown_emb",
    "attn_w1", "attn_b1", "attn_w2", "attn_b2",
    "w_ku", "b_ku", "w_vu", "b_vu", "w_kv", "b_kv", "w_vv", "b_vv",
    "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "mlp_w3", "mlp_b3",
)


@dataclass
class ModelParams:
    """Every trainable array. The regularized set is exactly ``named()``."""

    entity_emb: np.ndarray    # (num_entities, d)
    rel_normals: np.ndarray   # (M, d) unit hyperplane normals
    rel_trans: np.ndarray     # (M, d) translation vectors
    unknown_emb: np.ndarray   # (M, d) stand-ins for empty attribute slots
    attn_w1: np.ndarray       # (2d, d) history-attention net, hidden layer
    attn_b1: np.ndarray       # (d,)
    attn_w2: np.ndarray       # (d,) hidden -> scalar weight
    attn_b2: np.ndarray       # ()
    w_ku: np.ndarray          # (d, d_K) user key transform
    b_ku: np.ndarray          # (d_K,)
    w_vu: np.ndarray          # (d, d_V) user value transform (alias when tied)
    b_vu: np.ndarray
    w_kv: np.ndarray          # (d, d_K) item key transform
    b_kv: np.ndarray
    w_vv: np.ndarray          # (d, d_V) item value transform (alias when tied)
    b_vv: np.ndarray
    mlp_w1: np.ndarray        # (2*d_V + 2*d, h1)
    mlp_b1: np.ndarray        # (h1,)
    mlp_w2: np.ndarray        # (h1, h2)
    mlp_b2: np.ndarray        # (h2,)
    mlp_w3: np.ndarray        # (h2,)
    mlp_b3: np.ndarray        # ()

    def named(self) -> dict[str, np.ndarray]:
        """Unique trainable arrays by name; tied aliases appear once."""
        out: dict[str, np.ndarray] = {}
        seen: set[int] = set()
        for name in _PARAM_ORDER:
            arr = getattr(self, name)
            if id(arr) in seen:
                continue
            seen.add(id(arr))
            out[name] = arr
        return out

    @property
    def num_entities(self) -> int:
        return self.entity_emb.shape[0]

    @classmethod
    def init(cls, num_entities: int, hyper: Hyperparams,
             rng: np.random.Generator) -> "ModelParams":
        """Seeded random initialization with a fixed creation order."""
        d, dk, dv, m = (hyper.dim, hyper.key_dim, hyper.value_dim,
                        hyper.num_attributes)
        h1, h2 = hyper.mlp_hidden

        def mat(rows: int, cols: int) -> np.ndarray:
            return rng.standard_normal((rows, cols)) / np.sqrt(rows)

        entity_emb = 0.1 * rng.standard_normal((num_entities, d))
        rel_normals = rng.standard_normal((m, d))
        rel_normals /= np.linalg.norm(rel_normals, axis=1, keepdims=True)
        rel_trans = 0.1 * rng.standard_normal((m, d))
        unknown_emb = 0.1 * rng.standard_normal((m, d))
        attn_w1, attn_b1 = mat(2 * d, d), 0.01 * rng.standard_normal(d)
        attn_w2 = rng.standard_normal(d) / np.sqrt(d)
        attn_b2 = np.asarray(0.01 * rng.standard_normal())
        w_ku, b_ku = mat(d, dk), 0.01 * rng.standard_normal(dk)
        w_kv, b_kv = mat(d, dk), 0.01 * rng.standard_normal(dk)
        if hyper.tie_kv:
            w_vu, b_vu, w_vv, b_vv = w_ku, b_ku, w_kv, b_kv
        else:
            w_vu, b_vu = mat(d, dv), 0.01 * rng.standard_normal(dv)
            w_vv, b_vv = mat(d, dv), 0.01 * rng.standard_normal(dv)
        mlp_w1, mlp_b1 = mat(hyper.mlp_input_dim, h1), 0.01 * rng.standard_normal(h1)
        mlp_w2, mlp_b2 = mat(h1, h2), 0.01 * rng.standard_normal(h2)
        mlp_w3 = rng.standard_normal(h2) / np.sqrt(h2)
        mlp_b3 = np.asarray(0.01 * rng.standard_normal())
        return cls(entity_emb, rel_normals, rel_trans, unknown_emb,
                   attn_w1, attn_b1, attn_w2, attn_b2,
                   w_ku, b_ku, w_vu, b_vu, w_kv, b_kv, w_vv, b_vv,
                   mlp_w1, mlp_b1, mlp_w2, mlp_b2, mlp_w3, mlp_b3)

    @classmethod
    def zeros(cls, num_entities: int, hyper: Hyperparams) -> "ModelParams":
        d, dk, dv, m = (hyper.dim, hyper.key_dim, hyper.value_dim,
                        hyper.num_attributes)
        h1, h2 = hyper.mlp_hidden
        z = np.zeros
        w_ku, b_ku = z((d, dk)), z(dk)
        w_kv, b_kv = z((d, dk)), z(dk)
        if hyper.tie_kv:
            w_vu, b_vu, w_vv, b_vv = w_ku, b_ku, w_kv, b_kv
        else:
            w_vu, b_vu = z((d, dv)), z(dv)
            w_vv, b_vv = z((d, dv)), z(dv)
        return cls(z((num_entities, d)), z((m, d)), z((m, d)), z((m, d)),
                   z((2 * d, d)), z(d), z(d), np.asarray(0.0),
                   w_ku, b_ku, w_vu, b_vu, w_kv, b_kv, w_vv, b_vv,
                   z((hyper.mlp_input_dim, h1)), z(h1),
                   z((h1, h2)), z(h2), z(h2), np.asarray(0.0))


@dataclass
class UserHistory:
    """The ids of a user's most recent interactions, newest first.

    Only valid positions are stored; users shorter than the configured
    history length simply carry fewer ids, and those absent positions
    contribute nothing to the pooled representation.
    """

    items: tuple[int, ...]

    def __post_init__(self):
        if len(self.items) == 0:
            raise ValueError("user history must contain at least one item")


def item_representation(tape: Tape, item: int, params: ModelParams,
                        attr_table: AttributeTable) -> Tensor:
    """(M+1, d) matrix: row 0 the item embedding, row i attribute i.

    A slot with k > 0 values contributes the mean of the k value
    embeddings; an empty slot contributes that slot's learned stand-in.
    """
    if not 0 <= item < params.entity_emb.shape[0]:
        raise ValueError(f"unknown item id {item}")
    ent = tape.leaf(params.entity_emb)
    unknown = tape.leaf(params.unknown_emb)
    rows = [row(ent, item)]
    for i, values in enumerate(attr_table.slots(item)):
        if values:
            rows.append(embedding_mean(ent, values))
        else:
            rows.append(row(unknown, i))
    return stack(rows)


class RepCache:
    """Per-tape memo of item representations.

    Item matrices depend only on parameters, so within one tape every
    pair sharing an item (histories, repeated candidates) can reuse one
    subgraph. Must be discarded whenever the tape is reset.
    """

    def __init__(self, tape: Tape, params: ModelParams,
                 attr_table: AttributeTable):
        self.tape = tape
        self.params = params
        self.attr_table = attr_table
        self._memo: dict[int, Tensor] = {}

    def get(self, item: int) -> Tensor:
        found = self._memo.get(item)
        if found is None:
            found = item_representation(self.tape, item, self.params,
                                        self.attr_table)
            self._memo[item] = found
        return found


def user_representation(tape: Tape, history: UserHistory, candidate: Tensor,
                        params: ModelParams, hyper: Hyperparams,
                        cache: RepCache) -> Tensor:
    """(M+1, d) matrix pooled from the history, conditioned on the candidate.

    For each attribute index the weight of a history item is a small
    feed-forward net applied to the concatenation of that item's
    attribute row and the candidate's, so different candidates yield
    different user matrices.
    """
    reps = [cache.get(item) for item in history.items]
    w1 = tape.leaf(params.attn_w1)
    b1 = tape.leaf(params.attn_b1)
    w2 = tape.leaf(params.attn_w2)
    b2 = tape.leaf(params.attn_b2)
    pooled = []
    for i in range(hyper.num_attributes + 1):
        cand_i = row(candidate, i)
        hist_rows = [row(rep, i) for rep in reps]
        feats = stack([concat([h, cand_i]) for h in hist_rows])
        hidden = tanh_map(add(matmul(feats, w1), b1))
        weights = add(matmul(hidden, w2), b2)
        if hyper.attention_softmax:
            weights = softmax_vec(weights)
        pooled.append(weighted_sum(weights, stack(hist_rows)))
    return stack(pooled)


def coattention(tape: Tape, e_u: Tensor, e_v: Tensor, params: ModelParams,
                hyper: Hyperparams) -> tuple[Tensor, Tensor, Tensor]:
    """Affinity-weighted summaries of both representation matrices.

    Keys and values are tanh affine transforms of each side; the affinity
    map S = K_u K_v^T is softmaxed per column to re-weight the user's
    values and per row to re-weight the item's, and each revised matrix
    is sum-pooled over its rows. Returns (r_u, r_v, S); S is exposed for
    inspection. With ``use_coattention`` off the softmaxes are replaced
    by constant uniform weights.
    """
    m1 = hyper.num_attributes + 1
    if e_u.shape != (m1, hyper.dim) or e_v.shape != (m1, hyper.dim):
        raise ValueError(
            f"coattention expects ({m1}, {hyper.dim}) matrices, "
            f"got {e_u.shape} and {e_v.shape}")
    k_u = tanh_map(add(matmul(e_u, tape.leaf(params.w_ku)), tape.leaf(params.b_ku)))
    k_v = tanh_map(add(matmul(e_v, tape.leaf(params.w_kv)), tape.leaf(params.b_kv)))
    v_u = tanh_map(add(matmul(e_u, tape.leaf(params.w_vu)), tape.leaf(params.b_vu)))
    v_v = tanh_map(add(matmul(e_v, tape.leaf(params.w_vv)), tape.leaf(params.b_vv)))
    s = matmul(k_u, transpose(k_v))
    if hyper.use_coattention:
        u_rev = matmul(transpose(softmax_cols(s)), v_u)
        v_rev = matmul(softmax_rows(s), v_v)
    else:
        uniform = tape.constant(np.full((m1, m1), 1.0 / m1))
        u_rev = matmul(transpose(uniform), v_u)
        v_rev = matmul(uniform, v_v)
    return sum_cols(u_rev), sum_cols(v_rev), s


def predict(tape: Tape, history: UserHistory, item: int, params: ModelParams,
            hyper: Hyperparams, attr_table: AttributeTable,
            cache: RepCache | None = None) -> Tensor:
    """Scalar match score in (0, 1) for one user history and one item."""
    if cache is None:
        cache = RepCache(tape, params, attr_table)
    e_v = cache.get(item)
    e_u = user_representation(tape, history, e_v, params, hyper, cache)
    r_u, r_v, _ = coattention(tape, e_u, e_v, params, hyper)
    feats = concat([r_u, r_v, avg_over_attributes(e_u), avg_over_attributes(e_v)])
    h1 = relu_map(add(matmul(feats, tape.leaf(params.mlp_w1)),
                      tape.leaf(params.mlp_b1)))
    h2 = relu_map(add(matmul(h1, tape.leaf(params.mlp_w2)),
                      tape.leaf(params.mlp_b2)))
    z = add(dot(h2, tape.leaf(params.mlp_w3)), tape.leaf(params.mlp_b3))
    return sigmoid_map(z)
