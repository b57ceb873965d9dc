"""Intent extractor and prediction head.

Item embeddings are refined by alternating a simplified attention layer with
a graph convolution over the row-normalized global graph, then averaged over
layer snapshots. Session items are combined with reverse positional vectors,
pooled by soft attention into a session embedding, and scored against every
candidate item.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class Hyperparams:
    d: int = 100
    num_layers: int = 3
    epsilon: int = 3
    tau: float = 0.1
    beta: float = 1.0
    lr: float = 0.001
    l2: float = 1e-5
    batch_size: int = 100
    epochs: int = 30
    max_session_len: int = 50
    seed: int = 42
    use_spl: bool = True
    use_attention: bool = True
    use_reverse_pos: bool = True
    spl_scope: str = "all_items"      # or "batch_items"
    ce_form: str = "as_printed"       # or "softmax_ce"

    def validate(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_session_len < 1:
            raise ValueError("max_session_len must be >= 1")
        if self.spl_scope not in ("all_items", "batch_items"):
            raise ValueError(f"unknown spl_scope {self.spl_scope!r}")
        if self.ce_form not in ("as_printed", "softmax_ce"):
            raise ValueError(f"unknown ce_form {self.ce_form!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# preset (num_layers, beta) pairs matching the three benchmark setups
PRESETS = {
    "tmall": {"num_layers": 3, "beta": 75.0},
    "retailrocket": {"num_layers": 5, "beta": 1.0},
    "diginetica": {"num_layers": 5, "beta": 0.75},
}


class ModelParams:
    """All learnable tensors, addressable by name for the optimizer/checkpoints."""

    def __init__(self, tensors: dict, num_layers: int):
        self.tensors = tensors
        self.num_layers = num_layers

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()


def init_params(n: int, hyper: Hyperparams, seed: int | None = None) -> ModelParams:
    """All entries i.i.d. uniform on [-1/sqrt(d), +1/sqrt(d)], seeded."""
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    d, L = hyper.d, hyper.num_layers
    s = 1.0 / np.sqrt(d)

    def u(rows, cols):
        return Tensor(rng.uniform(-s, s, size=(rows, cols)))

    tensors = {"item_emb": u(n, d), "pos_emb": u(hyper.max_session_len, d),
               "w1": u(2 * d, d), "b1": u(1, d), "q": u(d, 1), "c": u(1, d),
               "w2": u(d, d), "w3": u(d, d)}
    for l in range(L):
        tensors[f"att_w{l}"] = u(d, d)
        tensors[f"att_b{l}"] = u(1, d)
        tensors[f"conv_w{l}"] = u(d, d)
    return ModelParams(tensors, num_layers=L)


def attention_layer(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Project, score all item pairs, row-softmax, and mix: softmax(XW+b . X^T) X."""
    y = T.add_bias(T.matmul(x, w), b)
    scores = T.matmul(y, T.transpose(x))
    att = T.row_softmax(scores)
    return T.matmul(att, x)


def gcn_layer(anorm, x: Tensor, w: Tensor) -> Tensor:
    """Row-normalized neighborhood aggregation: Anorm X W."""
    return T.matmul(T.sparse_matmul(anorm.matrix, x), w)


def propagate(x0: Tensor, anorm, params: ModelParams, num_layers: int,
              use_attention: bool = True) -> Tensor:
    """Alternate attention and convolution, then average the L+1 snapshots."""
    acc = x0
    x = x0
    for l in range(num_layers):
        h = attention_layer(x, params[f"att_w{l}"], params[f"att_b{l}"]) if use_attention else x
        x = gcn_layer(anorm, h, params[f"conv_w{l}"])
        acc = T.add(acc, x)
    return T.scale(acc, 1.0 / (num_layers + 1))


def _truncate(items, max_len: int):
    """Sessions longer than the position table keep their most recent items."""
    return items[-max_len:] if len(items) > max_len else items


def encode_session(items, x_v: Tensor, params: ModelParams,
                   use_reverse_pos: bool = True, max_session_len: int | None = None) -> Tensor:
    """Per-item tanh(W1 [x_t || p_{m-t+1}] + b1); the last item gets p_1."""
    if max_session_len is not None:
        items = _truncate(items, max_session_len)
    m = len(items)
    n = x_v.shape[0]
    if any(i < 0 or i >= n for i in items):
        raise ValueError("item index outside vocabulary (closure violated)")
    x = T.select_rows(x_v, items)
    if use_reverse_pos:
        pos = T.select_rows(params["pos_emb"], list(range(m - 1, -1, -1)))
    else:
        pos = Tensor(np.zeros((m, x_v.shape[1])))
    xstar = T.tanh(T.add_bias(T.matmul(T.concat_cols(x, pos), params["w1"]),
                              params["b1"]))
    return xstar


def session_attention(xstar: Tensor, params: ModelParams) -> Tensor:
    """Soft attention pooling: theta = sum_t a_t x_t*, a_t unnormalized."""
    xs = T.mean_rows(xstar)
    h = T.sigmoid(T.add_bias(T.add_bias(T.matmul(xstar, params["w3"]),
                                        T.matmul(xs, params["w2"])),
                             params["c"]))
    a = T.matmul(h, params["q"])           # m x 1
    return T.matmul(T.transpose(a), xstar)  # 1 x d


def score(theta: Tensor, x_v: Tensor) -> Tensor:
    """Dot product of the session embedding with every candidate item."""
    return T.matmul(theta, T.transpose(x_v))


def predict(z: Tensor) -> Tensor:
    """Softmax-normalized scores: a probability vector per row."""
    return T.row_softmax(z)


def forward_session(items, x_v: Tensor, params: ModelParams, hyper: Hyperparams) -> Tensor:
    """Reference single-session path: 1 x n probability vector."""
    xstar = encode_session(items, x_v, params, hyper.use_reverse_pos,
                           hyper.max_session_len)
    theta = session_attention(xstar, params)
    return predict(score(theta, x_v))


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k item indices, descending score, ties broken by ascending index."""
    scores = np.asarray(scores).ravel()
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:k]


# ---------------------------------------------------------------------------
# batched forward path
# ---------------------------------------------------------------------------

def group_by_length(prefixes, max_session_len: int):
    """Group prefixes by (truncated) length; returns {m: (positions, items g x m)}.

    positions records each row's index in the original prefix list, so callers
    can scatter per-row results back into input order.
    """
    groups: dict[int, list] = {}
    for i, p in enumerate(prefixes):
        p = _truncate(list(p), max_session_len)
        groups.setdefault(len(p), []).append((i, p))
    out = {}
    for m in sorted(groups):
        members = groups[m]
        pos = [i for i, _ in members]
        mat = np.array([p for _, p in members], dtype=np.intp)
        out[m] = (pos, mat)
    return out


def forward_groups(prefixes, x_v: Tensor, params: ModelParams, hyper: Hyperparams):
    """Batched forward pass over many sessions at once.

    Yields (positions, scores Tensor g x n) per length group; positions map
    group rows back to indices in `prefixes`. Equivalent to forward_session
    row by row (asserted in tests), but with O(groups) tape records instead
    of O(sessions).
    """
    d = hyper.d
    for m, (positions, items) in group_by_length(prefixes, hyper.max_session_len).items():
        g = items.shape[0]
        flat = items.reshape(-1)
        if flat.size and (flat.min() < 0 or flat.max() >= x_v.shape[0]):
            raise ValueError("item index outside vocabulary (closure violated)")
        x = T.select_rows(x_v, flat)                       # (g*m) x d
        if hyper.use_reverse_pos:
            pidx = np.tile(np.arange(m - 1, -1, -1), g)
            pos_vecs = T.select_rows(params["pos_emb"], pidx)
        else:
            pos_vecs = Tensor(np.zeros((g * m, d)))
        xstar = T.tanh(T.add_bias(T.matmul(T.concat_cols(x, pos_vecs), params["w1"]),
                                  params["b1"]))          # (g*m) x d
        # per-session mean and sum as constant block matrices
        avg = Tensor(np.kron(np.eye(g), np.full((1, m), 1.0 / m)))   # g x (g*m)
        expand = Tensor(np.kron(np.eye(g), np.ones((m, 1))))         # (g*m) x g
        xs = T.matmul(avg, xstar)                          # g x d
        h = T.sigmoid(T.add_bias(T.add(T.matmul(xstar, params["w3"]),
                                       T.matmul(expand, T.matmul(xs, params["w2"]))),
                                 params["c"]))
        a = T.matmul(h, params["q"])                       # (g*m) x 1
        summ = Tensor(np.kron(np.eye(g), np.ones((1, m))))            # g x (g*m)
        theta = T.matmul(summ, T.mul_cols(xstar, a))       # g x d
        yield positions, T.matmul(theta, T.transpose(x_v))  # g x n
