"""Training objective: cross-entropy plus a beta-weighted self-contrastive term.

The self-contrastive term treats each item representation as its own only
positive and all other items as negatives; with sim(x_i, x_i) = 1 it reduces
to sum_i [logsumexp_j(sim(x_i, x_j)/tau) - 1/tau], computed stably.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_EPS = 1e-12


@dataclass
class LossConfig:
    beta: float = 1.0
    tau: float = 0.1
    spl_scope: str = "all_items"
    ce_form: str = "as_printed"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass
class LossBreakdown:
    l_ce: float
    l_spl: float
    total: float


def cross_entropy_rows(y_hat: Tensor, targets, form: str = "as_printed") -> Tensor:
    """Summed cross-entropy over the rows of a g x n probability matrix.

    form="as_printed": full binary sum -[log p_t + sum_{i != t} log(1 - p_i)].
    form="softmax_ce": categorical -log p_t.
    """
    g, n = y_hat.shape
    targets = np.asarray(targets, dtype=np.intp).ravel()
    if targets.size != g:
        raise ValueError(f"{targets.size} targets for {g} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= n):
        raise ValueError("target index out of range")
    onehot = np.zeros((g, n))
    onehot[np.arange(g), targets] = 1.0
    log_p = T.log(T.clamp(y_hat, PROB_EPS, 1.0 - PROB_EPS))
    pos = T.sum_all(T.mul(log_p, Tensor(onehot)))
    if form == "softmax_ce":
        return T.scale(pos, -1.0)
    if form != "as_printed":
        raise ValueError(f"unknown ce_form {form!r}")
    log_q = T.log(T.clamp(T.affine(y_hat, -1.0, 1.0), PROB_EPS, 1.0 - PROB_EPS))
    neg = T.sum_all(T.mul(log_q, Tensor(1.0 - onehot)))
    return T.scale(T.add(pos, neg), -1.0)


def cross_entropy(y_hat: Tensor, target: int, form: str = "as_printed") -> Tensor:
    """Cross-entropy of one 1 x n probability vector against a single target."""
    return cross_entropy_rows(y_hat, [target], form)


def single_positive_loss(x: Tensor, tau: float) -> Tensor:
    """Self-contrastive uniformity loss over the rows of a k x d matrix."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if np.any(np.linalg.norm(x.data, axis=1) == 0.0):
        raise ValueError("degenerate representation: zero row has no cosine")
    k = x.shape[0]
    sims = T.cosine_similarity_matrix(x)
    lse = T.row_logsumexp(T.scale(sims, 1.0 / tau))
    return T.affine(T.sum_all(lse), 1.0, -k / tau)


def total_loss(l_ce: Tensor, l_spl: Tensor | None, beta: float):
    """Combine the two terms; returns (total Tensor, LossBreakdown floats)."""
    ce_val = l_ce.item()
    if l_spl is None or beta == 0.0:
        spl_val = 0.0 if l_spl is None else l_spl.item()
        return l_ce, LossBreakdown(l_ce=ce_val, l_spl=spl_val, total=ce_val)
    total = T.add(l_ce, T.scale(l_spl, beta))
    return total, LossBreakdown(l_ce=ce_val, l_spl=l_spl.item(), total=total.item())
