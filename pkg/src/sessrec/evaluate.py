"""Ranking metrics P@K and MRR@K, plus a popularity baseline sanity floor."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod


class EvalError(ValueError):
    pass


@dataclass
class EvalConfig:
    ks: list = field(default_factory=lambda: [10, 20])

    def __post_init__(self):
        if not self.ks or any(k < 1 for k in self.ks):
            raise EvalError("every K must be >= 1")


@dataclass
class EvalReport:
    ks: list
    precision: dict       # K -> P@K
    mrr: dict             # K -> MRR@K
    n_examples: int

    def to_dict(self) -> dict:
        out = {"n_examples": self.n_examples}
        for k in self.ks:
            out[f"p@{k}"] = self.precision[k]
            out[f"mrr@{k}"] = self.mrr[k]
        return out


def rank_target(scores, target: int) -> int:
    """1-based rank of the target; equal scores break by ascending index."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    st = s[target]
    higher = int((s > st).sum())
    tied_before = int(((s == st) & (np.arange(s.size) < target)).sum())
    return 1 + higher + tied_before


def precision_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EvalError("empty test set")
    return float((ranks <= k).mean())


def mrr_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EvalError("empty test set")
    recip = np.where(ranks <= k, 1.0 / ranks, 0.0)
    return float(recip.mean())


def report_from_ranks(ranks, ks) -> EvalReport:
    return EvalReport(ks=list(ks),
                      precision={k: precision_at_k(ranks, k) for k in ks},
                      mrr={k: mrr_at_k(ranks, k) for k in ks},
                      n_examples=len(ranks))


def ranks_for_examples(examples, x_v, params, hyper) -> np.ndarray:
    """Target ranks for a list of (prefix, target) examples; forward-only."""
    prefixes = [ex.prefix for ex in examples]
    targets = np.array([ex.target for ex in examples], dtype=np.intp)
    ranks = np.zeros(len(examples), dtype=np.int64)
    for positions, scores in model_mod.forward_groups(prefixes, x_v, params, hyper):
        s = scores.data
        for row, pos in enumerate(positions):
            ranks[pos] = rank_target(s[row], targets[pos])
    return ranks


def evaluate_model(examples, x_v, params, hyper, ks=(10, 20)) -> EvalReport:
    if not examples:
        raise EvalError("empty test set")
    ranks = ranks_for_examples(examples, x_v, params, hyper)
    return report_from_ranks(ranks, ks)


def popularity_baseline(bundle, ks=(10, 20)) -> EvalReport:
    """Rank every test target against the static train-frequency ordering."""
    if not bundle.sessions_train:
        raise EvalError("empty training set")
    if not bundle.test:
        raise EvalError("empty test set")
    counts = np.zeros(bundle.vocab.n)
    for s in bundle.sessions_train:
        for i in s.items:
            counts[i] += 1.0
    ranks = [rank_target(counts, ex.target) for ex in bundle.test]
    return report_from_ranks(ranks, ks)
