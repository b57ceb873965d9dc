import numpy as np
import pytest

from sessrec.data import DatasetBundle, Session, TrainExample, Vocab, augment


def indexed_bundle(sessions, n, test_sessions=None, min_prefix_len=1):
    """Build a DatasetBundle directly from already-indexed sessions."""
    vocab = Vocab([f"k{i}" for i in range(n)])
    train_sessions = [Session(items=list(s), start_time=i * 10)
                      for i, s in enumerate(sessions)]
    test_sessions = [Session(items=list(s), start_time=10_000 + i * 10)
                     for i, s in enumerate(test_sessions or [])]
    train = [ex for s in train_sessions for ex in augment(s.items, min_prefix_len)]
    test = [ex for s in test_sessions for ex in augment(s.items, min_prefix_len)]
    return DatasetBundle(vocab=vocab, sessions_train=train_sessions,
                         sessions_test=test_sessions, train=train, test=test,
                         stats={"n_items": n}, config={})


def memorization_bundle():
    """20 sessions over 12 items: 4 disjoint length-3 chains, 5 repeats each.

    Every distinct prefix maps to exactly one target, so a model with enough
    capacity can reach training P@1 = 1.
    """
    chains = [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]]
    sessions = [c for c in chains for _ in range(5)]
    return indexed_bundle(sessions, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
