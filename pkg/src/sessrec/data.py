"""Session log ingestion, filtering, temporal split, and prefix augmentation.

The pipeline: parse delimiter-separated events, group them into sessions,
drop rare items then short sessions, split the most recent sessions into a
test window, build the vocabulary from train sessions only, and expand every
session into (prefix, next-item) supervision pairs.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

BUNDLE_FORMAT_VERSION = 1


class DataError(ValueError):
    """Raised for unusable input data."""


class RawEvent(NamedTuple):
    session_key: str
    item_key: str
    timestamp: int


@dataclass
class RawSession:
    key: str
    item_keys: list
    start_time: int


@dataclass
class Session:
    items: list          # item indices
    start_time: int


class TrainExample(NamedTuple):
    prefix: tuple
    target: int


class Vocab:
    """Bijective item_key <-> dense item_index map, first-appearance order."""

    def __init__(self, item_keys):
        self.items = list(item_keys)
        self.index = {k: i for i, k in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise DataError("duplicate item keys in vocabulary")

    @property
    def n(self) -> int:
        return len(self.items)

    def __contains__(self, key) -> bool:
        return key in self.index


@dataclass
class PreprocessConfig:
    delimiter: str = "\t"
    has_header: bool = False
    max_error_ratio: float = 0.1
    min_item_freq: int = 5
    min_session_len: int = 2
    holdout_fraction: float = 0.1
    holdout_window: int | None = None   # time units; overrides fraction when set
    min_prefix_len: int = 1


@dataclass
class DatasetBundle:
    vocab: Vocab
    sessions_train: list          # list[Session], used for graph building
    sessions_test: list
    train: list                   # list[TrainExample]
    test: list
    stats: dict
    config: dict = field(default_factory=dict)
    graph: object = None          # optional GlobalGraph, attached by build-graph
    graph_epsilon: int | None = None


def parse_events(stream, delimiter: str = "\t", has_header: bool = False,
                 max_error_ratio: float = 0.1):
    """Parse (session_key, item_key, timestamp) rows from text lines.

    Returns (events, errors) where errors is a list of (line_number, message).
    Raises DataError when the malformed-row ratio exceeds max_error_ratio.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()
    events: list[RawEvent] = []
    errors: list[tuple[int, str]] = []
    total = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if has_header and lineno == 1:
            continue
        if not line:
            continue
        total += 1
        parts = line.split(delimiter)
        if len(parts) < 3:
            errors.append((lineno, f"expected 3 columns, got {len(parts)}"))
            continue
        session_key, item_key, ts = parts[0], parts[1], parts[2]
        try:
            timestamp = int(ts)
        except ValueError:
            errors.append((lineno, f"bad timestamp {ts!r}"))
            continue
        events.append(RawEvent(session_key, item_key, timestamp))
    if total and len(errors) / total > max_error_ratio:
        raise DataError(
            f"{len(errors)}/{total} malformed rows exceeds error ratio {max_error_ratio}")
    return events, errors


def build_sessions(events) -> list:
    """Group events by session key and time-sort each group (stable ties)."""
    groups: dict[str, list[RawEvent]] = {}
    for ev in events:
        groups.setdefault(ev.session_key, []).append(ev)
    sessions = []
    for key, evs in groups.items():
        ordered = sorted(evs, key=lambda e: e.timestamp)  # stable: ties keep input order
        sessions.append(RawSession(key=key,
                                   item_keys=[e.item_key for e in ordered],
                                   start_time=min(e.timestamp for e in evs)))
    return sessions


def filter_dataset(sessions, min_item_freq: int = 5, min_session_len: int = 2):
    """Drop rare items, then short sessions; single pass, in that order."""
    counts: dict[str, int] = {}
    for s in sessions:
        for k in s.item_keys:
            counts[k] = counts.get(k, 0) + 1
    out = []
    for s in sessions:
        kept = [k for k in s.item_keys if counts[k] >= min_item_freq]
        if len(kept) >= min_session_len:
            out.append(RawSession(key=s.key, item_keys=kept, start_time=s.start_time))
    if not out:
        raise DataError("empty dataset after filtering")
    return out


def temporal_split(sessions, holdout_fraction: float = 0.1,
                   holdout_window: int | None = None):
    """Most recent sessions (by start_time) become the test set."""
    if len(sessions) < 2:
        raise DataError("need at least 2 sessions to split")
    ordered = sorted(sessions, key=lambda s: s.start_time)  # stable
    if len({s.start_time for s in sessions}) == 1:
        warnings.warn("all sessions share one start_time; splitting by input order")
    if holdout_window is not None:
        cutoff = max(s.start_time for s in sessions) - holdout_window
        train = [s for s in ordered if s.start_time < cutoff]
        test = [s for s in ordered if s.start_time >= cutoff]
        if not train or not test:
            raise DataError("holdout window leaves an empty split")
        return train, test
    if not (0.0 < holdout_fraction < 1.0):
        raise DataError(f"holdout_fraction must be in (0,1), got {holdout_fraction}")
    n_test = int(round(holdout_fraction * len(ordered)))
    n_test = min(max(n_test, 1), len(ordered) - 1)
    return ordered[:-n_test], ordered[-n_test:]


def build_vocab(train_sessions) -> Vocab:
    """Indices in first-appearance order over the training stream."""
    if not train_sessions:
        raise DataError("cannot build vocabulary from empty training set")
    seen: dict[str, None] = {}
    for s in train_sessions:
        for k in s.item_keys:
            seen.setdefault(k, None)
    return Vocab(seen.keys())


def index_sessions(sessions, vocab: Vocab, min_session_len: int = 2) -> list:
    """Map item keys to indices, dropping unknown items then short sessions."""
    out = []
    for s in sessions:
        items = [vocab.index[k] for k in s.item_keys if k in vocab]
        if len(items) >= min_session_len:
            out.append(Session(items=items, start_time=s.start_time))
    return out


def augment(items, min_prefix_len: int = 1) -> list:
    """All (items[:t], items[t]) pairs for t in [min_prefix_len, m-1]."""
    m = len(items)
    return [TrainExample(prefix=tuple(items[:t]), target=items[t])
            for t in range(min_prefix_len, m)]


def make_bundle(events, config: PreprocessConfig | None = None) -> DatasetBundle:
    """End-to-end preprocessing: events -> DatasetBundle."""
    config = config or PreprocessConfig()
    raw = build_sessions(events)
    raw = filter_dataset(raw, config.min_item_freq, config.min_session_len)
    train_raw, test_raw = temporal_split(raw, config.holdout_fraction,
                                         config.holdout_window)
    vocab = build_vocab(train_raw)
    sessions_train = index_sessions(train_raw, vocab, config.min_session_len)
    sessions_test = index_sessions(test_raw, vocab, config.min_session_len)
    if not sessions_train:
        raise DataError("empty dataset: no training sessions survived indexing")
    train_examples = [ex for s in sessions_train
                      for ex in augment(s.items, config.min_prefix_len)]
    test_examples = [ex for s in sessions_test
                     for ex in augment(s.items, config.min_prefix_len)]
    all_lens = [len(s.items) for s in sessions_train + sessions_test]
    stats = {
        "n_items": vocab.n,
        "n_sessions_train": len(sessions_train),
        "n_sessions_test": len(sessions_test),
        "n_train_examples": len(train_examples),
        "n_test_examples": len(test_examples),
        "mean_session_len": sum(all_lens) / len(all_lens),
    }
    cfg = {
        "min_item_freq": config.min_item_freq,
        "min_session_len": config.min_session_len,
        "holdout_fraction": config.holdout_fraction,
        "holdout_window": config.holdout_window,
        "min_prefix_len": config.min_prefix_len,
    }
    return DatasetBundle(vocab=vocab, sessions_train=sessions_train,
                         sessions_test=sessions_test, train=train_examples,
                         test=test_examples, stats=stats, config=cfg)


# ---------------------------------------------------------------------------
# bundle serialization (versioned JSON, bit-exact round trip)
# ---------------------------------------------------------------------------

def bundle_to_dict(bundle: DatasetBundle) -> dict:
    from . import graph as graph_mod
    doc = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "vocab": bundle.vocab.items,
        "sessions_train": [[s.items, s.start_time] for s in bundle.sessions_train],
        "sessions_test": [[s.items, s.start_time] for s in bundle.sessions_test],
        "train": [[list(ex.prefix), ex.target] for ex in bundle.train],
        "test": [[list(ex.prefix), ex.target] for ex in bundle.test],
        "stats": bundle.stats,
        "config": bundle.config,
    }
    if bundle.graph is not None:
        doc["graph"] = {"epsilon": bundle.graph_epsilon,
                        "edges": graph_mod.edges_to_list(bundle.graph)}
    return doc


def bundle_from_dict(doc: dict) -> DatasetBundle:
    from . import graph as graph_mod
    version = doc.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise DataError(f"unsupported bundle format version {version!r}")
    bundle = DatasetBundle(
        vocab=Vocab(doc["vocab"]),
        sessions_train=[Session(items=i, start_time=t) for i, t in doc["sessions_train"]],
        sessions_test=[Session(items=i, start_time=t) for i, t in doc["sessions_test"]],
        train=[TrainExample(tuple(p), t) for p, t in doc["train"]],
        test=[TrainExample(tuple(p), t) for p, t in doc["test"]],
        stats=doc["stats"],
        config=doc.get("config", {}),
    )
    if "graph" in doc:
        bundle.graph = graph_mod.edges_from_list(bundle.vocab.n, doc["graph"]["edges"])
        bundle.graph_epsilon = doc["graph"]["epsilon"]
    return bundle


def save_bundle(bundle: DatasetBundle, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(bundle_to_dict(bundle), f, sort_keys=True, separators=(",", ":"))


def load_bundle(path) -> DatasetBundle:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read bundle {path}: {e}") from e
    return bundle_from_dict(doc)


def vocab_hash(vocab: Vocab) -> str:
    import hashlib
    h = hashlib.sha256("\n".join(vocab.items).encode("utf-8"))
    return h.hexdigest()
