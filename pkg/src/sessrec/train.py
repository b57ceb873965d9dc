"""Training loop: build the graph once, then epochs of batched updates.

Per batch: refresh the item table via attention + graph convolution, encode
and score every session in the batch, combine cross-entropy with the
self-contrastive term, backpropagate, and take one Adam step. Each epoch
ends with a test evaluation and a best-P@20 checkpoint.
"""
from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluate as eval_mod
from . import graph as graph_mod
from . import loss as loss_mod
from . import model as model_mod
from .data import DatasetBundle, vocab_hash
from .model import Hyperparams, ModelParams
from .optim import Adam, NumericError
from .tensor import Tape, Tensor
from . import tensor as T

CHECKPOINT_MAGIC = b"SESSRECCKPT\n"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: ModelParams
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_metrics: dict | None = None


def batch_loss(examples, anorm, params: ModelParams, hyper: Hyperparams):
    """Forward pass and combined loss for one batch of (prefix, target) pairs.

    Returns (total Tensor, LossBreakdown).
    """
    x_v = model_mod.propagate(params["item_emb"], anorm, params,
                              hyper.num_layers, hyper.use_attention)
    prefixes = [ex.prefix for ex in examples]
    targets = np.array([ex.target for ex in examples], dtype=np.intp)
    ce_sum = None
    for positions, scores in model_mod.forward_groups(prefixes, x_v, params, hyper):
        probs = model_mod.predict(scores)
        part = loss_mod.cross_entropy_rows(probs, targets[positions], hyper.ce_form)
        ce_sum = part if ce_sum is None else T.add(ce_sum, part)
    l_ce = T.scale(ce_sum, 1.0 / len(examples))
    l_spl = None
    if hyper.use_spl and hyper.beta > 0:
        if hyper.spl_scope == "batch_items":
            uniq = np.unique(np.concatenate(
                [np.fromiter((i for p in prefixes for i in p), dtype=np.intp),
                 targets]))
            reps = T.select_rows(x_v, uniq)
        else:
            reps = x_v
        l_spl = loss_mod.single_positive_loss(reps, hyper.tau)
    return loss_mod.total_loss(l_ce, l_spl, hyper.beta)


def _evaluate(bundle: DatasetBundle, params: ModelParams, anorm, hyper: Hyperparams,
              ks=(10, 20), examples=None):
    x_v = model_mod.propagate(params["item_emb"], anorm, params,
                              hyper.num_layers, hyper.use_attention)
    return eval_mod.evaluate_model(examples if examples is not None else bundle.test,
                                   x_v, params, hyper, ks=ks)


def train(bundle: DatasetBundle, hyper: Hyperparams, out_dir=None,
          ks=(10, 20), log_stream=None) -> TrainResult:
    hyper.validate()
    n = bundle.vocab.n
    if bundle.graph is not None and bundle.graph_epsilon == hyper.epsilon:
        graph = bundle.graph
    else:
        graph = graph_mod.build_global_graph(bundle.sessions_train, n,
                                             graph_mod.GraphConfig(hyper.epsilon))
    anorm = graph_mod.row_normalize(graph)
    params = model_mod.init_params(n, hyper)
    adam = Adam(params.tensors, lr=hyper.lr, l2=hyper.l2)
    rng = np.random.default_rng(hyper.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    vhash = vocab_hash(bundle.vocab)

    def log(record):
        if log_stream is not None:
            log_stream.write(json.dumps(record, sort_keys=True) + "\n")

    result = TrainResult(params=params)
    best_p20 = -1.0
    n_train = len(bundle.train)
    for epoch in range(hyper.epochs):
        t0 = time.monotonic()
        perm = rng.permutation(n_train)
        losses = []
        for bi, start in enumerate(range(0, n_train, hyper.batch_size)):
            batch = [bundle.train[i] for i in perm[start:start + hyper.batch_size]]
            with Tape() as tape:
                total, breakdown = batch_loss(batch, anorm, params, hyper)
                if not np.isfinite(breakdown.total):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} batch {bi}; "
                        "last-good checkpoint retained")
                tape.backward(total)
            adam.step()
            adam.zero_grads()
            losses.append(breakdown.total)
            log({"kind": "batch", "epoch": epoch, "batch": bi,
                 "l_ce": breakdown.l_ce, "l_spl": breakdown.l_spl,
                 "total": breakdown.total})
        report = _evaluate(bundle, params, anorm, hyper, ks=ks)
        wall_ms = (time.monotonic() - t0) * 1000.0
        record = {"kind": "epoch", "epoch": epoch,
                  "mean_loss": float(np.mean(losses)) if losses else None,
                  "wall_ms": wall_ms}
        record.update(report.to_dict())
        log(record)
        result.history.append(record)
        p20 = report.precision.get(20, report.precision[max(report.ks)])
        if p20 > best_p20:
            best_p20 = p20
            result.best_epoch = epoch
            result.best_metrics = report.to_dict()
            if out_dir is not None:
                save_checkpoint(out_dir / "best.ckpt", params, adam, hyper, vhash)
    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", params, adam, hyper, vhash)
        metrics = dict(result.best_metrics or {})
        metrics["best_epoch"] = result.best_epoch
        with open(out_dir / "metrics.json", "w", encoding="utf-8") as f:
            json.dump(metrics, f, sort_keys=True, separators=(",", ":"))
    return result


# ---------------------------------------------------------------------------
# checkpoints: deterministic binary (magic, meta JSON, raw float64 blocks)
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, adam: Adam | None,
                    hyper: Hyperparams, vhash: str) -> None:
    arrays = []
    blobs = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=np.float64).tobytes()
        arrays.append({"name": name, "rows": int(arr.shape[0]),
                       "cols": int(arr.shape[1]), "offset": offset})
        blobs.append(raw)
        offset += len(raw)

    for name in sorted(params.tensors):
        push(f"param/{name}", params[name].data)
    if adam is not None:
        for name in sorted(adam.m):
            push(f"adam_m/{name}", adam.m[name])
            push(f"adam_v/{name}", adam.v[name])
    meta = {"format_version": CHECKPOINT_VERSION, "vocab_hash": vhash,
            "hyper": hyper.to_dict(), "adam_t": adam.t if adam is not None else None,
            "num_layers": params.num_layers, "arrays": arrays}
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        for b in blobs:
            f.write(b)


def load_checkpoint(path, expected_vocab_hash: str | None = None):
    """Returns (params, adam_state dict or None, hyper, vocab_hash)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    head = len(CHECKPOINT_MAGIC)
    (meta_len,) = struct.unpack_from("<Q", raw, head)
    try:
        meta = json.loads(raw[head + 8:head + 8 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupted checkpoint metadata in {path}") from e
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {meta.get('format_version')!r} unsupported")
    if expected_vocab_hash is not None and meta["vocab_hash"] != expected_vocab_hash:
        raise CheckpointError("vocabulary hash mismatch between checkpoint and bundle")
    base = head + 8 + meta_len
    tensors = {}
    adam_m, adam_v = {}, {}
    for spec in meta["arrays"]:
        size = spec["rows"] * spec["cols"] * 8
        start = base + spec["offset"]
        if start + size > len(raw):
            raise CheckpointError(f"truncated checkpoint {path}")
        arr = np.frombuffer(raw[start:start + size], dtype=np.float64).reshape(
            spec["rows"], spec["cols"]).copy()
        kind, name = spec["name"].split("/", 1)
        if kind == "param":
            tensors[name] = Tensor(arr)
        elif kind == "adam_m":
            adam_m[name] = arr
        elif kind == "adam_v":
            adam_v[name] = arr
    hyper = Hyperparams(**meta["hyper"])
    params = ModelParams(tensors, num_layers=meta["num_layers"])
    adam_state = None
    if meta["adam_t"] is not None:
        adam_state = {"t": meta["adam_t"], "m": adam_m, "v": adam_v}
    return params, adam_state, hyper, meta["vocab_hash"]


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
