"""Directed, hop-weighted global item graph and its row-normalized form.

Within a session, each ordered position pair (i, j) with 1 <= j-i <= epsilon
contributes a directed edge items[i] -> items[j] of weight 1/(1 + (j-i));
contributions from all sessions are summed per edge.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class GraphConfig:
    epsilon: int = 3

    def __post_init__(self):
        if self.epsilon < 1:
            raise ValueError(f"epsilon must be >= 1, got {self.epsilon}")


@dataclass
class GlobalGraph:
    n: int
    edges: dict = field(default_factory=dict)  # (src, dst) -> weight


@dataclass
class NormalizedAdjacency:
    n: int
    matrix: sp.csr_matrix  # rows sum to 1, or to 0 for zero out-degree items


def session_edges(items, epsilon: int):
    """Per-session edge contributions as (src, dst, weight) triples."""
    out = []
    m = len(items)
    for i in range(m):
        for dist in range(1, epsilon + 1):
            j = i + dist
            if j >= m:
                break
            out.append((items[i], items[j], 1.0 / (1 + dist)))
    return out


def build_global_graph(sessions, n: int, config: GraphConfig | None = None) -> GlobalGraph:
    """Accumulate hop-discounted edge weights over all sessions.

    sessions: iterable of item-index lists (or objects with an .items list).
    """
    config = config or GraphConfig()
    edges: dict = {}
    for s in sessions:
        items = getattr(s, "items", s)
        for src, dst, w in session_edges(items, config.epsilon):
            edges[(src, dst)] = edges.get((src, dst), 0.0) + w
    return GlobalGraph(n=n, edges=edges)


def row_normalize(graph: GlobalGraph) -> NormalizedAdjacency:
    """Divide each nonzero row by its row sum; zero rows stay zero."""
    n = graph.n
    if graph.edges:
        keys = sorted(graph.edges)
        rows = np.array([k[0] for k in keys], dtype=np.intp)
        cols = np.array([k[1] for k in keys], dtype=np.intp)
        vals = np.array([graph.edges[k] for k in keys])
    else:
        rows = np.array([], dtype=np.intp)
        cols = np.array([], dtype=np.intp)
        vals = np.array([])
    a = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    row_sums = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, row_sums, out=np.zeros_like(row_sums), where=row_sums > 0)
    normalized = sp.diags(inv) @ a
    return NormalizedAdjacency(n=n, matrix=normalized.tocsr())


def graph_stats(graph: GlobalGraph) -> dict:
    out_degree = {}
    for (src, _dst) in graph.edges:
        out_degree[src] = out_degree.get(src, 0) + 1
    hist: dict = {}
    for i in range(graph.n):
        d = out_degree.get(i, 0)
        hist[d] = hist.get(d, 0) + 1
    n_edges = len(graph.edges)
    density = n_edges / (graph.n * graph.n) if graph.n else 0.0
    return {"n_items": graph.n, "n_edges": n_edges, "density": density,
            "out_degree_hist": hist}


def export_edge_list(graph: GlobalGraph) -> str:
    """Text edge list 'src<TAB>dst<TAB>weight', sorted by (src, dst)."""
    lines = [f"{s}\t{d}\t{graph.edges[(s, d)]!r}" for s, d in sorted(graph.edges)]
    return "\n".join(lines) + ("\n" if lines else "")


def edges_to_list(graph: GlobalGraph) -> list:
    """Canonical (sorted) serializable edge triples."""
    return [[s, d, graph.edges[(s, d)]] for s, d in sorted(graph.edges)]


def edges_from_list(n: int, triples) -> GlobalGraph:
    return GlobalGraph(n=n, edges={(int(s), int(d)): float(w) for s, d, w in triples})
