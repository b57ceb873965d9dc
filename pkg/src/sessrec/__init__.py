"""Session-based next-item recommender with a hop-weighted global item graph,
attention + graph-convolution item encoding, and a self-contrastive
uniformity loss alongside cross-entropy."""

__version__ = "0.1.0"

from .data import (DatasetBundle, PreprocessConfig, Session, TrainExample,
                   Vocab, load_bundle, make_bundle, save_bundle)
from .graph import (GlobalGraph, GraphConfig, NormalizedAdjacency,
                    build_global_graph, row_normalize)
from .model import Hyperparams, ModelParams, init_params

__all__ = [
    "DatasetBundle", "PreprocessConfig", "Session", "TrainExample", "Vocab",
    "load_bundle", "make_bundle", "save_bundle",
    "GlobalGraph", "GraphConfig", "NormalizedAdjacency",
    "build_global_graph", "row_normalize",
    "Hyperparams", "ModelParams", "init_params",
]
