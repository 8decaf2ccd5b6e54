"""Python bindings for the sgec graph self-supervised learning engine."""

import json

from . import _core
from ._core import (
    Graph,
    NumericError,
    ShapeError,
    embed,
    evaluate_embeddings,
    exact_gw_oracle,
    exact_ot_oracle,
    gen_sbm,
    gromov_wasserstein,
    info_nce,
    kl_term,
    load_graph,
    save_graph,
    sinkhorn,
    wasserstein,
)

__all__ = [
    "Graph",
    "NumericError",
    "ShapeError",
    "default_config",
    "embed",
    "evaluate_embeddings",
    "exact_gw_oracle",
    "exact_ot_oracle",
    "gen_sbm",
    "gromov_wasserstein",
    "info_nce",
    "kl_term",
    "load_graph",
    "save_graph",
    "sinkhorn",
    "train",
    "wasserstein",
]


def default_config():
    """TrainConfig defaults as a dict."""
    return json.loads(_core.default_config_json())


def train(graph, config=None, threads=1, checkpoint=""):
    """Trains on `graph`; `config` is a partial TrainConfig dict.

    Returns (report dict, embeddings array).
    """
    text = json.dumps(config) if config else ""
    report, embeddings = _core.train(graph, text, threads, checkpoint)
    return json.loads(report), embeddings
