""" Shared fixtures for the prism_base tests """
import numpy as np

from ..autodiff.rng import Rng
from ..config import PrismConfig, load_run_config, SMOKE_CONFIG_PATH
from ..dytag_data import HistoryIndex, SyntheticConfig, generate_synthetic
from ..prism_model import GraphContext, PrismParams
from ..text_embedding import HashingEmbedderConfig, embed_all

EMB_DIM = 8


def tiny_model_config(**changes):
    values = dict(d=8, d_time=4, L=4, K=2, heads=2, enc_layers=1)
    values.update(changes)
    return PrismConfig(**values)


def tiny_dataset(seed=0, nodes=12, events=60, communities=3, recency_bias=0.5):
    return generate_synthetic(SyntheticConfig(num_nodes=nodes, num_events=events, num_communities=communities,
                                              recency_bias=recency_bias, seed=seed))


def tiny_context(ds, stop=None):
    node_matrix, edge_matrix = embed_all(ds, HashingEmbedderConfig(dim=EMB_DIM))
    return GraphContext(node_matrix, edge_matrix, HistoryIndex.build(ds, stop))


def tiny_params(config=None, seed=0, scale=None):
    """ Initialized parameters; ``scale`` adds Gaussian noise so zero-initialized heads are live """
    params = PrismParams.initialize(config or tiny_model_config(), EMB_DIM, Rng(seed))
    if scale:
        noise = Rng(seed).substream('test_noise')
        for tensor in params.values():
            tensor.values += noise.normal(0.0, scale, size=tensor.shape)
    return params


def late_queries(ds, count=6):
    """ The last ``count`` events, which all have history behind them """
    rows = np.arange(ds.num_events - count, ds.num_events)
    return ds.src[rows], ds.dst[rows], ds.timestamps[rows]


def smoke_config(overrides=()):
    return load_run_config(SMOKE_CONFIG_PATH, list(overrides))
