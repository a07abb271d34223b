"""
End-to-end gradient check of the weighted objective on a tiny synthetic batch
"""
import logging
from dataclasses import replace

import numpy as np

from .app_settings import APP_NAME, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE
from .autodiff.gradcheck import grad_check
from .autodiff.rng import Rng
from .dytag_data import HistoryIndex, SyntheticConfig, generate_synthetic, sample_negatives
from .objectives import objective_inputs, total_loss
from .prism_model import GraphContext, PrismParams, forward
from .text_embedding import HashingEmbedderConfig, embed_all

logger = logging.getLogger('%s.grad_check' % APP_NAME)

BATCH_EVENTS = 4
PERTURB_SCALE = 0.1
TINY_DATA = SyntheticConfig(num_nodes=10, num_events=40, num_communities=2, recency_bias=0.5, recent_window=3)


def tiny_model_config(model_config):
    """ Keeps K and the ablation flags, shrinks every width """
    return replace(model_config, d=8, d_time=4, L=4, heads=2, enc_layers=1)


def build_check_problem(config, seed):
    """ -> (loss closure, params) over the last BATCH_EVENTS events of a tiny synthetic stream """
    rng = Rng(seed)
    ds = generate_synthetic(replace(TINY_DATA, seed=seed))
    node_matrix, edge_matrix = embed_all(ds, HashingEmbedderConfig(dim=8, salt=config.embedding.salt))
    context = GraphContext(node_matrix, edge_matrix, HistoryIndex.build(ds))
    params = PrismParams.initialize(tiny_model_config(config.model), node_matrix.shape[1], rng)
    # Zero-initialized heads would hide most of the graph from the check
    noise = rng.substream('perturb')
    for tensor in params.values():
        tensor.values += noise.normal(0.0, PERTURB_SCALE, size=tensor.shape)

    rows = np.arange(ds.num_events - BATCH_EVENTS, ds.num_events)
    negatives = sample_negatives(rng.substream('negatives'), ds.dst[rows], ds.destination_universe())
    src = np.concatenate([ds.src[rows], ds.src[rows]])
    dst = np.concatenate([ds.dst[rows], negatives])
    times = np.concatenate([ds.timestamps[rows], ds.timestamps[rows]])

    def loss():
        result = forward(context, src, dst, times, params)
        return total_loss(objective_inputs(result, BATCH_EVENTS), params, config.objectives)[0]
    return loss, params


def run_grad_check(config, seed, analytic_hook=None, tolerance=GRAD_CHECK_TOLERANCE, samples=None):
    """ Every coordinate of every block unless ``samples`` caps the coordinates checked per block """
    loss, params = build_check_problem(config.resolved(), seed)
    report = grad_check(loss, params, h=GRAD_CHECK_STEP, samples=samples,
                        rng=Rng(seed).substream('grad_check'), tolerance=tolerance, analytic_hook=analytic_hook)
    for block in report.blocks:
        logger.debug('%-32s %.3e', block.name, block.max_error)
    return report
