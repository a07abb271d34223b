from __future__ import absolute_import, unicode_literals

import hashlib
import json
import logging
from functools import lru_cache

import numpy as np
from celery import shared_task

from .app_settings import APP_NAME, EVAL_SEGMENT_SIZE
from .checkpoint import load_checkpoint
from .config import RunConfig
from .dytag_data import load_dataset_dir
from .evaluation import PrismScorer
from .training import execute_variant_from_dir, prepare_data

logger = logging.getLogger('%s.tasks' % APP_NAME)


def checkpoint_digest(path):
    """ sha256 of the checkpoint bytes; a rewritten checkpoint gets a new scorer """
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for block in iter(lambda: handle.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


@lru_cache(maxsize=4)
def _cached_scorer(data_dir, checkpoint_path, digest, config_json):
    config = RunConfig.from_dict(json.loads(config_json)).resolved()
    data = prepare_data(load_dataset_dir(data_dir), config)
    params = load_checkpoint(checkpoint_path, config.model, data.node_matrix.shape[1])
    logger.debug('loaded scorer for %s (%s)', checkpoint_path, digest[:12])
    return PrismScorer(data.eval_context, params, config.eval.retrieval_source)


def _worker_scorer(data_dir, checkpoint_path, config_json):
    """ Scorer a worker keeps between segments of the same evaluation """
    return _cached_scorer(data_dir, checkpoint_path, checkpoint_digest(checkpoint_path), config_json)


@shared_task(name='evaluate_query_segment')
def task_evaluate_query_segment(data_dir, checkpoint_path, config_json, task, segment):
    """ segment : {src, dst, times} for link, {src, times, candidates} for retrieval """
    scorer = _worker_scorer(data_dir, checkpoint_path, config_json)
    if task == 'link':
        scores = scorer.score_pairs(segment['src'], segment['dst'], segment['times'])
    else:
        scores = scorer.score_candidates(segment['src'], segment['times'], segment['candidates'])
    return np.asarray(scores).tolist()


@shared_task(name='train_ablation_variant')
def task_train_ablation_variant(data_dir, config_json, variant, seed, out_dir=None):
    """ Trains and evaluates one (variant, seed) of an ablation suite """
    config = RunConfig.from_dict(json.loads(config_json))
    return execute_variant_from_dir(data_dir, config, variant, seed, out_dir=out_dir)


class CeleryScorer(object):
    """ Scorer interface of PrismScorer, one Celery task per query segment """

    def __init__(self, data_dir, checkpoint_path, config, segment_size=EVAL_SEGMENT_SIZE):
        self.data_dir = data_dir
        self.checkpoint_path = checkpoint_path
        self.config_json = json.dumps(config.to_dict(), sort_keys=True)
        self.segment_size = segment_size

    def _dispatch(self, task, segments):
        logger.debug('dispatching %d %s segments', len(segments), task)
        pending = [task_evaluate_query_segment.delay(self.data_dir, self.checkpoint_path, self.config_json, task, seg)
                   for seg in segments]
        return [result.get() for result in pending]

    def score_pairs(self, src, dst, times):
        bounds = range(0, len(src), self.segment_size)
        segments = [{'src': np.asarray(src[s:s + self.segment_size]).tolist(),
                     'dst': np.asarray(dst[s:s + self.segment_size]).tolist(),
                     'times': np.asarray(times[s:s + self.segment_size], dtype=np.float64).tolist()} for s in bounds]
        parts = self._dispatch('link', segments) if segments else []
        return np.concatenate([np.asarray(part, dtype=np.float64) for part in parts]) if parts else np.zeros(0)

    def score_candidates(self, src, times, candidates):
        candidates = np.asarray(candidates, dtype=np.int64)
        step = max(1, self.segment_size // max(candidates.shape[1], 1))
        segments = [{'src': np.asarray(src[s:s + step]).tolist(),
                     'times': np.asarray(times[s:s + step], dtype=np.float64).tolist(),
                     'candidates': candidates[s:s + step].tolist()} for s in range(0, len(src), step)]
        parts = self._dispatch('retrieval', segments) if segments else []
        if not parts:
            return np.zeros((0, candidates.shape[1]))
        return np.concatenate([np.asarray(part, dtype=np.float64) for part in parts], axis=0)
