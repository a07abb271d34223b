"""
Ranking metrics and the link-prediction / retrieval evaluation drivers

Negatives, candidate pools and tie-breaking permutations are drawn before
any scoring, so a report does not depend on how queries are segmented or on
how many threads score them.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from django.conf import settings
from scipy.stats import rankdata

from .app_settings import APP_NAME, EVAL_SEGMENT_SIZE
from .autodiff import ops
from .dytag_data import build_candidate_pool, sample_negatives
from .exceptions import ConfigurationError, UndefinedMetricError
from .prism_model import decode_link, encode_source, forward

logger = logging.getLogger('%s.evaluation' % APP_NAME)


@dataclass(frozen=True)
class ScoredPair:
    score: float
    label: int


@dataclass(frozen=True)
class RankingResult:
    rank_of_truth: int                  # 1 = best
    pool_size: int


@dataclass
class EvalReport:
    task: str                           # 'link' or 'retrieval'
    split: str
    setting: str
    seed: int
    n_queries: int
    ap: float = None
    auc: float = None
    hits: dict = None                   # {"1": ..., "3": ...}, retrieval only
    pool_size: int = None
    extra: dict = field(default_factory=dict)

    def to_dict(self, config_echo=None):
        report = {
            'task': self.task, 'split': self.split, 'setting': self.setting, 'seed': self.seed,
            'n_queries': self.n_queries, 'ap': self.ap, 'auc': self.auc,
        }
        if self.task != 'link':
            report['hits'] = self.hits
        if self.pool_size is not None:
            report['C'] = self.pool_size
        if config_echo is not None:
            report['config_echo'] = config_echo
        return report

    def summary(self):
        if self.task == 'link':
            fmt = lambda value: 'n/a' if value is None else '%.4f' % value
            return '%s/%s/%s: n=%d ap=%s auc=%s' % (self.task, self.split, self.setting, self.n_queries,
                                                     fmt(self.ap), fmt(self.auc))
        hits = ' '.join('hits@%s=%s' % (k, 'n/a' if v is None else '%.4f' % v) for k, v in (self.hits or {}).items())
        return '%s/%s/%s: n=%d C=%s %s' % (self.task, self.split, self.setting, self.n_queries, self.pool_size, hits)


""" -----------------------------------------------------------------------
                                 METRICS
    ------------------------------------------------------------------- """


def _unpack(scores, labels=None):
    """ Accepts either (scores, labels) arrays or one list of ScoredPair """
    if labels is None:
        pairs = list(scores)
        scores = [pair.score for pair in pairs]
        labels = [pair.label for pair in pairs]
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ConfigurationError('scores and labels differ in length', code='metric_shape')
    if not np.all(np.isfinite(scores)):
        raise UndefinedMetricError('scores must be finite', code='metric_non_finite')
    return scores, labels


def average_precision(scores, labels=None):
    """
    Mean precision at the rank of each positive
        - descending score order
        - a group of equal scores is one threshold: every positive in it gets the
          precision measured at the end of the group (no input-order credit)
    """
    scores, labels = _unpack(scores, labels)
    positives = int(labels.sum())
    if positives == 0:
        raise UndefinedMetricError('average precision needs at least one positive', code='no_positives')
    order = np.argsort(-scores, kind='stable')
    descending = -scores[order]
    ranked = labels[order]
    hits = np.cumsum(ranked)
    group_end = np.searchsorted(descending, descending, side='right') - 1
    precision = hits[group_end] / (group_end + 1.0)
    return float(precision[ranked == 1].sum() / positives)


def roc_auc(scores, labels=None):
    """ P(pos > neg) + 0.5 P(tie) via the Mann-Whitney rank sum """
    scores, labels = _unpack(scores, labels)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        raise UndefinedMetricError('ROC-AUC needs both classes (%(p)s positives, %(n)s negatives)',
                                   code='single_class', params={'p': positives, 'n': negatives})
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives))


def hits_at_k(results, K):
    if K < 1:
        raise ConfigurationError('Hits@K needs K >= 1, got %(k)s', code='hits_k', params={'k': K})
    results = list(results)
    if not results:
        raise UndefinedMetricError('Hits@K over zero queries', code='no_queries')
    return float(np.mean([result.rank_of_truth <= K for result in results]))


def rank_of_truth(scores, truth, tie_order):
    """
    1-based rank of candidate ``truth``
        - higher scores rank first
        - equal scores fall back to their position in ``tie_order`` (a permutation)
    """
    scores = np.asarray(scores, dtype=np.float64)
    position = np.empty(scores.size, dtype=np.int64)
    position[np.asarray(tie_order, dtype=np.int64)] = np.arange(scores.size)
    better = scores > scores[truth]
    tied_ahead = (scores == scores[truth]) & (position < position[truth])
    return RankingResult(int(better.sum() + tied_ahead.sum()) + 1, scores.size)


""" -----------------------------------------------------------------------
                                 SCORING
    ------------------------------------------------------------------- """


def run_segments(func, count, segment_size=EVAL_SEGMENT_SIZE, threads=None):
    """ func(start, stop) over consecutive segments; results are returned in segment order """
    threads = threads or getattr(settings, 'PRISM_NUM_THREADS', 1)
    bounds = [(start, min(start + segment_size, count)) for start in range(0, count, segment_size)]
    if threads <= 1 or len(bounds) <= 1:
        return [func(start, stop) for start, stop in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda bound: func(*bound), bounds))


class PrismScorer(object):
    """ Read-only scoring view of (context, params); never records a tape """

    def __init__(self, context, params, retrieval_source='shared'):
        self.context = context
        self.params = params
        self.retrieval_source = retrieval_source

    def score_pairs(self, src, dst, times):
        src, dst, times = np.asarray(src), np.asarray(dst), np.asarray(times, dtype=np.float64)

        def segment(start, stop):
            return forward(self.context, src[start:stop], dst[start:stop], times[start:stop], self.params).scores.values
        parts = run_segments(segment, src.size)
        return np.concatenate(parts) if parts else np.zeros(0)

    def score_candidates(self, src, times, candidates):
        """ [q] sources, [q] times, [q x C] candidates -> scores [q x C] """
        src, times = np.asarray(src, dtype=np.int64), np.asarray(times, dtype=np.float64)
        candidates = np.asarray(candidates, dtype=np.int64)
        q, C = candidates.shape
        per_segment = max(1, EVAL_SEGMENT_SIZE // max(C, 1))

        def segment(start, stop):
            rows = stop - start
            pair_src = np.repeat(src[start:stop], C)
            pair_times = np.repeat(times[start:stop], C)
            result = forward(self.context, pair_src, candidates[start:stop].reshape(-1), pair_times, self.params)
            if self.retrieval_source == 'paired':
                return result.scores.values.reshape(rows, C)
            sources = encode_source(self.context, src[start:stop], times[start:stop], self.params)
            repeated = ops.take_rows(sources, np.repeat(np.arange(rows), C))
            return decode_link(repeated, result.trajectory_v.final, self.params).values.reshape(rows, C)
        parts = run_segments(segment, q, segment_size=per_segment)
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, C))


""" -----------------------------------------------------------------------
                                 DRIVERS
    ------------------------------------------------------------------- """


def setting_filter(ds, splits, indices, setting):
    """ inductive: some endpoint unseen in training; transductive: both seen """
    indices = np.asarray(list(indices), dtype=np.int64)
    unseen = np.zeros(ds.num_nodes, dtype=bool)
    unseen[list(splits.inductive_nodes)] = True
    inductive = unseen[ds.src[indices]] | unseen[ds.dst[indices]]
    if setting == 'inductive':
        return indices[inductive]
    if setting == 'transductive':
        return indices[~inductive]
    raise ConfigurationError('unknown evaluation setting %(setting)s', code='setting', params={'setting': setting})


def resolve_universe(ds, splits, universe):
    if universe == 'train_destinations':
        return np.unique(ds.dst[splits.train.start:splits.train.stop])
    return ds.destination_universe()


def evaluate_link_prediction(scorer, ds, splits, split, setting, rng, universe):
    """ AP / ROC-AUC of each positive against one sampled negative destination """
    indices = setting_filter(ds, splits, splits.get(split), setting)
    report = EvalReport('link', split, setting, rng.seed, int(indices.size))
    if not indices.size:
        logger.warning('no %s queries in the %s split, metrics left empty', setting, split)
        return report
    src, dst, times = ds.src[indices], ds.dst[indices], ds.timestamps[indices]
    negatives = sample_negatives(rng.substream('eval', split, setting, 'negatives'), dst, universe)
    scores = scorer.score_pairs(np.concatenate([src, src]), np.concatenate([dst, negatives]),
                                np.concatenate([times, times]))
    labels = np.concatenate([np.ones(indices.size, dtype=np.int64), np.zeros(indices.size, dtype=np.int64)])
    report.ap = average_precision(scores, labels)
    report.auc = roc_auc(scores, labels)
    logger.info(report.summary())
    return report


def evaluate_retrieval(scorer, ds, splits, split, setting, C, K_list, rng, universe):
    """ Hits@K of the true destination inside a pool of C candidates per query """
    indices = setting_filter(ds, splits, splits.get(split), setting)
    report = EvalReport('retrieval', split, setting, rng.seed, int(indices.size), pool_size=C)
    if not indices.size:
        logger.warning('no %s queries in the %s split, metrics left empty', setting, split)
        report.hits = {str(k): None for k in K_list}
        return report

    pools, orders = [], []
    for index in indices.tolist():
        query = (int(ds.src[index]), float(ds.timestamps[index]), int(ds.dst[index]))
        pool = build_candidate_pool(rng.substream('candidates', split, index), query, C, universe)
        pools.append(np.sort(np.asarray(pool.candidates, dtype=np.int64)))
        orders.append(rng.substream('ties', split, index).permutation(C))
    candidates = np.stack(pools)
    scores = scorer.score_candidates(ds.src[indices], ds.timestamps[indices], candidates)

    results = [rank_of_truth(scores[row], int(np.flatnonzero(candidates[row] == ds.dst[index])[0]), orders[row])
               for row, index in enumerate(indices.tolist())]
    report.hits = {str(k): hits_at_k(results, k) for k in K_list}
    report.extra['mean_rank'] = float(np.mean([result.rank_of_truth for result in results]))
    logger.info(report.summary())
    return report


def write_metric_csv(path, reports):
    """ Plot-ready rows: metric,K,value """
    rows = []
    for report in reports:
        prefix = '%s_%s' % (report.setting, report.task)
        if report.task == 'link':
            rows.append((prefix + '_ap', '', report.ap))
            rows.append((prefix + '_auc', '', report.auc))
        else:
            rows.extend((prefix + '_hits', k, value) for k, value in (report.hits or {}).items())
    pd.DataFrame(rows, columns=['metric', 'K', 'value'], dtype=object).to_csv(path, index=False, lineterminator='\n')
