"""
Training loop, run directories and ablation suites

Batches follow event order without shuffling; each positive gets one fresh
negative destination per epoch. Training histories only ever contain train
events, validation and test scoring sees every event before the query time.
"""
import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np
import pandas as pd
from tqdm import tqdm

from .app_settings import APP_NAME, RUN_BEST_CKPT, RUN_CONFIG_FILE, RUN_LAST_CKPT, RUN_REPORT, RUN_TRAIN_LOG
from .autodiff.optim import AdamState, adam_step
from .autodiff.rng import Rng
from .autodiff.tensor import Tape
from .checkpoint import save_checkpoint
from .config import apply_ablation, parse_variant
from .dytag_data import HistoryIndex, chronological_split, load_dataset_dir, sample_negatives
from .evaluation import PrismScorer, evaluate_link_prediction, evaluate_retrieval, resolve_universe
from .exceptions import NonFiniteError
from .objectives import objective_inputs, total_loss
from .prism_model import GraphContext, PrismParams, forward
from .text_embedding import build_embedding_source, embed_all

logger = logging.getLogger('%s.training' % APP_NAME)

TRAIN_LOG_HEADER = ('step', 'task', 'recon', 'margin', 'step_reg', 'total')


@dataclass
class EpochRecord:
    epoch: int
    task: float
    recon: float
    margin: float
    step: float
    total: float
    val_ap: float = None
    seconds: float = 0.0


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_ap: float = None
    stopped_early: bool = False
    steps: int = 0
    param_count: int = 0

    def to_dict(self, include_timing=False):
        """ Wall-clock is left out unless asked for so reruns compare byte for byte """
        epochs = []
        for record in self.epochs:
            row = asdict(record)
            if not include_timing:
                row.pop('seconds')
            epochs.append(row)
        return {'epochs': epochs, 'best_epoch': self.best_epoch, 'best_val_ap': self.best_val_ap,
                'stopped_early': self.stopped_early, 'steps': self.steps, 'param_count': self.param_count}


@dataclass
class PreparedData:
    """ Dataset plus everything derived from it once per run """
    ds: object
    splits: object
    node_matrix: np.ndarray
    edge_matrix: np.ndarray
    universe: np.ndarray

    @cached_property
    def train_context(self):
        return GraphContext(self.node_matrix, self.edge_matrix, HistoryIndex.build(self.ds, self.splits.train.stop))

    @cached_property
    def eval_context(self):
        return GraphContext(self.node_matrix, self.edge_matrix, HistoryIndex.build(self.ds))


def prepare_data(ds, config):
    splits = chronological_split(ds, config.data.ratios)
    node_matrix, edge_matrix = embed_all(ds, build_embedding_source(config.embedding))
    return PreparedData(ds, splits, node_matrix, edge_matrix, resolve_universe(ds, splits, config.data.universe))


""" -----------------------------------------------------------------------
                                  TRAIN
    ------------------------------------------------------------------- """


def _mean_components(reports):
    keys = ('task', 'recon', 'margin', 'step', 'total')
    if not reports:
        return {key: 0.0 for key in keys}
    return {key: float(np.mean([getattr(report, key) for report in reports])) for key in keys}


def train_epoch(params, context, data, config, state, epoch, rng, log_writer=None, step_offset=0, progress=False):
    """ One chronological pass over the train events; returns the per-batch loss reports """
    ds, train = data.ds, data.splits.train
    src, dst, times = ds.src[train.start:train.stop], ds.dst[train.start:train.stop], ds.timestamps[train.start:train.stop]
    negatives = sample_negatives(rng.substream('negatives', epoch), dst, data.universe)
    batch_size = config.train.batch_size
    reports = []

    starts = range(0, src.size, batch_size)
    for batch_index, start in enumerate(tqdm(starts, desc='epoch %d' % epoch, disable=not progress)):
        stop = min(start + batch_size, src.size)
        count = stop - start
        pair_src = np.concatenate([src[start:stop], src[start:stop]])
        pair_dst = np.concatenate([dst[start:stop], negatives[start:stop]])
        pair_times = np.concatenate([times[start:stop], times[start:stop]])
        step_index = step_offset + batch_index

        params.zero_grads()
        with Tape() as tape:
            result = forward(context, pair_src, pair_dst, pair_times, params)
            try:
                loss, report = total_loss(objective_inputs(result, count), params, config.objectives)
            except NonFiniteError as exc:
                raise NonFiniteError('step %(step)s: %(error)s', code='non_finite_step',
                                     params={'step': step_index, 'error': exc})
        tape.backward(loss)
        adam_step(params, params.grads(), state)
        params.zero_grads()

        reports.append(report)
        if log_writer is not None:
            log_writer.writerow(report.as_row(step_index))
    return reports


def validation_ap(params, data, rng):
    """ Transductive link-prediction AP on the validation split (None when it is empty) """
    scorer = PrismScorer(data.eval_context, params)
    return evaluate_link_prediction(scorer, data.ds, data.splits, 'val', 'transductive',
                                    rng.substream('validation'), data.universe).ap


def train(data, config, rng, run_dir=None, progress=False):
    """
    Adam on the weighted objective with validation-based model selection
        returns (best params, last params, TrainReport)
    """
    params = PrismParams.initialize(config.model, data.node_matrix.shape[1], rng)
    state = AdamState(lr=config.train.lr)
    context = data.train_context
    report = TrainReport(param_count=params.count())
    best, best_score, stale = params.copy(), None, 0

    log_handle = open(os.path.join(run_dir, RUN_TRAIN_LOG), 'w', newline='') if run_dir else None
    log_writer = csv.writer(log_handle, lineterminator='\n') if log_handle else None
    if log_writer:
        log_writer.writerow(TRAIN_LOG_HEADER)
    try:
        for epoch in range(1, config.train.epochs + 1):
            started = time.perf_counter()
            reports = train_epoch(params, context, data, config, state, epoch, rng, log_writer,
                                  step_offset=report.steps, progress=progress)
            report.steps += len(reports)
            record = EpochRecord(epoch=epoch, **_mean_components(reports))

            if epoch % config.train.eval_every == 0:
                record.val_ap = validation_ap(params, data, rng)
                # Fall back to the training loss when there is nothing to validate on
                score = record.val_ap if record.val_ap is not None else -record.total
                if best_score is None or score > best_score:
                    best, best_score, stale = params.copy(), score, 0
                    report.best_epoch, report.best_val_ap = epoch, record.val_ap
                else:
                    stale += 1
            record.seconds = time.perf_counter() - started
            report.epochs.append(record)
            logger.info('epoch %d: total=%.5f task=%.5f recon=%.5f margin=%.5f step=%.5f val_ap=%s (%.2fs)',
                        epoch, record.total, record.task, record.recon, record.margin, record.step,
                        'n/a' if record.val_ap is None else '%.4f' % record.val_ap, record.seconds)
            if stale >= config.train.early_stop_patience:
                report.stopped_early = True
                logger.warning('early stop after epoch %d (best epoch %d)', epoch, report.best_epoch)
                break
    finally:
        if log_handle:
            log_handle.close()

    if run_dir:
        save_checkpoint(os.path.join(run_dir, RUN_BEST_CKPT), best, extra={'epoch': report.best_epoch})
        save_checkpoint(os.path.join(run_dir, RUN_LAST_CKPT), params, extra={'epoch': len(report.epochs)})
    return best, params, report


""" -----------------------------------------------------------------------
                               RUN DRIVERS
    ------------------------------------------------------------------- """


def evaluate_checkpoint(params, data, config, rng, split='test', tasks=('link',)):
    """ Reports for every configured setting and task on ``split`` """
    scorer = PrismScorer(data.eval_context, params, config.eval.retrieval_source)
    reports = []
    for setting in config.eval.settings:
        eval_rng = rng.substream('eval', setting)
        if 'link' in tasks:
            reports.append(evaluate_link_prediction(scorer, data.ds, data.splits, split, setting, eval_rng,
                                                    data.universe))
        if 'retrieval' in tasks:
            reports.append(evaluate_retrieval(scorer, data.ds, data.splits, split, setting, config.eval.C,
                                              config.eval.K_list, eval_rng, data.universe))
    return reports


def write_json(path, payload):
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(json.dumps(payload, indent=2, sort_keys=True) + '\n')


def execute_run(data, config, out_dir=None, progress=False):
    """
    Full train + best-checkpoint test evaluation for one resolved config
        returns the report dict written to report.json
    """
    config = config.resolved()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, RUN_CONFIG_FILE), 'w', encoding='utf-8') as handle:
            handle.write(config.to_json())
    rng = Rng(config.train.seed)
    best, _last, report = train(data, config, rng, run_dir=out_dir, progress=progress)
    evaluations = evaluate_checkpoint(best, data, config, rng)
    payload = {
        'config': config.to_dict(),
        'train': report.to_dict(),
        'best_checksum': best.checksum(),
        'evaluations': [evaluation.to_dict() for evaluation in evaluations],
    }
    if out_dir:
        write_json(os.path.join(out_dir, RUN_REPORT), payload)
    return payload


def run_variant(data, base_config, variant, seed, out_dir=None):
    """ Trains one ablation variant from ``seed``; returns its metrics """
    config = apply_ablation(base_config, variant)
    config = replace(config, train=replace(config.train, seed=seed))
    payload = execute_run(data, config, out_dir=out_dir)
    metrics = {'val_ap': payload['train']['best_val_ap']}
    for evaluation in payload['evaluations']:
        metrics['%s_ap' % evaluation['setting']] = evaluation['ap']
    return {'variant': variant, 'seed': seed, 'K': config.model.K, 'metrics': metrics}


def execute_variant_from_dir(data_dir, config, variant, seed, out_dir=None):
    data = prepare_data(load_dataset_dir(data_dir), config)
    return run_variant(data, config, variant, seed, out_dir=out_dir)


""" -----------------------------------------------------------------------
                                ABLATIONS
    ------------------------------------------------------------------- """


def ablation_variants(variants):
    """ Validates names and puts the reference run first """
    for variant in variants:
        parse_variant(variant)
    ordered = ['full'] + [variant for variant in variants if variant != 'full']
    return list(dict.fromkeys(ordered))


def run_ablation_suite(data, base_config, variants, seeds, runner=None, out_dir=None):
    """
    Trains every (variant, seed) and returns the raw results
        - runner(variant, seed) -> result dict; defaults to training in this process
    """
    if runner is None:
        def runner(variant, seed):
            run_dir = os.path.join(out_dir, '%s-seed%d' % (variant, seed)) if out_dir else None
            return run_variant(data, base_config, variant, seed, out_dir=run_dir)
    results = []
    for variant in ablation_variants(variants):
        for seed in seeds:
            logger.info('ablation %s (seed %d)', variant, seed)
            results.append(runner(variant, seed))
    return results


def _arrow(delta):
    if delta < 0:
        return '↓'
    if delta > 0:
        return '↑'
    return ''


def build_ablation_table(results, variants, metric='transductive_ap'):
    """
    One row per variant: mean (and std over seeds) of ``metric`` and its delta vs. full
        K is the refinement step count the variant trained with
        display renders like "0.8123 (↓0.0412)"
    """
    by_variant, steps_of = {}, {}
    for result in results:
        by_variant.setdefault(result['variant'], []).append(result['metrics'].get(metric))
        if result.get('K') is not None:
            steps_of[result['variant']] = result['K']
    reference = None
    rows = []
    for variant in ablation_variants(variants):
        values = [value for value in by_variant.get(variant, []) if value is not None]
        mean = float(np.mean(values)) if values else None
        std = float(np.std(values)) if values else None
        if variant == 'full':
            reference = mean
        delta = None if mean is None or reference is None else mean - reference
        if delta is None:
            display = 'n/a'
        elif variant == 'full':
            display = '%.4f' % mean
        else:
            display = '%.4f (%s%.4f)' % (mean, _arrow(delta), abs(delta))
        _name, steps = parse_variant(variant)
        K = steps if steps is not None else steps_of.get(variant)
        rows.append({'variant': variant, 'K': K, 'metric': metric, 'value': mean, 'std': std,
                     'seeds': len(values), 'delta_vs_full': delta, 'display': display})
    return rows


ABLATION_TABLE_COLUMNS = ('variant', 'K', 'metric', 'value', 'std', 'seeds', 'delta_vs_full', 'display')


def write_ablation_table(out_dir, rows):
    table = pd.DataFrame(rows, columns=list(ABLATION_TABLE_COLUMNS), dtype=object)
    table.to_csv(os.path.join(out_dir, 'ablation.csv'), index=False, lineterminator='\n')
    write_json(os.path.join(out_dir, 'ablation.json'), rows)
