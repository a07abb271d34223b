import csv
import json
import os
import tempfile

from django.test import SimpleTestCase, tag

from ..autodiff.rng import Rng
from ..checkpoint import load_checkpoint
from ..prism_model import PrismParams
from ..training import TRAIN_LOG_HEADER, ablation_variants, build_ablation_table, execute_run, prepare_data, \
    run_ablation_suite, run_variant, train, write_ablation_table
from .utils import smoke_config, tiny_dataset


def fake_result(variant, seed, value):
    return {'variant': variant, 'seed': seed, 'metrics': {'transductive_ap': value, 'val_ap': value}}


class AblationTableTests(SimpleTestCase):

    def test_rows_and_deltas(self):
        results = [fake_result('full', 0, 0.80), fake_result('full', 1, 0.90),
                   fake_result('wo_recon', 0, 0.70), fake_result('wo_recon', 1, 0.80),
                   fake_result('steps=4', 0, 0.95)]
        rows = build_ablation_table(results, ['wo_recon', 'full', 'steps=4'])
        self.assertEqual([row['variant'] for row in rows], ['full', 'wo_recon', 'steps=4'])
        full, recon, steps = rows
        self.assertAlmostEqual(full['value'], 0.85)
        self.assertAlmostEqual(full['std'], 0.05)
        self.assertEqual(full['delta_vs_full'], 0.0)
        self.assertEqual(full['display'], '0.8500')
        self.assertAlmostEqual(recon['delta_vs_full'], -0.10)
        self.assertEqual(recon['display'], '0.7500 (↓0.1000)')
        self.assertEqual((steps['K'], steps['seeds']), (4, 1))
        self.assertEqual(steps['display'], '0.9500 (↑0.1000)')

    def test_full_row_carries_the_trained_step_count(self):
        results = [dict(fake_result('full', 0, 0.8), K=2), dict(fake_result('steps=1', 0, 0.7), K=1),
                   dict(fake_result('wo_recon', 0, 0.75), K=2)]
        rows = build_ablation_table(results, ['steps=1', 'wo_recon'])
        self.assertEqual([(row['variant'], row['K']) for row in rows],
                         [('full', 2), ('steps=1', 1), ('wo_recon', 2)])

    def test_missing_metric_values(self):
        rows = build_ablation_table([fake_result('full', 0, None)], ['full'])
        self.assertEqual((rows[0]['value'], rows[0]['display'], rows[0]['seeds']), (None, 'n/a', 0))

    def test_variant_order(self):
        self.assertEqual(ablation_variants(['wo_step', 'full', 'wo_step', 'steps=3']), ['full', 'wo_step', 'steps=3'])

    def test_suite_runs_every_variant_and_seed(self):
        calls = []

        def runner(variant, seed):
            calls.append((variant, seed))
            return fake_result(variant, seed, 0.5)
        results = run_ablation_suite(None, smoke_config(), ['wo_margin'], [0, 1], runner=runner)
        self.assertEqual(calls, [('full', 0), ('full', 1), ('wo_margin', 0), ('wo_margin', 1)])
        self.assertEqual(len(results), 4)

    def test_table_files(self):
        rows = build_ablation_table([fake_result('full', 0, 0.8), fake_result('wo_step', 0, 0.8)], ['wo_step'])
        with tempfile.TemporaryDirectory() as tmp:
            write_ablation_table(tmp, rows)
            with open(os.path.join(tmp, 'ablation.csv'), newline='', encoding='utf-8') as handle:
                table = list(csv.DictReader(handle))
            with open(os.path.join(tmp, 'ablation.json'), encoding='utf-8') as handle:
                self.assertEqual(json.load(handle), rows)
        self.assertEqual([row['variant'] for row in table], ['full', 'wo_step'])
        self.assertEqual(table[1]['display'], '0.8000 (0.0000)')


@tag('slow')
class TrainingTests(SimpleTestCase):

    def setUp(self):
        self.config = smoke_config()
        self.data = prepare_data(tiny_dataset(seed=8, events=120), self.config)

    def test_training_sees_only_train_events(self):
        history = self.data.train_context.history
        self.assertEqual(history.offsets[-1], 2 * len(self.data.splits.train))
        self.assertEqual(self.data.eval_context.history.offsets[-1], 2 * self.data.ds.num_events)

    def test_zero_learning_rate_changes_nothing(self):
        config = smoke_config(['train.lr=0'])
        best, last, report = train(self.data, config, Rng(0))
        initial = PrismParams.initialize(config.model, self.data.node_matrix.shape[1], Rng(0))
        self.assertEqual(last.checksum(), initial.checksum())
        self.assertEqual(best.checksum(), initial.checksum())
        self.assertEqual(report.steps, 2 * 2)

    def test_same_seed_same_run(self):
        first = train(self.data, self.config, Rng(1))
        second = train(self.data, self.config, Rng(1))
        self.assertEqual(first[1].checksum(), second[1].checksum())
        self.assertEqual(first[2].to_dict(), second[2].to_dict())
        self.assertNotEqual(train(self.data, self.config, Rng(2))[1].checksum(), first[1].checksum())

    def test_loss_goes_down(self):
        config = smoke_config(['train.epochs=6', 'train.lr=0.01', 'train.batch_size=16',
                               'train.early_stop_patience=10'])
        _, _, report = train(self.data, config, Rng(0))
        self.assertEqual(len(report.epochs), 6)
        self.assertLess(report.epochs[-1].task, report.epochs[0].task)

    def test_early_stop_without_improvement(self):
        config = smoke_config(['train.lr=0', 'train.epochs=5', 'train.early_stop_patience=1'])
        _, _, report = train(self.data, config, Rng(0))
        self.assertTrue(report.stopped_early)
        self.assertEqual(len(report.epochs), 2)
        self.assertEqual(report.best_epoch, 1)

    def test_run_directory(self):
        with tempfile.TemporaryDirectory() as out:
            payload = execute_run(self.data, self.config, out_dir=out)
            self.assertEqual(sorted(os.listdir(out)),
                             ['best.ckpt', 'config.json', 'last.ckpt', 'report.json', 'train_log.csv'])
            with open(os.path.join(out, 'train_log.csv'), newline='') as handle:
                log = list(csv.reader(handle))
            with open(os.path.join(out, 'report.json'), encoding='utf-8') as handle:
                report = json.load(handle)
            best = load_checkpoint(os.path.join(out, 'best.ckpt'))
        self.assertEqual(tuple(log[0]), TRAIN_LOG_HEADER)
        self.assertEqual(len(log) - 1, payload['train']['steps'])
        self.assertEqual(report, payload)
        self.assertEqual(best.checksum(), payload['best_checksum'])
        self.assertNotIn('seconds', report['train']['epochs'][0])
        self.assertEqual({e['setting'] for e in report['evaluations']}, {'transductive', 'inductive'})

    def test_reruns_write_identical_reports(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            execute_run(self.data, self.config, out_dir=first)
            execute_run(self.data, self.config, out_dir=second)
            for name in ('report.json', 'config.json', 'train_log.csv', 'best.ckpt'):
                with open(os.path.join(first, name), 'rb') as a, open(os.path.join(second, name), 'rb') as b:
                    self.assertEqual(a.read(), b.read(), name)

    def test_variants_apply_their_deltas(self):
        result = run_variant(self.data, self.config, 'wo_behavior', 3)
        self.assertEqual((result['variant'], result['seed']), ('wo_behavior', 3))
        self.assertEqual(set(result['metrics']), {'val_ap', 'transductive_ap', 'inductive_ap'})

    def test_step_sweep(self):
        results = run_ablation_suite(self.data, self.config, ['steps=1', 'steps=3'], [0])
        rows = build_ablation_table(results, ['steps=1', 'steps=3'])
        self.assertEqual([row['K'] for row in rows], [self.config.model.K, 1, 3])
        self.assertTrue(all(row['seeds'] == 1 for row in rows))
