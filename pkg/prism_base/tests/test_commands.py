import csv
import io
import json
import os
import tempfile

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from ..app_settings import EXIT_CHECKPOINT_MISMATCH, EXIT_GRAD_CHECK_FAILED, EXIT_IO, EXIT_USAGE
from ..config import SMOKE_CONFIG_PATH
from ..management.commands.grad_check import Command as GradCheckCommand

DATA_ARGS = ['--nodes', '16', '--events', '160', '--communities', '2', '--seed', '3']


def run(*args, **options):
    out = io.StringIO()
    call_command(*args, stdout=out, **options)
    return out.getvalue()


def read_bytes(path):
    with open(path, 'rb') as handle:
        return handle.read()


class GenDataCommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_same_seed_same_files(self):
        first, second = os.path.join(self.tmp.name, 'a'), os.path.join(self.tmp.name, 'b')
        output = run('gen_data', '--out', first, *DATA_ARGS)
        run('gen_data', '--out', second, *DATA_ARGS)
        self.assertIn('wrote 160 events over 16 nodes', output)
        self.assertEqual(sorted(os.listdir(first)), sorted(os.listdir(second)))
        for name in os.listdir(first):
            self.assertEqual(read_bytes(os.path.join(first, name)), read_bytes(os.path.join(second, name)), name)
        with open(os.path.join(first, 'manifest.json'), encoding='utf-8') as handle:
            manifest = json.load(handle)
        self.assertEqual((manifest['num_events'], manifest['num_nodes']), (160, 16))

    def test_infeasible_settings_are_a_usage_error(self):
        with self.assertRaises(CommandError) as caught:
            run('gen_data', '--out', self.tmp.name, '--nodes', '1')
        self.assertEqual(caught.exception.returncode, EXIT_USAGE)

    def test_missing_source_directory_is_an_io_error(self):
        with self.assertRaises(CommandError) as caught:
            run('convert_dtgb', '--src', os.path.join(self.tmp.name, 'absent'),
                '--out', os.path.join(self.tmp.name, 'out'))
        self.assertEqual(caught.exception.returncode, EXIT_IO)


@tag('slow')
class TrainEvalCommandTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.data = os.path.join(cls.tmp.name, 'data')
        cls.run_dir = os.path.join(cls.tmp.name, 'run')
        run('gen_data', '--out', cls.data, *DATA_ARGS)
        cls.train_output = run('train', '--config', SMOKE_CONFIG_PATH, '--data', cls.data, '--out', cls.run_dir)
        cls.checkpoint = os.path.join(cls.run_dir, 'best.ckpt')

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def eval_into(self, name, *args):
        out_dir = os.path.join(self.tmp.name, name)
        output = run('eval', '--checkpoint', self.checkpoint, '--data', self.data, '--out', out_dir, *args)
        with open(os.path.join(out_dir, 'report.json'), encoding='utf-8') as handle:
            report = json.load(handle)
        with open(os.path.join(out_dir, 'metrics.csv'), newline='', encoding='utf-8') as handle:
            rows = list(csv.DictReader(handle))
        return output, report, rows

    def test_train_writes_the_run_directory(self):
        self.assertEqual(sorted(os.listdir(self.run_dir)),
                         ['best.ckpt', 'config.json', 'last.ckpt', 'report.json', 'train_log.csv'])
        lines = self.train_output.strip().splitlines()
        self.assertTrue(lines[0].startswith('best epoch'))
        settings = [json.loads(line)['setting'] for line in lines[1:]]
        self.assertEqual(settings, ['transductive', 'inductive'])

    def test_link_report(self):
        output, report, rows = self.eval_into('link')
        self.assertIn('link/test/transductive', output)
        self.assertEqual((report['task'], report['split'], report['setting']), ('link', 'test', 'transductive'))
        self.assertEqual(report['config_echo']['model']['K'], 2)
        self.assertGreater(report['n_queries'], 0)
        self.assertTrue(0.0 <= report['ap'] <= 1.0)
        self.assertNotIn('hits', report)
        self.assertEqual([row['metric'] for row in rows], ['transductive_link_ap', 'transductive_link_auc'])

    def test_retrieval_report(self):
        _, report, _ = self.eval_into('retrieval', '--task', 'retrieval', '--split', 'val')
        self.assertEqual(report['C'], 10)
        self.assertEqual(sorted(report['hits'], key=int), ['1', '3', '10'])
        self.assertEqual(report['hits']['10'], 1.0)

    def test_celery_dispatch_matches_threads(self):
        _, threads, _ = self.eval_into('threads')
        _, celery, _ = self.eval_into('celery', '--dispatch', 'celery')
        self.assertEqual(threads['n_queries'], celery['n_queries'])
        self.assertAlmostEqual(threads['ap'], celery['ap'], places=12)
        self.assertAlmostEqual(threads['auc'], celery['auc'], places=12)

    def test_unknown_setting(self):
        with self.assertRaises(CommandError) as caught:
            self.eval_into('bad', '--setting', 'semi-inductive')
        self.assertEqual(caught.exception.returncode, EXIT_USAGE)

    def test_checkpoint_from_another_architecture(self):
        with self.assertRaises(CommandError) as caught:
            self.eval_into('mismatch', '--config', SMOKE_CONFIG_PATH, '--set', 'model.K=3')
        self.assertEqual(caught.exception.returncode, EXIT_CHECKPOINT_MISMATCH)

    def test_ablation_table(self):
        out_dir = os.path.join(self.tmp.name, 'ablation')
        output = run('ablate', '--config', SMOKE_CONFIG_PATH, '--data', self.data, '--out', out_dir,
                     '--variants', 'wo_step', '--seeds', '0')
        self.assertEqual([line.split()[0] for line in output.strip().splitlines()], ['full', 'wo_step'])
        for name in ('ablation.csv', 'ablation.json', 'ablation_runs.json', 'full-seed0', 'wo_step-seed0'):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)), name)
        with open(os.path.join(out_dir, 'ablation_runs.json'), encoding='utf-8') as handle:
            runs = json.load(handle)
        self.assertEqual([(r['variant'], r['seed']) for r in runs], [('full', 0), ('wo_step', 0)])


class GradCheckCommandTests(SimpleTestCase):

    @tag('slow')
    def test_passes_on_the_real_objective(self):
        output = run('grad_check', '--config', SMOKE_CONFIG_PATH)
        self.assertIn('gradient check passed', output)

    def test_sabotaged_block_fails(self):
        command = GradCheckCommand()
        command.analytic_hook = lambda name, grad: grad + 1.0 if name == 'decoder.w1' else grad
        with self.assertRaises(CommandError) as caught:
            run(command, '--config', SMOKE_CONFIG_PATH, '--samples', '6')
        self.assertEqual(caught.exception.returncode, EXIT_GRAD_CHECK_FAILED)
        self.assertIn('decoder.w1', str(caught.exception))

    def test_bad_override_is_a_usage_error(self):
        with self.assertRaises(CommandError) as caught:
            run('grad_check', '--config', SMOKE_CONFIG_PATH, '--set', 'model.nope=1')
        self.assertEqual(caught.exception.returncode, EXIT_USAGE)
