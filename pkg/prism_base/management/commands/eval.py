import os

from django.core.management.base import CommandError

from ...app_settings import EVAL_SETTINGS, EXIT_USAGE, RUN_CONFIG_FILE, RUN_REPORT
from ...autodiff.rng import Rng
from ...checkpoint import load_checkpoint
from ...config import DEFAULT_CONFIG_PATH, load_run_config
from ...dytag_data import load_dataset_dir
from ...evaluation import PrismScorer, evaluate_link_prediction, evaluate_retrieval, write_metric_csv
from ...tasks import CeleryScorer
from ...training import prepare_data, write_json
from ..base import PrismCommand

SPLITS = ('train', 'val', 'test')
TASKS = ('link', 'retrieval')
DISPATCH = ('threads', 'celery')


class Command(PrismCommand):
    help = 'Evaluates a checkpoint on one split/setting for link prediction or destination retrieval'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--data', required=True, help='Dataset directory')
        parser.add_argument('--out', required=True, help='Directory for report.json and metrics.csv')
        parser.add_argument('--split', default='test')
        parser.add_argument('--setting', default='transductive')
        parser.add_argument('--task', default='link')
        parser.add_argument('--dispatch', default='threads', help='threads (in process) or celery')

    def handle(self, *args, **options):
        for key, allowed in (('split', SPLITS), ('setting', EVAL_SETTINGS), ('task', TASKS), ('dispatch', DISPATCH)):
            if options[key] not in allowed:
                raise CommandError('--%s must be one of %s, got %r' % (key, ', '.join(allowed), options[key]),
                                   returncode=EXIT_USAGE)
        report = self.execute_guarded(self.run, options)
        self.stdout.write(report.summary())

    def resolve_config(self, options):
        """ --config when given explicitly, else the config.json saved next to the checkpoint """
        run_config = os.path.join(os.path.dirname(os.path.abspath(options['checkpoint'])), RUN_CONFIG_FILE)
        path = options['config']
        if path == DEFAULT_CONFIG_PATH and os.path.exists(run_config):
            path = run_config
        return load_run_config(path, options.get('overrides')).resolved()

    def run(self, options):
        config = self.resolve_config(options)
        data = prepare_data(load_dataset_dir(options['data']), config)
        params = load_checkpoint(options['checkpoint'], config.model, data.node_matrix.shape[1])
        if options['dispatch'] == 'celery':
            scorer = CeleryScorer(os.path.abspath(options['data']), os.path.abspath(options['checkpoint']), config)
        else:
            scorer = PrismScorer(data.eval_context, params, config.eval.retrieval_source)

        rng = Rng(config.train.seed).substream('eval', options['setting'])
        if options['task'] == 'link':
            report = evaluate_link_prediction(scorer, data.ds, data.splits, options['split'], options['setting'],
                                              rng, data.universe)
        else:
            report = evaluate_retrieval(scorer, data.ds, data.splits, options['split'], options['setting'],
                                        config.eval.C, config.eval.K_list, rng, data.universe)

        os.makedirs(options['out'], exist_ok=True)
        write_json(os.path.join(options['out'], RUN_REPORT), report.to_dict(config_echo=config.to_dict()))
        write_metric_csv(os.path.join(options['out'], 'metrics.csv'), [report])
        return report
