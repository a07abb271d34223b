import json

from ...dytag_data import load_dataset_dir
from ...training import execute_run, prepare_data
from ..base import PrismCommand


class Command(PrismCommand):
    help = 'Trains PRISM on a dataset directory and writes a run directory'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--data', required=True, help='Dataset directory')
        parser.add_argument('--out', required=True, help='Run directory to write')

    def handle(self, *args, **options):
        payload = self.execute_guarded(self.run, options)
        train = payload['train']
        self.stdout.write('best epoch %s (val ap %s), %d steps' % (train['best_epoch'], train['best_val_ap'],
                                                                   train['steps']))
        for evaluation in payload['evaluations']:
            self.stdout.write(json.dumps({key: evaluation[key] for key in ('setting', 'n_queries', 'ap', 'auc')},
                                         sort_keys=True))

    def run(self, options):
        config = self.load_config(options)
        data = prepare_data(load_dataset_dir(options['data']), config)
        return execute_run(data, config, out_dir=options['out'], progress=self.progress_enabled(options))
