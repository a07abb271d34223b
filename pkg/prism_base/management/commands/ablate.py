import json
import os

from ...tasks import task_train_ablation_variant
from ...training import ablation_variants, build_ablation_table, run_ablation_suite, write_ablation_table, \
    write_json
from ..base import PrismCommand


class Command(PrismCommand):
    help = 'Trains ablation variants (one Celery task per variant and seed) and writes the comparison table'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--data', required=True, help='Dataset directory')
        parser.add_argument('--out', required=True, help='Directory for the table and per-variant runs')
        parser.add_argument('--variants', default='full',
                            help='Comma separated: full, wo_semantic, wo_behavior, wo_recon, wo_margin, wo_step, steps=K')
        parser.add_argument('--seeds', default=None, help='Comma separated seeds (default: train.seed)')
        parser.add_argument('--metric', default='transductive_ap')

    def handle(self, *args, **options):
        rows = self.execute_guarded(self.run, options)
        for row in rows:
            self.stdout.write('%-14s %s' % (row['variant'], row['display']))

    def run(self, options):
        config = self.load_config(options)
        variants = ablation_variants([v.strip() for v in options['variants'].split(',') if v.strip()])
        seeds = [int(s) for s in options['seeds'].split(',')] if options['seeds'] else [config.train.seed]
        out_dir = options['out']
        os.makedirs(out_dir, exist_ok=True)
        data_dir = os.path.abspath(options['data'])
        config_json = json.dumps(config.to_dict(), sort_keys=True)

        pending = {}

        def dispatch(variant, seed):
            run_dir = os.path.abspath(os.path.join(out_dir, '%s-seed%d' % (variant, seed)))
            pending[(variant, seed)] = task_train_ablation_variant.delay(data_dir, config_json, variant, seed, run_dir)
            return (variant, seed)

        keys = run_ablation_suite(None, config, variants, seeds, runner=dispatch)
        results = [pending[key].get() for key in keys]
        rows = build_ablation_table(results, variants, metric=options['metric'])
        write_ablation_table(out_dir, rows)
        write_json(os.path.join(out_dir, 'ablation_runs.json'), results)
        return rows
