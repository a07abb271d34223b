from ...app_settings import SYNTH_COMMUNITIES, SYNTH_EVENTS, SYNTH_NODES, SYNTH_RECENCY_BIAS, SYNTH_RECENT_WINDOW
from ...dytag_data import SyntheticConfig, generate_synthetic, save_dataset, synthetic_manifest
from ..base import PrismCommand


class Command(PrismCommand):
    help = 'Writes a synthetic community-structured interaction dataset'

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True, help='Dataset directory to write')
        parser.add_argument('--nodes', type=int, default=SYNTH_NODES)
        parser.add_argument('--events', type=int, default=SYNTH_EVENTS)
        parser.add_argument('--communities', type=int, default=SYNTH_COMMUNITIES)
        parser.add_argument('--recency-bias', type=float, default=SYNTH_RECENCY_BIAS)
        parser.add_argument('--recent-window', type=int, default=SYNTH_RECENT_WINDOW)
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        cfg = SyntheticConfig(num_nodes=options['nodes'], num_events=options['events'],
                              num_communities=options['communities'], recency_bias=options['recency_bias'],
                              seed=options['seed'], recent_window=options['recent_window'])
        manifest = self.execute_guarded(self.generate, cfg, options['out'])
        self.stdout.write('wrote %d events over %d nodes to %s' % (manifest['num_events'], manifest['num_nodes'],
                                                                   options['out']))

    def generate(self, cfg, out_dir):
        return save_dataset(generate_synthetic(cfg), out_dir, synthetic_manifest(cfg))
