from ...dytag_data import convert_dtgb
from ..base import PrismCommand


class Command(PrismCommand):
    help = 'Converts a DTGB dataset directory (edge_list/entity_text/relation_text) to the events/texts layout'

    def add_arguments(self, parser):
        parser.add_argument('--src', required=True, help='DTGB dataset directory')
        parser.add_argument('--out', required=True, help='Dataset directory to write')

    def handle(self, *args, **options):
        manifest = self.execute_guarded(convert_dtgb, options['src'], options['out'])
        self.stdout.write('converted %d events, %d nodes, %d edge texts' % (
            manifest['num_events'], manifest['num_nodes'], manifest['num_edge_texts']))
