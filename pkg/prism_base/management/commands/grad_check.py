from django.core.management.base import CommandError

from ...app_settings import EXIT_GRAD_CHECK_FAILED, GRAD_CHECK_TOLERANCE
from ...grad_suite import run_grad_check
from ..base import PrismCommand


class Command(PrismCommand):
    help = 'Compares reverse-mode gradients of the full objective with central differences on a 4-event batch'

    # Tests swap in a function (block name, grad) -> grad to sabotage the analytic side
    analytic_hook = None

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--samples', type=int, default=None,
                            help='Check at most this many coordinates per block (default: all)')

    def handle(self, *args, **options):
        config = self.execute_guarded(self.load_config, options)
        report = self.execute_guarded(run_grad_check, config, options['seed'], self.analytic_hook,
                                      GRAD_CHECK_TOLERANCE, options['samples'])
        for block in report.blocks:
            status = 'ok' if block.max_error < report.tolerance else 'FAIL'
            self.stdout.write('%-36s %.3e %s' % (block.name, block.max_error, status))
        if not report.passed:
            names = ', '.join(block.name for block in report.failures)
            raise CommandError('gradient check failed in %s' % names, returncode=EXIT_GRAD_CHECK_FAILED)
        self.stdout.write('gradient check passed (worst %s %.3e)' % (report.worst.name, report.worst.max_error))
