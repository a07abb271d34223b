"""
Shared plumbing for the PRISM management commands

Every command runs its body through ``PrismCommand.execute_guarded`` which
turns library errors into ``CommandError`` with the documented exit code.
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from ..app_settings import APP_NAME, EXIT_CHECKPOINT_MISMATCH, EXIT_IO, EXIT_NON_FINITE, EXIT_USAGE
from ..config import DEFAULT_CONFIG_PATH, load_run_config
from ..exceptions import CheckpointMismatchError, ConfigurationError, CoverageError, DatasetFormatError, \
    EmbeddingFormatError, NonFiniteError, ReferentialIntegrityError, error_text

logger = logging.getLogger('%s.commands' % APP_NAME)

''' Exception class -> process exit code, first match wins '''
EXIT_CODES = (
    (CheckpointMismatchError, EXIT_CHECKPOINT_MISMATCH),
    (NonFiniteError, EXIT_NON_FINITE),
    (ConfigurationError, EXIT_USAGE),
    (DatasetFormatError, EXIT_IO),
    (ReferentialIntegrityError, EXIT_IO),
    (EmbeddingFormatError, EXIT_IO),
    (CoverageError, EXIT_IO),
    (OSError, EXIT_IO),
)


def exit_code_for(exc):
    for exc_class, code in EXIT_CODES:
        if isinstance(exc, exc_class):
            return code
    return None


class PrismCommand(BaseCommand):

    def add_config_arguments(self, parser):
        parser.add_argument('--config', default=DEFAULT_CONFIG_PATH, help='Run config JSON')
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                            help='Override one config key, e.g. --set model.K=3 (repeatable)')

    def load_config(self, options):
        return load_run_config(options['config'], options.get('overrides'))

    def progress_enabled(self, options):
        return int(options.get('verbosity', 1)) >= 2

    def execute_guarded(self, body, *args):
        try:
            return body(*args)
        except CommandError:
            raise
        except Exception as exc:
            code = exit_code_for(exc)
            if code is None:
                raise
            logger.error('%s failed: %s', self.__module__.rsplit('.', 1)[-1], error_text(exc))
            raise CommandError(error_text(exc), returncode=code)
