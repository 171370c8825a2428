import logging
import sys
from typing import List, Optional

import click
from pydantic import ValidationError
from rich.logging import RichHandler

from harness import CheckpointError, DatasetError
from harness.cli import COMMANDS
from tensor import GradientError, M3etError, NonFiniteError
from util import env_var

logger = logging.getLogger('m3et')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


@click.group(help='Multimodal masked autoencoder with Mamba-enhanced encoder: training, audits and checks.')
@click.option('--log-level', default=lambda: env_var('M3ET_LOG_LEVEL', 'INFO'), show_default='INFO or $M3ET_LOG_LEVEL',
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False))
def cli(log_level: str):
    logging.basicConfig(level=log_level.upper(), format='%(message)s', datefmt='[%X]',
                        handlers=[RichHandler(show_path=False)], force=True)


for command in COMMANDS:
    cli.add_command(command.to_click())


def main(argv: Optional[List[str]] = None) -> int:
    """Runs one subcommand and maps failures to exit codes: 1 usage or configuration, 2 numerical, 3 I/O."""
    try:
        result = cli.main(args=argv, prog_name='m3et', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except (NonFiniteError, GradientError) as e:
        logger.error('numerical failure: %s', e)
        return EXIT_NUMERICAL
    except (CheckpointError, DatasetError) as e:
        logger.error('%s', e)
        return EXIT_IO
    except ValidationError as e:
        logger.error('invalid configuration: %s', e)
        return EXIT_USAGE
    except M3etError as e:
        logger.error('%s', e)
        return EXIT_USAGE
    except OSError as e:
        logger.error('I/O failure: %s', e)
        return EXIT_IO
    return result if isinstance(result, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
