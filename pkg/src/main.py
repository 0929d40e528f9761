import os
import sys
# DON'T CHANGE THIS !!!
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO

from dotenv import load_dotenv

from src.routes import data_commands, model_commands
from src.routes.context import CommandContext
from src.utils.config import load_config, write_resolved_config
from src.utils.errors import ConfigError, HydroTrackError, exit_code_for
from src.utils.monitoring import RunTracker

logger = logging.getLogger(__name__)

TOP_LEVEL_OVERRIDES = ('seed', 'out')


class CliParser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError instead of exiting"""

    def error(self, message):
        raise ConfigError(f'{self.prog}: {message}')


def configure_logging() -> None:
    level = os.getenv('HYDROTRACK_LOG', 'INFO').upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
    )


def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument('--config', help='JSON run configuration')
    common.add_argument('--seed', type=int, dest='seed')
    common.add_argument('--out', dest='out', help='Output directory')

    parser = CliParser(prog='hydrotrack', description='Spectroscopic hydration tracking pipeline')
    subparsers = parser.add_subparsers(dest='command', required=True)
    data_commands.register(subparsers, common)
    model_commands.register(subparsers, common)
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values that map onto RunConfig fields (dotted dests)"""
    return {key: value for key, value in vars(args).items()
            if '.' in key or key in TOP_LEVEL_OVERRIDES}


def main(argv: Optional[List[str]] = None, stdin: Optional[TextIO] = None,
         stdout: Optional[TextIO] = None) -> int:
    load_dotenv()
    configure_logging()
    tracker = RunTracker()
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args.config, overrides_from(args))
        out = Path(config.out)
        write_resolved_config(config, out)
        context = CommandContext(config=config, out=out, stdin=stdin or sys.stdin,
                                 stdout=stdout or sys.stdout, tracker=tracker)
        with tracker.stage(args.command):
            args.handler(args, context)
        return 0
    except HydroTrackError as e:
        logger.error(f"❌ {type(e).__name__}: {e.message}")
        if e.details:
            logger.error(f"❌ Details: {e.details}")
        return exit_code_for(e)
    except OSError as e:
        logger.error(f"❌ File error: {e}")
        return exit_code_for(e)
    except Exception as e:
        logger.exception(f"❌ Internal error: {e}")
        return exit_code_for(e)
    finally:
        if tracker.stages:
            logger.info(f"📊 Run summary: {tracker.get_stats()}")


if __name__ == '__main__':
    sys.exit(main())
