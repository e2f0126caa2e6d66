"""
Shared plumbing for the harness management commands.
"""

import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from apps.codec import services as codec
from diffprune.errors import DiffPruneError

logger = logging.getLogger(__name__)


class HarnessCommand(BaseCommand):
    """Turns library errors and missing files into one-line CommandErrors.

    Subclasses implement `run(**options)`.
    """

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except DiffPruneError as exc:
            logger.warning("%s failed: %s", self.__module__.rsplit(".", 1)[-1], exc)
            raise CommandError(f"{type(exc).__name__}: {exc}") from exc
        except FileNotFoundError as exc:
            raise CommandError(f"no such file: {exc.filename}") from exc
        except OSError as exc:
            raise CommandError(str(exc)) from exc

    def run(self, **options):
        raise NotImplementedError

    def load_checkpoint(self, path):
        return codec.load_checkpoint(path)

    def load_diff(self, path):
        return codec.load_diff(path)

    def done(self, message, path=None):
        if path is not None:
            message = f"{message} -> {Path(path)}"
        self.stdout.write(self.style.SUCCESS(message))


def add_seed(parser):
    parser.add_argument("--seed", type=int, default=None, help="Seed for every random draw (default: from config)")


def add_config(parser, required=False):
    parser.add_argument("--config", default=None, required=required, help="key=value run config file")
