import argparse
import sys
from typing import NoReturn


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def common_parser() -> ArgumentParser:
    """Flags shared by every subcommand; attach with ``parents=[...]``."""
    parser = ArgumentParser(add_help=False)
    parser.add_argument("--config", default=None, help="YAML or JSON config file")
    parser.add_argument("--log-file", dest="log_file", default=None, help="JSON log destination")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("-o", "--out", default=None, help="output file, stdout when omitted")
    return parser
