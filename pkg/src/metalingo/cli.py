# The MIT License (MIT)

# Copyright (c) 2024 metalingo contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in
# all copies or substantial portions of the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN
# THE SOFTWARE.
"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numeric failure.
"""
import argparse
import json
import logging
import sys

from . import experiment
from .checkpoint import CheckpointError
from .corpus import DataError
from .experiment_settings import ExperimentConfig, load_config
from .metadata import VERSION
from .numerics import NumericError
from .settings import ConfigError

logger = logging.getLogger("metalingo")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def cmd_gen_data(args):
    """Writes a synthetic task family as JSONL files"""
    experiment.generate_files(experiment.load_spec(args.spec), args.out)


def cmd_train(args):
    """Meta-trains a model"""
    experiment.run_train(load_config(args.config), progress=args.progress)


def cmd_finetune(args):
    """Fine-tunes a checkpoint on the target"""
    experiment.run_finetune(
        load_config(args.config), args.checkpoint, args.mode, progress=args.progress
    )


def cmd_eval(args):
    """Computes the experiment grid"""
    experiment.run_eval(load_config(args.config), args.checkpoint, progress=args.progress)


def cmd_analyze(args):
    """Writes representation analyses"""
    experiment.run_analyze(
        load_config(args.config), args.checkpoint, args.after, progress=args.progress
    )


def cmd_dreca(args):
    """Writes the task augmentation manifest"""
    experiment.run_dreca(load_config(args.config), args.checkpoint)


def cmd_schema(_args):
    """Prints the configuration JSON-Schema"""
    sys.stdout.write(json.dumps(ExperimentConfig.schema_document(), sort_keys=True, indent=2))
    sys.stdout.write("\n")


def build_parser():
    """Argument parser with one subcommand per operation"""
    parser = argparse.ArgumentParser(
        prog="metalingo", description="Cross-lingual meta-learning experiments"
    )
    parser.add_argument("--version", action="version", version="%(prog)s " + VERSION)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    parser.add_argument("--progress", action="store_true", help="show progress bars")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    gen = commands.add_parser("gen-data", help="generate synthetic JSONL datasets")
    gen.add_argument("spec", help="synthetic spec JSON file")
    gen.add_argument("out", help="output directory")
    gen.set_defaults(handler=cmd_gen_data)

    train = commands.add_parser("train", help="meta-train a model")
    train.add_argument("config", help="experiment config JSON file")
    train.set_defaults(handler=cmd_train)

    tune = commands.add_parser("finetune", help="fine-tune a checkpoint on the target")
    tune.add_argument("config")
    tune.add_argument("checkpoint")
    tune.add_argument(
        "--mode", choices=["non_episodic", "episodic"], default="non_episodic"
    )
    tune.set_defaults(handler=cmd_finetune)

    evaluate = commands.add_parser("eval", help="compute the experiment grid")
    evaluate.add_argument("config")
    evaluate.add_argument("checkpoint")
    evaluate.set_defaults(handler=cmd_eval)

    analyze = commands.add_parser("analyze", help="Hausdorff, CCA and PCA outputs")
    analyze.add_argument("config")
    analyze.add_argument("checkpoint")
    analyze.add_argument("--after", help="fine-tuned checkpoint for the CCA profile")
    analyze.set_defaults(handler=cmd_analyze)

    decompose = commands.add_parser("dreca", help="write the DReCa task manifest")
    decompose.add_argument("config")
    decompose.add_argument("checkpoint", nargs="?", help="encoder used for embedding")
    decompose.set_defaults(handler=cmd_dreca)

    schema = commands.add_parser("schema", help="print the configuration JSON-Schema")
    schema.set_defaults(handler=cmd_schema)
    return parser


def configure_logging(verbose=False, quiet=False):
    """Root logging setup for a CLI process"""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def main(argv=None):
    """Runs one subcommand and returns its exit code"""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        args.handler(args)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as e:
        logger.error("data error: %s", e)
        return EXIT_DATA
    except NumericError as e:
        logger.error("numeric failure: %s", e)
        return EXIT_NUMERIC
    except ValueError as e:
        # argument combinations the schema cannot rule out
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    return EXIT_OK
