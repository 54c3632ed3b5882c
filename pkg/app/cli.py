import argparse
import logging
import os
import sys

try:
    from app import __version__
    from app.actions import (
        CommandActionFactory, KernelInfoAction, SampleAction, LaplacianAction, KnnLaplacianAction,
        RateAction, KnnRateAction, ConcentrationAction, DeviationAction, MomentsAction,
        GeometryAction, OperatorGapAction
    )
    from app.config import OUTPUT_DIR_ENV, Config
    from app.display import Display
    from app.exceptions import BVLaplaceException, NumericalFailureException
    from app.rules import Rules
except ImportError:
    from __init__ import __version__
    from actions import (
        CommandActionFactory, KernelInfoAction, SampleAction, LaplacianAction, KnnLaplacianAction,
        RateAction, KnnRateAction, ConcentrationAction, DeviationAction, MomentsAction,
        GeometryAction, OperatorGapAction
    )
    from config import OUTPUT_DIR_ENV, Config
    from display import Display
    from exceptions import BVLaplaceException, NumericalFailureException
    from rules import Rules

logger = logging.getLogger(__name__)


class UsageError(BVLaplaceException):
    pass


class ArgumentParser(argparse.ArgumentParser):
    '''Argument parser that reports usage errors as exceptions instead of exiting with status 2.'''

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class BVLaplaceCLI:
    '''Command-line front-end mapping subcommands to library operations.'''

    # Exit codes
    EXIT_OK = 0
    EXIT_CONFIG_ERROR = 1
    EXIT_NUMERICAL_FAILURE = 2

    # Subcommands
    COMMAND_KERNEL_INFO = "kernel-info"
    COMMAND_SAMPLE = "sample"
    COMMAND_LAPLACIAN = "laplacian"
    COMMAND_KNN_LAPLACIAN = "knn-laplacian"
    COMMAND_RATE = "rate"
    COMMAND_KNN_RATE = "knn-rate"
    COMMAND_CONCENTRATION = "concentration"
    COMMAND_DEVIATION = "deviation"
    COMMAND_MOMENTS = "moments"
    COMMAND_GEOMETRY = "geometry"
    COMMAND_OPERATOR_GAP = "operator-gap"

    def __init__(self):
        self.rules = Rules()
        self.display = Display()
        self.args = None
        self.setup_action_factory()

    def setup_action_factory(self):
        '''Sets up the action factory with one action per subcommand.'''
        self.action_factory = CommandActionFactory()

        # Register all actions
        self.action_factory.register_action(self.COMMAND_KERNEL_INFO, KernelInfoAction)
        self.action_factory.register_action(self.COMMAND_SAMPLE, SampleAction)
        self.action_factory.register_action(self.COMMAND_LAPLACIAN, LaplacianAction)
        self.action_factory.register_action(self.COMMAND_KNN_LAPLACIAN, KnnLaplacianAction)
        self.action_factory.register_action(self.COMMAND_RATE, RateAction)
        self.action_factory.register_action(self.COMMAND_KNN_RATE, KnnRateAction)
        self.action_factory.register_action(self.COMMAND_CONCENTRATION, ConcentrationAction)
        self.action_factory.register_action(self.COMMAND_DEVIATION, DeviationAction)
        self.action_factory.register_action(self.COMMAND_MOMENTS, MomentsAction)
        self.action_factory.register_action(self.COMMAND_GEOMETRY, GeometryAction)
        self.action_factory.register_action(self.COMMAND_OPERATOR_GAP, OperatorGapAction)

    def build_parser(self):
        '''Builds the argparse tree: common flags on every subcommand plus the action's own.'''
        common = ArgumentParser(add_help=False)
        common.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
        common.add_argument("-q", "--quiet", action="store_true", help="only log errors")
        common.add_argument("--output-dir", help="output directory (default: $BVLAPLACE_OUTPUT_DIR or ./output)")
        common.add_argument("--dry-run", action="store_true", help="validate the configuration without computing")
        parser = ArgumentParser(prog="bvlaplace", description="Graph and kNN Laplacians on catalog manifolds.")
        parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
        subparsers = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=ArgumentParser)
        for name in self.rules.get_subcommands():
            action = self.action_factory.create_action(name)
            subparser = subparsers.add_parser(name, parents=[common], help=action.get_description())
            action.add_arguments(subparser)
            if not any(option.dest == "workers" for option in subparser._actions):
                subparser.add_argument("--workers", type=int, help="parallelism degree")
        return parser

    def output_dir(self, config=None):
        '''Returns (and creates) the output directory of this run.'''
        override = self.args.output_dir if self.args is not None else None
        if config is None:
            path = override or os.environ.get(OUTPUT_DIR_ENV) or "output"
        else:
            path = config.get_output_dir(override)
        os.makedirs(path, exist_ok=True)
        return path

    def output_path(self, config, filename):
        '''Returns a path inside the output directory; filename is reduced to its base name.'''
        return os.path.join(self.output_dir(config), os.path.basename(filename))

    def print_available_actions(self):
        '''Prints the subcommands with the descriptions from their action classes.'''
        print("Available subcommands:")
        for action_name in self.action_factory.get_registered_actions():
            action = self.action_factory.create_action(action_name)
            print(f"- {action_name}: {action.get_description()}")

    def run(self, argv=None):
        '''Parses argv, runs the subcommand and maps errors to exit codes.'''
        try:
            self.args = self.build_parser().parse_args(argv)
        except UsageError as e:
            self.display.print_error(str(e))
            return self.EXIT_CONFIG_ERROR
        if self.args.command is None:
            self.print_available_actions()
            return self.EXIT_CONFIG_ERROR
        Config.setup_logging(-1 if self.args.quiet else self.args.verbose)
        try:
            action = self.action_factory.create_action(self.args.command)
            return action.execute(self, self.args)
        except NumericalFailureException as e:
            logger.debug("Diagnostics: %s", e.diagnostics)
            self.display.print_error(str(e))
            return self.EXIT_NUMERICAL_FAILURE
        except BVLaplaceException as e:
            self.display.print_error(str(e))
            return self.EXIT_CONFIG_ERROR
        except OSError as e:
            self.display.print_error(f"{e.filename}: {e.strerror}")
            return self.EXIT_CONFIG_ERROR


def run(argv=None):
    '''Runs the command line and returns the exit code.'''
    return BVLaplaceCLI().run(argv)


def main():
    '''Entry point: runs on sys.argv and exits with the command's exit code.'''
    sys.exit(run())
