'''Factory pattern for CLI subcommands: one action class per subcommand.'''

import json
import logging

try:
    from app.config import Config
    from app.exceptions import InvalidConfigException
    from app.experiments import run_experiment, validate_experiment
    from app.kernels import bv_moment, c0, get_kernel, kernel_moment, tail_decay_check, total_variation
    from app.manifolds import get_test_function, limit_operator
    from app.neighbors import NeighborIndex
    from app.operators import graph_laplacian, graph_laplacian_geodesic, knn_laplacian
    from app.sampling import eval_grid, read_cloud_csv, sample, write_cloud_csv
    from app.validation import validation
except ImportError:
    from config import Config
    from exceptions import InvalidConfigException
    from experiments import run_experiment, validate_experiment
    from kernels import bv_moment, c0, get_kernel, kernel_moment, tail_decay_check, total_variation
    from manifolds import get_test_function, limit_operator
    from neighbors import NeighborIndex
    from operators import graph_laplacian, graph_laplacian_geodesic, knn_laplacian
    from sampling import eval_grid, read_cloud_csv, sample, write_cloud_csv
    from validation import validation

logger = logging.getLogger(__name__)


def _json_arg(text, field):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidConfigException(f"Malformed JSON: {e.msg}", field, e.lineno, e.colno)


def _add_manifold_arguments(parser):
    parser.add_argument("--manifold", default="s2", help="circle, s2, s3 or torus")
    parser.add_argument("--radii", type=float, nargs="+", help="sphere radius or torus factor radii")
    parser.add_argument("--density", default="uniform", help="uniform or tilted")
    parser.add_argument("--beta", type=float, help="tilt of the tilted density")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)


def _add_operator_arguments(parser):
    _add_manifold_arguments(parser)
    parser.add_argument("--n", type=int, default=1000, help="sample size when no --input cloud is given")
    parser.add_argument("--input", help="cloud CSV written by the sample subcommand")
    parser.add_argument("--function", default="coordinate", help="constant, coordinate, product or zonal")
    parser.add_argument("--index", type=int, default=1, help="coordinate index (1-based)")
    parser.add_argument("--degree", type=int, default=1, help="zonal harmonic degree")
    parser.add_argument("--grid", type=int, default=200, help="evaluation grid size")


def _config_from_args(args):
    '''Builds the RunConfig equivalent of the subcommand flags.'''
    manifold = {"name": args.manifold}
    if args.radii:
        manifold["radii"] = list(args.radii)
    density = {"name": args.density}
    if args.beta is not None:
        density["beta"] = args.beta
    values = {"manifold": manifold, "density": density, "seeds": [args.seed], "workers": args.workers}
    if getattr(args, "function", None):
        function = {"name": args.function}
        if args.function == "coordinate":
            function["index"] = args.index
        if args.function == "zonal":
            function["degree"] = args.degree
        values["functions"] = [function]
        values["grid_size"] = args.grid
    for key in ("n", "h", "k"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    if getattr(args, "kernel", None):
        kernel = args.kernel
        values["kernel"] = _json_arg(kernel, "kernel") if kernel.lstrip().startswith("{") else kernel
    return Config.from_dict(values)


class CommandAction:
    '''Base class for subcommand actions.'''

    def add_arguments(self, parser):
        '''Declares the subcommand's flags on its argparse subparser.'''
        pass

    def execute(self, cli, args):
        '''Execute the action.

        Args:
            cli: the BVLaplaceCLI front-end (display, output directory)
            args: parsed argparse namespace

        Returns:
            int: exit code
        '''
        raise NotImplementedError("Subclasses must implement execute()")

    def get_description(self):
        '''Returns a description of what this action does.

        Returns:
            str: Description of the action
        '''
        return "Perform an action"


class KernelInfoAction(CommandAction):
    '''Prints c0, moments, the variation and tail sequences of a kernel.'''

    def add_arguments(self, parser):
        parser.add_argument("--kernel", default="indicator", help="catalog name or JSON {\"pieces\": [[b, v], ...]}")
        parser.add_argument("--dim", type=int, default=2, help="intrinsic dimension d")

    def execute(self, cli, args):
        spec = _json_arg(args.kernel, "kernel") if args.kernel.lstrip().startswith("{") else args.kernel
        kernel = get_kernel(spec)
        d = args.dim
        info = {
            "kernel": kernel.name,
            "d": d,
            "support_radius": kernel.support_radius if kernel.support_radius is not None else "unbounded",
            "c0": c0(kernel, d),
            "moment_d_plus_1": kernel_moment(kernel, d + 1),
            "bv_moment_d_plus_3": bv_moment(kernel, d + 3),
            "total_variation": total_variation(kernel, 10.0 * kernel.get_scale()),
            "jumps": kernel.get_jumps()
        }
        if args.dry_run:
            cli.display.print_values({"kernel": kernel.name, "d": d, "dry_run": "ok"})
            return 0
        tail = tail_decay_check(kernel, d, [2.0, 4.0, 8.0])
        cli.display.print_kernel_info(info)
        path = cli.output_path(None, "kernel_info.json")
        with open(path, "w") as handle:
            json.dump(dict(info, tail=tail), handle, indent=2, sort_keys=True)
            handle.write("\n")
        return 0

    def get_description(self):
        return "Show c0, moments and total variation of a kernel"


class SampleAction(CommandAction):
    '''Draws a cloud and writes it as CSV.'''

    def add_arguments(self, parser):
        _add_manifold_arguments(parser)
        parser.add_argument("--n", type=int, default=1000)

    def execute(self, cli, args):
        config = _config_from_args(args)
        manifold, density = config.get_manifold(), config.get_density()
        if args.dry_run:
            cli.display.print_values({"manifold": manifold.get_id(), "density": density.get_id(),
                                      "n": config.get("n"), "dry_run": "ok"})
            return 0
        cloud = sample(manifold, density, config.get("n"), args.seed, config.get("workers"))
        path = cli.output_path(config, f"cloud_{manifold.name}_n{cloud.n}_seed{cloud.seed}.csv")
        write_cloud_csv(cloud, path)
        cli.display.print_report("SAMPLE", {"manifold": manifold.get_id(), "density": density.get_id(),
                                            "n": cloud.n, "seed": cloud.seed,
                                            "acceptance_rate": cloud.get_acceptance_rate(),
                                            "expected_acceptance": density.get_expected_acceptance(),
                                            "files": [path]})
        return 0

    def get_description(self):
        return "Sample a point cloud from p dmu and write it as CSV"


class OperatorAction(CommandAction):
    '''Shared flow of the laplacian and knn-laplacian subcommands.'''
    NAME = "operator"

    def load_cloud(self, config, args):
        if args.input:
            cloud = read_cloud_csv(args.input)
            if cloud.manifold.get_id() != config.get_manifold().get_id():
                logger.info("Using the manifold %s recorded in %s", cloud.manifold.get_id(), args.input)
            return cloud
        return sample(config.get_manifold(), config.get_density(), config.get("n"), args.seed,
                      config.get("workers"))

    def compute(self, cloud, index, config, f, xs, args):
        raise NotImplementedError("Subclasses must implement compute()")

    def check(self, config, args):
        pass

    def execute(self, cli, args):
        config = _config_from_args(args)
        self.check(config, args)
        if args.dry_run:
            cli.display.print_values({"manifold": config.get_manifold().get_id(), "dry_run": "ok"})
            return 0
        cloud = self.load_cloud(config, args)
        manifold = cloud.manifold
        f = get_test_function(manifold, config.get("functions")[0])
        index = NeighborIndex(cloud)
        xs = eval_grid(manifold, config.get("grid_size"))
        field, kernel = self.compute(cloud, index, config, f, xs, args)
        limit = limit_operator(manifold, cloud.density, f, kernel, xs)
        path = cli.output_path(config, f"{self.NAME}.csv")
        field.write_csv(path)
        cli.display.print_report(self.NAME.upper(), {"manifold": manifold.get_id(), "n": cloud.n,
                                                     "h_or_k": field.provenance["h_or_k"],
                                                     "f": f.get_id(), "eval_points": len(field),
                                                     "sup_error_vs_limit": field.sup_error(limit),
                                                     "files": [path]})
        return 0


class LaplacianAction(OperatorAction):
    '''Evaluates the graph Laplacian A_{h,n} f on an evaluation grid.'''
    NAME = "laplacian"

    def add_arguments(self, parser):
        _add_operator_arguments(parser)
        parser.add_argument("--kernel", default="indicator")
        parser.add_argument("--h", type=float, required=True, help="bandwidth")
        parser.add_argument("--distance", choices=["chord", "geodesic"], default="chord")

    def check(self, config, args):
        n, d = config.get("n"), config.get_manifold().d
        if 0 < args.h < 1 and validation.window_quantity(n, args.h, d) > 1:
            logger.warning("h = %g is outside the bandwidth window at n = %d", args.h, n)

    def compute(self, cloud, index, config, f, xs, args):
        kernel = config.get_kernel()
        if args.distance == "geodesic":
            return graph_laplacian_geodesic(cloud, index, kernel, args.h, f, xs, config.get("workers")), kernel
        return graph_laplacian(cloud, index, kernel, args.h, f, xs, config.get("workers")), kernel

    def get_description(self):
        return "Evaluate the graph Laplacian of a test function on a grid"


class KnnLaplacianAction(OperatorAction):
    '''Evaluates the kNN Laplacian on an evaluation grid.'''
    NAME = "knn-laplacian"

    def add_arguments(self, parser):
        _add_operator_arguments(parser)
        parser.add_argument("--k", type=int, required=True, help="number of neighbors")

    def check(self, config, args):
        if args.k < 1 or (not args.input and args.k > config.get("n")):
            raise InvalidConfigException(f"k must lie in 1..n, got {args.k}.", "k")

    def compute(self, cloud, index, config, f, xs, args):
        return knn_laplacian(cloud, index, args.k, f, xs, config.get("workers")), get_kernel("indicator")

    def get_description(self):
        return "Evaluate the kNN Laplacian of a test function on a grid"


class ExperimentAction(CommandAction):
    '''Runs a config-driven experiment.'''
    EXPERIMENT = None

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="JSON run configuration")

    def execute(self, cli, args):
        config = Config.from_file(args.config)
        values = config.get_resolved()
        if values["experiment"] is None:
            values["experiment"] = self.EXPERIMENT
        elif values["experiment"] != self.EXPERIMENT:
            raise InvalidConfigException(
                f"Config names experiment '{values['experiment']}', not '{self.EXPERIMENT}'.", "experiment")
        if args.workers is not None:
            values["workers"] = args.workers
        config = Config.from_dict(values)
        if args.dry_run:
            plan = validate_experiment(config)
            cli.display.print_report(f"{self.EXPERIMENT.upper()} (dry run)", dict(plan, valid="yes"))
            return 0
        output_dir = cli.output_dir(config)
        report, files = run_experiment(config, output_dir)
        cli.display.print_report(self.EXPERIMENT.upper(), dict(report.get_summary(), files=files))
        return 0

    def get_description(self):
        return f"Run the {self.EXPERIMENT} experiment from a JSON config"


class RateAction(ExperimentAction):
    EXPERIMENT = "rate"


class KnnRateAction(ExperimentAction):
    EXPERIMENT = "knn-rate"


class ConcentrationAction(ExperimentAction):
    EXPERIMENT = "concentration"


class DeviationAction(ExperimentAction):
    EXPERIMENT = "deviation"


class MomentsAction(ExperimentAction):
    EXPERIMENT = "moments"


class GeometryAction(ExperimentAction):
    EXPERIMENT = "geometry"


class OperatorGapAction(ExperimentAction):
    EXPERIMENT = "operator-gap"


class CommandActionFactory:
    '''Factory for creating subcommand action objects.'''

    def __init__(self):
        '''Initialize the factory with action mappings.'''
        self._actions = {}

    def register_action(self, action_name, action_class):
        '''Register an action with the factory.

        Args:
            action_name: subcommand name
            action_class: Class that implements CommandAction
        '''
        self._actions[action_name] = action_class

    def create_action(self, action_name):
        '''Create an action instance.

        Raises:
            InvalidConfigException: If action_name not registered
        '''
        action_class = self._actions.get(action_name)
        if action_class is None:
            raise InvalidConfigException(f"Unknown subcommand: {action_name}")
        return action_class()

    def get_registered_actions(self):
        '''Returns list of registered action names.'''
        return list(self._actions.keys())
