import copy
import json
import logging
import math
import os
import sys

from colorama import init, Fore, Style

try:
    from app.exceptions import BVLaplaceException, InvalidConfigException
    from app.kernels import get_kernel
    from app.manifolds import get_density, get_manifold, get_test_function
    from app.rules import Rules
except ImportError:
    from exceptions import BVLaplaceException, InvalidConfigException
    from kernels import get_kernel
    from manifolds import get_density, get_manifold, get_test_function
    from rules import Rules

OUTPUT_DIR_ENV = "BVLAPLACE_OUTPUT_DIR"


class ColorFormatter(logging.Formatter):
    '''Log formatter that colours the level name.'''

    def __init__(self, colors):
        super().__init__("%(levelname)s %(name)s: %(message)s")
        self.colors = colors

    def format(self, record):
        text = super().format(record)
        color = self.colors.get(record.levelno)
        if color is None:
            return text
        return text.replace(record.levelname, f"{color}{record.levelname}{Style.RESET_ALL}", 1)


class Config:
    '''Resolved run configuration: defaults, user values and the catalog objects they name.'''

    DEFAULTS = {
        "experiment": None,
        "manifold": {"name": "s2", "radii": [1.0]},
        "density": {"name": "uniform"},
        "kernel": "indicator",
        "functions": [{"name": "coordinate", "index": 1}],
        "n": 1000,
        "n_grid": [1024, 2048, 4096, 8192],
        "h": None,
        "h_rule": {"constant": 1.0, "exponent": None},
        "k": None,
        "k_rule": {"constant": 1.0, "exponent": None},
        "h_grid": [0.4, 0.2, 0.1],
        "deltas": None,
        "deviation_scale": None,
        "kappa": 2.0,
        "seeds": [0],
        "repeats": None,
        "grid_size": 200,
        "include_sample_points": True,
        "output_dir": None,
        "workers": 1,
        "plot_script": False,
        "draws": 1000000,
        "moment_points": 20
    }

    NESTED_FIELDS = {
        "manifold": {"name", "radii"},
        "density": {"name", "beta"},
        "h_rule": {"constant", "exponent"},
        "k_rule": {"constant", "exponent"}
    }

    FUNCTION_FIELDS = {"name", "index", "scale", "first", "second", "degree", "value"}
    KERNEL_FIELDS = {"name", "pieces"}

    def __init__(self, values=None):
        # Initialize colorama for cross-platform colored output
        init(autoreset=True)
        self.rules = Rules()
        self.values = self.resolve(values or {})
        self._objects = {}

    @classmethod
    def from_file(cls, path):
        '''Loads a JSON configuration file.

        Raises:
            InvalidConfigException: missing file, JSON syntax error (with line and column) or bad field
        '''
        try:
            with open(path) as handle:
                text = handle.read()
        except OSError as e:
            raise InvalidConfigException(f"Cannot read config file {path}: {e.strerror}")
        try:
            values = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidConfigException(f"Malformed JSON in {path}: {e.msg}", line=e.lineno, column=e.colno)
        if not isinstance(values, dict):
            raise InvalidConfigException(f"Config {path} must hold a JSON object.")
        return cls(values)

    @classmethod
    def from_dict(cls, values):
        return cls(copy.deepcopy(values))

    def resolve(self, values):
        '''Validates field names and types, then fills in defaults.'''
        unknown = sorted(set(values) - set(self.DEFAULTS))
        if unknown:
            raise InvalidConfigException(f"Unknown configuration field '{unknown[0]}'.", unknown[0])
        resolved = copy.deepcopy(self.DEFAULTS)
        for key, value in values.items():
            if key in self.NESTED_FIELDS and value is not None:
                if not isinstance(value, dict):
                    raise InvalidConfigException(f"Expected an object, got {value!r}.", key)
                extra = sorted(set(value) - self.NESTED_FIELDS[key])
                if extra:
                    raise InvalidConfigException(f"Unknown configuration field '{key}.{extra[0]}'.", f"{key}.{extra[0]}")
                merged = dict(self.DEFAULTS[key]) if key in ("h_rule", "k_rule") else {}
                merged.update(value)
                value = merged
            resolved[key] = value
        self._check_types(resolved)
        if resolved["repeats"] is not None and "seeds" not in values:
            resolved["seeds"] = list(range(resolved["repeats"]))
        return resolved

    def _check_types(self, values):
        experiment = values["experiment"]
        if experiment is not None and experiment not in self.rules.get_experiment_kinds():
            raise InvalidConfigException(
                f"Unknown experiment '{experiment}'. Available: {', '.join(self.rules.get_experiment_kinds())}",
                "experiment")
        kernel = values["kernel"]
        if isinstance(kernel, dict):
            extra = sorted(set(kernel) - self.KERNEL_FIELDS)
            if extra:
                raise InvalidConfigException(f"Unknown configuration field 'kernel.{extra[0]}'.", f"kernel.{extra[0]}")
        elif not isinstance(kernel, str):
            raise InvalidConfigException(f"Expected a kernel name or object, got {kernel!r}.", "kernel")
        functions = values["functions"]
        if not isinstance(functions, list) or not functions:
            raise InvalidConfigException("Expected a nonempty list of test functions.", "functions")
        for i, function in enumerate(functions):
            if isinstance(function, dict):
                extra = sorted(set(function) - self.FUNCTION_FIELDS)
                if extra:
                    raise InvalidConfigException(f"Unknown configuration field '{extra[0]}'.", f"functions[{i}].{extra[0]}")
            elif not isinstance(function, str):
                raise InvalidConfigException(f"Expected a function name or object, got {function!r}.", f"functions[{i}]")
        for key in ("n", "grid_size", "workers", "draws", "moment_points"):
            self._check_positive_int(values[key], key)
        if values["repeats"] is not None and (isinstance(values["repeats"], bool)
                                              or not isinstance(values["repeats"], int) or values["repeats"] < 1):
            raise InvalidConfigException(f"Expected a positive number of repeats, got {values['repeats']!r}.", "repeats")
        for key in ("n_grid", "seeds", "h_grid"):
            if not isinstance(values[key], list):
                raise InvalidConfigException(f"Expected a list, got {values[key]!r}.", key)
        for i, n in enumerate(values["n_grid"]):
            self._check_positive_int(n, f"n_grid[{i}]")
        for i, seed in enumerate(values["seeds"]):
            if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
                raise InvalidConfigException(f"Seeds must be unsigned 64-bit integers, got {seed!r}.", f"seeds[{i}]")
        for key in ("h", "kappa", "deviation_scale"):
            value = values[key]
            if value is not None and (not isinstance(value, (int, float)) or isinstance(value, bool)
                                      or not math.isfinite(value) or value <= 0):
                raise InvalidConfigException(f"Expected a positive number, got {value!r}.", key)
        for key in ("h_grid", "deltas"):
            for i, value in enumerate(values[key] or []):
                if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                    raise InvalidConfigException(f"Expected a positive number, got {value!r}.", f"{key}[{i}]")
        for key in ("include_sample_points", "plot_script"):
            if not isinstance(values[key], bool):
                raise InvalidConfigException(f"Expected true or false, got {values[key]!r}.", key)
        if values["output_dir"] is not None and not isinstance(values["output_dir"], str):
            raise InvalidConfigException(f"Expected a directory path, got {values['output_dir']!r}.", "output_dir")

    @staticmethod
    def _check_positive_int(value, field):
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise InvalidConfigException(f"Expected a positive integer, got {value!r}.", field)

    def get(self, key):
        return self.values[key]

    def get_resolved(self):
        '''Returns a copy of the fully resolved configuration, as echoed into reports.'''
        return copy.deepcopy(self.values)

    def _build(self, key, builder):
        if key not in self._objects:
            try:
                self._objects[key] = builder()
            except InvalidConfigException:
                raise
            except BVLaplaceException as e:
                raise InvalidConfigException(str(e), key)
        return self._objects[key]

    def get_manifold(self):
        spec = self.values["manifold"]
        return self._build("manifold", lambda: get_manifold(spec.get("name"), spec.get("radii")))

    def get_density(self):
        return self._build("density", lambda: get_density(self.get_manifold(), self.values["density"]))

    def get_kernel(self):
        return self._build("kernel", lambda: get_kernel(self.values["kernel"]))

    def get_functions(self):
        return self._build("functions", lambda: [get_test_function(self.get_manifold(), spec)
                                                 for spec in self.values["functions"]])

    def get_bandwidth(self, n):
        '''Returns h for sample size n: the fixed h if given, else C n^(-exponent) with exponent 1/(d+4) by default.'''
        if self.values["h"] is not None:
            return float(self.values["h"])
        rule = self.values["h_rule"]
        exponent = rule["exponent"] if rule["exponent"] is not None else 1.0 / (self.get_manifold().d + 4)
        return float(rule["constant"]) * n ** (-exponent)

    def get_neighbors(self, n):
        '''Returns k for sample size n: the fixed k if given, else ceil(C n^exponent) with exponent 4/(d+4) by default.'''
        if self.values["k"] is not None:
            return int(self.values["k"])
        rule = self.values["k_rule"]
        exponent = rule["exponent"] if rule["exponent"] is not None else 4.0 / (self.get_manifold().d + 4)
        return int(math.ceil(float(rule["constant"]) * n ** exponent - 1e-9))

    def get_output_dir(self, override=None):
        '''Returns the output directory: config field, else the CLI override, else the environment, else "output".'''
        return self.values["output_dir"] or override or os.environ.get(OUTPUT_DIR_ENV) or "output"

    @staticmethod
    def get_level_colors():
        '''Returns colorama color codes for each log level.'''
        return {
            logging.DEBUG: Style.DIM,
            logging.INFO: Fore.GREEN,
            logging.WARNING: Fore.YELLOW,
            logging.ERROR: Fore.RED,
            logging.CRITICAL: Fore.RED
        }

    @staticmethod
    def setup_logging(verbosity=0):
        '''Installs one coloured stderr handler; verbosity -1 quiet, 0 warnings, 1 info, 2+ debug.'''
        level = {-1: logging.ERROR, 0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(ColorFormatter(Config.get_level_colors()))
        root = logging.getLogger()
        for existing in list(root.handlers):
            root.removeHandler(existing)
        root.addHandler(handler)
        root.setLevel(level)
        return handler
