class Rules:
    '''Catalogs and numeric defaults shared by every module.'''

    def __init__(self):
        pass

    def get_kernel_names(self):
        '''Returns the names of the catalog kernels.'''
        return ["indicator", "gaussian", "triangular", "annulus"]

    def get_manifold_names(self):
        '''Returns the names of the catalog manifolds.'''
        return ["circle", "s2", "s3", "torus"]

    def get_density_names(self):
        '''Returns the names of the shipped densities.'''
        return ["uniform", "tilted"]

    def get_function_names(self):
        '''Returns the names of the test-function families.'''
        return ["constant", "coordinate", "product", "zonal"]

    def get_subcommands(self):
        '''Returns the CLI subcommands in display order.'''
        return [
            "kernel-info", "sample", "laplacian", "knn-laplacian",
            "rate", "knn-rate", "concentration", "deviation",
            "moments", "geometry", "operator-gap"
        ]

    def get_experiment_kinds(self):
        '''Returns the subcommands driven by a JSON config file.'''
        return ["rate", "knn-rate", "concentration", "deviation",
                "moments", "geometry", "operator-gap"]

    def get_quadrature_nodes(self, d):
        '''Returns (radial, angular) node counts of the normal-coordinate quadrature.

        Args:
            d: intrinsic dimension

        Returns:
            tuple: radial nodes per panel, angular nodes (for d = 3 the polar
                   count; the azimuthal count is twice that)
        '''
        return {
            1: (64, 2),
            2: (64, 128),
            3: (48, 32)
        }[d]

    def get_truncation(self):
        '''Returns the truncation multipliers for kernels without compact support.'''
        return {
            "graph": 8.0,          # e^{-64} below every tolerance in use
            "deterministic": 12.0
        }

    def get_tolerances(self):
        '''Returns the numeric tolerances.'''
        return {
            "embedding": 1e-12,
            "on_manifold": 1e-9,
            "quadrature_ratio": 1e-4,
            "moment_rel": 1e-10,
            "frame_threshold": 0.9
        }

    def get_brute_force_threshold(self):
        '''Returns the cloud size below which neighbor queries scan every point.'''
        return 256

    def get_c1_factor(self):
        '''Returns the fraction of the injectivity radius used for c1.'''
        return 0.9

    def get_rate_slope_window(self):
        '''Returns the accepted range of the fitted log-log rate slope under the bandwidth rule.'''
        return -0.30, -0.05
