'''Graph Laplacian estimators and the deterministic kernel operators they approximate.

The random operators sum over a cloud. The deterministic ones integrate
against p dmu in normal coordinates around x: radial Gauss-Legendre panels
split where the kernel jumps, times an angular rule on the unit sphere of
R^d, with sqrt(det g) as the volume weight.
'''

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np
from scipy import special

try:
    from app.display import write_csv
    from app.exceptions import DegeneratePointException, DomainException, NumericalFailureException
    from app.rules import Rules
except ImportError:
    from display import write_csv
    from exceptions import DegeneratePointException, DomainException, NumericalFailureException
    from rules import Rules

logger = logging.getLogger(__name__)


class OperatorField:
    '''Values of one operator at a list of evaluation points.'''

    def __init__(self, points, values, provenance):
        '''
        Args:
            points: (N, m) evaluation points
            values: N operator values
            provenance (dict): operator, kernel, h_or_k, n, seed, f, p
        '''
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.values = np.asarray(values, dtype=float)
        self.provenance = dict(provenance)
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise NumericalFailureException(
                f"Operator {self.provenance.get('operator')} produced a non-finite value at point {bad}.",
                {"point_index": bad})

    def __repr__(self):
        return f"OperatorField(operator='{self.provenance.get('operator')}', points={len(self.values)})"

    def __len__(self):
        return len(self.values)

    def get_values(self):
        return self.values

    def get_points(self):
        return self.points

    def get_provenance(self):
        return self.provenance

    def sup_error(self, reference):
        '''Returns max |value - reference| over the evaluation points.'''
        return float(np.max(np.abs(self.values - np.asarray(reference, dtype=float)), initial=0.0))

    def write_csv(self, path):
        columns = [f"x{i + 1}" for i in range(self.points.shape[1])] + ["value", "operator", "h_or_k", "n", "seed"]
        tail = [self.provenance.get(key) for key in ("operator", "h_or_k", "n", "seed")]
        rows = [list(point) + [value] + tail for point, value in zip(self.points.tolist(), self.values.tolist())]
        write_csv(path, columns, rows, {key: value for key, value in self.provenance.items()
                                        if key not in ("operator", "h_or_k", "n", "seed")})


def _map_points(function, count, workers):
    '''Evaluates function(j) for j < count, optionally on a thread pool, in index order.'''
    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(function, range(count))), dtype=float)
    return np.array([function(j) for j in range(count)], dtype=float)


def _check_bandwidth(h):
    if not h > 0 or not math.isfinite(h):
        raise DomainException(f"Bandwidth h must be a positive real, got {h}.")


def graph_reach(kernel, h):
    '''Returns the chord radius beyond which the graph estimator ignores points.'''
    if kernel.support_radius is not None:
        return h * kernel.support_radius
    return h * Rules().get_truncation()["graph"]


def _provenance(operator, kernel, h_or_k, cloud, f, distance="chord"):
    return {
        "operator": operator,
        "kernel": kernel.name if kernel is not None else "indicator",
        "h_or_k": h_or_k,
        "n": cloud.n,
        "seed": cloud.seed,
        "f": f.get_id(),
        "p": cloud.density.get_id(),
        "manifold": cloud.manifold.get_id(),
        "distance": distance
    }


def graph_laplacian(cloud, index, kernel, h, f, xs, workers=1):
    '''Evaluates A_{h,n} f(x) = (1/(n h^(d+2))) sum_i K(||x - X_i|| / h) (f(X_i) - f(x)).

    Args:
        cloud: SampleCloud
        index: NeighborIndex built on the cloud
        kernel: Kernel
        h: bandwidth
        f: TestFunction
        xs: evaluation points on M
        workers: number of threads

    Returns:
        OperatorField: the values
    '''
    _check_bandwidth(h)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    cloud.manifold.check_on_manifold(xs)
    n, d = cloud.n, cloud.manifold.d
    f_cloud = f.value(cloud.points)
    f_eval = f.value(xs)
    reach = graph_reach(kernel, h)
    normalization = n * h ** (d + 2)

    def evaluate(j):
        indices, distances = index.range_query_with_distances(xs[j], reach)
        terms = kernel.profile(distances / h) * (f_cloud[indices] - f_eval[j])
        return math.fsum(terms) / normalization

    values = _map_points(evaluate, xs.shape[0], workers)
    return OperatorField(xs, values, _provenance("graph", kernel, h, cloud, f))


def graph_laplacian_geodesic(cloud, index, kernel, h, f, xs, workers=1):
    '''Evaluates the graph Laplacian with the geodesic distance in the kernel argument.'''
    _check_bandwidth(h)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    manifold = cloud.manifold
    manifold.check_on_manifold(xs)
    n, d = cloud.n, manifold.d
    f_cloud = f.value(cloud.points)
    f_eval = f.value(xs)
    # chord <= geodesic, so the chord ball of the same radius holds every candidate
    reach = graph_reach(kernel, h)
    normalization = n * h ** (d + 2)

    def evaluate(j):
        indices = index.range_query(xs[j], reach)
        if indices.size == 0:
            return 0.0
        rho = np.atleast_1d(manifold.geodesic_distance(xs[j], cloud.points[indices]))
        weights = kernel.profile(rho / h)
        weights[rho > reach] = 0.0
        return math.fsum(weights * (f_cloud[indices] - f_eval[j])) / normalization

    values = _map_points(evaluate, xs.shape[0], workers)
    return OperatorField(xs, values, _provenance("graph-geodesic", kernel, h, cloud, f, "geodesic"))


def knn_laplacian(cloud, index, k, f, xs, workers=1):
    '''Evaluates the kNN Laplacian (1/(n R^(d+2))) sum_{||X_i - x|| <= R} (f(X_i) - f(x)), R = R_{n,k}(x).

    Raises:
        DegeneratePointException: when R_{n,k}(x) = 0 at some evaluation point
    '''
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    cloud.manifold.check_on_manifold(xs)
    n, d = cloud.n, cloud.manifold.d
    f_cloud = f.value(cloud.points)
    f_eval = f.value(xs)

    def evaluate(j):
        radius = index.knn_radius(xs[j], k)
        if radius == 0.0:
            raise DegeneratePointException(
                f"kNN radius is 0 at evaluation point {j}: it coincides with at least {k} sample points.",
                point_index=j, diagnostics={"k": k})
        indices = index.range_query(xs[j], radius)
        return math.fsum(f_cloud[indices] - f_eval[j]) / (n * radius ** (d + 2))

    values = _map_points(evaluate, xs.shape[0], workers)
    return OperatorField(xs, values, _provenance("knn", None, k, cloud, f))


def window_sup_deviation(cloud, index, kernel, h, kappa, f, xs, limit_values, count=5, workers=1):
    '''Returns, per x, the max over count log-spaced r in [h/kappa, kappa h] of |A_{r,n} f(x) - A f(x)|.'''
    if not kappa > 1:
        raise DomainException(f"Window factor kappa must exceed 1, got {kappa}.")
    if count < 1:
        raise DomainException(f"Window grid needs at least one radius, got {count}.")
    limit_values = np.asarray(limit_values, dtype=float)
    deviation = np.zeros(np.atleast_2d(xs).shape[0])
    for r in h * kappa ** np.linspace(-1.0, 1.0, count):
        field = graph_laplacian(cloud, index, kernel, float(r), f, xs, workers)
        deviation = np.maximum(deviation, np.abs(field.values - limit_values))
    return deviation


# Deterministic operators

@lru_cache(maxsize=32)
def _legendre(nodes):
    return special.roots_legendre(nodes)


def angular_rule(d, nodes):
    '''Returns (directions, weights) integrating over the unit sphere of R^d.

    d = 1: the two directions +-1. d = 2: nodes equispaced angles.
    d = 3: nodes Gauss-Legendre polar nodes times 2 * nodes azimuths.
    '''
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if d == 2:
        phi = 2.0 * math.pi * np.arange(nodes) / nodes
        return np.column_stack([np.cos(phi), np.sin(phi)]), np.full(nodes, 2.0 * math.pi / nodes)
    if d == 3:
        z, wz = _legendre(nodes)
        azimuth = 2.0 * math.pi * np.arange(2 * nodes) / (2 * nodes)
        zz, aa = np.meshgrid(z, azimuth, indexing='ij')
        ring = np.sqrt(1.0 - zz * zz)
        directions = np.column_stack([(ring * np.cos(aa)).ravel(), (ring * np.sin(aa)).ravel(), zz.ravel()])
        weights = np.outer(wz, np.full(azimuth.size, math.pi / nodes)).ravel()
        return directions, weights
    raise DomainException(f"No angular rule for dimension {d}.")


def radial_rule(edges, nodes):
    '''Returns Gauss-Legendre nodes and weights on each panel [edges[i], edges[i+1]].'''
    t, w = _legendre(nodes)
    radii = []
    weights = []
    for lower, upper in zip(edges, edges[1:]):
        if upper <= lower:
            continue
        half = 0.5 * (upper - lower)
        radii.append(lower + half * (t + 1.0))
        weights.append(half * w)
    if not radii:
        return np.empty(0), np.empty(0)
    return np.concatenate(radii), np.concatenate(weights)


def _reach(manifold, kernel, h, x, direction, distance):
    '''Returns (geodesic radius where the kernel vanishes along direction, kernel jump radii).'''
    truncation = Rules().get_truncation()["deterministic"]
    jumps = kernel.get_panel_points()
    if kernel.support_radius is None:
        outer_scaled = truncation
    else:
        outer_scaled = kernel.support_radius
        jumps = jumps[:-1]
    if distance == "geodesic":
        return outer_scaled * h, [a * h for a in jumps]
    outer = manifold.radius_for_chord(x, direction, outer_scaled * h)
    return outer, [manifold.radius_for_chord(x, direction, a * h) for a in jumps]


def normal_ball_nodes(manifold, kernel, h, x, distance="chord", radial=None, angular=None):
    '''Returns tangent coefficients v and weights for integrating over the kernel's normal ball at x.

    The weights include r^(d-1) sqrt(det g)(r); the ball is clipped at c1.
    '''
    radial_default, angular_default = Rules().get_quadrature_nodes(manifold.d)
    radial = radial or radial_default
    angular = angular or angular_default
    c1 = manifold.get_c1()
    directions, direction_weights = angular_rule(manifold.d, angular)
    vectors = []
    weights = []
    clipped = False
    for direction, direction_weight in zip(directions, direction_weights):
        outer, jumps = _reach(manifold, kernel, h, x, direction, distance)
        if outer > c1:
            clipped = True
            outer = c1
        edges = [0.0] + sorted(r for r in jumps if 0.0 < r < outer) + [outer]
        r, w = radial_rule(edges, radial)
        vectors.append(r[:, np.newaxis] * direction)
        weights.append(direction_weight * w * r ** (manifold.d - 1) * manifold.metric_det_normal(r))
    if clipped and float(kernel.profile(c1 / h)) > 1e-12 * kernel.get_sup():
        logger.warning("Quadrature ball at h = %g clipped at c1 = %.6g on %s", h, c1, manifold.get_id())
    return np.concatenate(vectors), np.concatenate(weights)


def _operator_integral(manifold, density, kernel, h, f, x, distance, radial, angular):
    '''Returns (integral, integral of the absolute integrand) at one refinement level.'''
    vectors, weights = normal_ball_nodes(manifold, kernel, h, x, distance, radial, angular)
    points = manifold.exp_map(x, vectors)
    if distance == "geodesic":
        a = np.linalg.norm(vectors, axis=1) / h
    else:
        a = np.linalg.norm(points - x, axis=1) / h
    terms = weights * kernel.profile(a) * (f.value(points) - f.value(x)) * density.value(points)
    scale = h ** (manifold.d + 2)
    return math.fsum(terms) / scale, math.fsum(np.abs(terms)) / scale


def _deterministic_op(manifold, density, kernel, h, f, x, distance):
    _check_bandwidth(h)
    manifold.check_on_manifold(x)
    x = np.asarray(x, dtype=float)
    radial, angular = Rules().get_quadrature_nodes(manifold.d)
    coarse, _ = _operator_integral(manifold, density, kernel, h, f, x, distance, radial, angular)
    fine, magnitude = _operator_integral(manifold, density, kernel, h, f, x, distance, 2 * radial, 2 * angular)
    tolerance = Rules().get_tolerances()["quadrature_ratio"]
    if abs(fine - coarse) > tolerance * max(abs(fine), magnitude):
        raise NumericalFailureException(
            f"Quadrature of the {distance} operator at h = {h} did not converge.",
            {"coarse": coarse, "fine": fine, "magnitude": magnitude, "h": h, "x": x.tolist()})
    return fine


def _over_points(operator, manifold, density, kernel, h, f, x):
    rows = np.asarray(x, dtype=float)
    if rows.ndim == 1:
        return operator(manifold, density, kernel, h, f, rows)
    return np.array([operator(manifold, density, kernel, h, f, row) for row in rows])


def _chord_single(manifold, density, kernel, h, f, x):
    return _deterministic_op(manifold, density, kernel, h, f, x, "chord")


def _geodesic_single(manifold, density, kernel, h, f, x):
    return _deterministic_op(manifold, density, kernel, h, f, x, "geodesic")


def deterministic_op_chord(manifold, density, kernel, h, f, x):
    '''Returns A_h f(x) = (1/h^(d+2)) int K(||x - y|| / h)(f(y) - f(x)) p(y) mu(dy).

    Raises:
        NumericalFailureException: when two refinement levels disagree
    '''
    return _over_points(_chord_single, manifold, density, kernel, h, f, x)


def deterministic_op_geodesic(manifold, density, kernel, h, f, x):
    '''Returns the same integral with rho(x, y) in place of ||x - y||.'''
    return _over_points(_geodesic_single, manifold, density, kernel, h, f, x)


def deterministic_field(manifold, density, kernel, h, f, xs, distance="chord", workers=1):
    '''Evaluates a deterministic operator over xs as an OperatorField.'''
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    single = _chord_single if distance == "chord" else _geodesic_single
    values = _map_points(lambda j: single(manifold, density, kernel, h, f, xs[j]), xs.shape[0], workers)
    provenance = {
        "operator": f"deterministic-{distance}",
        "kernel": kernel.name,
        "h_or_k": h,
        "n": None,
        "seed": None,
        "f": f.get_id(),
        "p": density.get_id(),
        "manifold": manifold.get_id(),
        "distance": distance
    }
    return OperatorField(xs, values, provenance)


def weighted_moment(manifold, kernel, h, x, power, distance="geodesic"):
    '''Returns (1/h^(d+2)) int_M K(dist(x, y) / h) ||x - y||^power mu(dy).

    The normal ball rho < c1 is integrated in normal coordinates; the rest of M
    comes from far_tail_integral.
    '''
    _check_bandwidth(h)
    x = np.asarray(x, dtype=float)
    vectors, weights = normal_ball_nodes(manifold, kernel, h, x, distance)
    points = manifold.exp_map(x, vectors)
    chord = np.linalg.norm(points - x, axis=1)
    a = (np.linalg.norm(vectors, axis=1) if distance == "geodesic" else chord) / h
    near = math.fsum(weights * kernel.profile(a) * chord ** power) / h ** (manifold.d + 2)
    return near + far_tail_integral(manifold, kernel, h, x, distance, power)


def far_tail_integral(manifold, kernel, h, x, distance="geodesic", power=0, nodes=64):
    '''Returns (1/h^(d+2)) int_{rho >= c1} K(dist(x, y) / h) ||x - y||^power mu(dy) by global quadrature.'''
    _check_bandwidth(h)
    x = np.asarray(x, dtype=float)
    points, weights = manifold.quadrature(nodes)
    rho = manifold.geodesic_distance(x, points)
    chord = np.linalg.norm(points - x, axis=1)
    far = rho >= manifold.get_c1()
    if not np.any(far):
        return 0.0
    a = (rho if distance == "geodesic" else chord)[far] / h
    terms = weights[far] * kernel.profile(a) * chord[far] ** power
    return math.fsum(terms) / h ** (manifold.d + 2)
