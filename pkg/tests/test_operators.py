import math

import numpy as np
import pytest

from app.exceptions import DegeneratePointException, DomainException, NumericalFailureException
from app.kernels import GaussianKernel, IndicatorKernel, TriangularKernel
from app.manifolds import get_density, get_test_function, limit_operator
from app.neighbors import NeighborIndex
from app.operators import (
    OperatorField, angular_rule, deterministic_field, deterministic_op_chord, deterministic_op_geodesic,
    far_tail_integral, graph_laplacian, graph_laplacian_geodesic, knn_laplacian, radial_rule,
    weighted_moment, window_sup_deviation
)
from app.sampling import SampleCloud, make_rng, sample

NORTH = np.array([0.0, 0.0, 1.0])


def cap_point(chord, azimuth=0.0):
    '''Point of the unit sphere at the given chord distance from the north pole.'''
    z = 1.0 - chord * chord / 2.0
    ring = math.sqrt(1.0 - z * z)
    return np.array([ring * math.cos(azimuth), ring * math.sin(azimuth), z])


def graph_oracle(points, kernel, h, f, x, d):
    distances = np.linalg.norm(points - x, axis=1)
    terms = [float(kernel.profile(a / h)) * (float(f.value(y)) - float(f.value(x)))
             for a, y in zip(distances, points)]
    return math.fsum(terms) / (len(points) * h ** (d + 2))


def knn_oracle(points, k, f, x, d):
    distances = np.linalg.norm(points - x, axis=1)
    radius = np.sort(distances)[k - 1]
    terms = [float(f.value(y)) - float(f.value(x)) for a, y in zip(distances, points) if a <= radius]
    return math.fsum(terms) / (len(points) * radius ** (d + 2))


@pytest.fixture
def cloud(sphere, tilted):
    return sample(sphere, tilted, 1000, 13)


class TestGraphLaplacian:

    def test_constant_annihilated(self, sphere, uniform):
        cloud = sample(sphere, uniform, 10000, 1)
        f = get_test_function(sphere, {"name": "constant", "value": 3.5})
        field = graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), 0.3, f, sphere.eval_grid(50))
        assert np.all(field.values == 0.0)

    def test_single_point(self, sphere, uniform):
        y = cap_point(0.1)
        cloud = SampleCloud([y], sphere, uniform, 0)
        f = get_test_function(sphere, {"name": "coordinate", "index": 3})
        field = graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), 0.2, f, NORTH)
        assert field.values[0] == pytest.approx((y[2] - 1.0) / 0.2 ** 4, rel=1e-14)

    @pytest.mark.parametrize("kernel", [IndicatorKernel(), GaussianKernel(), TriangularKernel()])
    def test_matches_double_loop(self, cloud, sphere, kernel):
        f = get_test_function(sphere, {"name": "product", "first": 1, "second": 3})
        xs = sphere.eval_grid(15)
        field = graph_laplacian(cloud, NeighborIndex(cloud), kernel, 0.25, f, xs)
        expected = [graph_oracle(cloud.points, kernel, 0.25, f, x, 2) for x in xs]
        assert np.allclose(field.values, expected, rtol=0.0, atol=1e-12)

    def test_random_configs_match_oracle(self, sphere, torus):
        rng = make_rng(77)
        for trial in range(20):
            manifold = (sphere, torus)[trial % 2]
            density = get_density(manifold, {"name": "tilted", "beta": 0.4})
            n = int(rng.integers(500, 2001))
            cloud = sample(manifold, density, n, trial)
            f = get_test_function(manifold, {"name": "coordinate", "index": 1 + trial % manifold.m})
            h = float(rng.uniform(0.15, 0.5))
            xs = manifold.eval_grid(5)
            field = graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), h, f, xs)
            expected = [graph_oracle(cloud.points, IndicatorKernel(), h, f, x, manifold.d) for x in xs]
            assert np.allclose(field.values, expected, rtol=0.0, atol=1e-12)
            k = math.ceil(n ** (2.0 / 3.0))
            knn = knn_laplacian(cloud, NeighborIndex(cloud), k, f, xs)
            expected = [knn_oracle(cloud.points, k, f, x, manifold.d) for x in xs]
            assert np.allclose(knn.values, expected, rtol=1e-12, atol=1e-12)

    def test_linear_in_f(self, cloud, sphere):
        index = NeighborIndex(cloud)
        xs = sphere.eval_grid(10)
        base = graph_laplacian(cloud, index, IndicatorKernel(), 0.3,
                               get_test_function(sphere, "coordinate"), xs).values
        scaled = graph_laplacian(cloud, index, IndicatorKernel(), 0.3,
                                 get_test_function(sphere, {"name": "coordinate", "scale": 3.0}), xs).values
        assert np.allclose(scaled, 3.0 * base, rtol=0.0, atol=1e-12)

    def test_locality(self, cloud, sphere, tilted):
        f = get_test_function(sphere, "coordinate")
        x = sphere.eval_grid(4)[2]
        h = 0.3
        full = graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), h, f, x).values[0] * cloud.n
        near = cloud.points[np.linalg.norm(cloud.points - x, axis=1) <= h]
        trimmed = SampleCloud(near, sphere, tilted, cloud.seed)
        local = graph_laplacian(trimmed, NeighborIndex(trimmed), IndicatorKernel(), h, f, x).values[0] * trimmed.n
        assert local == pytest.approx(full, rel=1e-12, abs=1e-12)

    def test_workers_do_not_change_values(self, cloud, sphere):
        f = get_test_function(sphere, "coordinate")
        xs = sphere.eval_grid(40)
        index = NeighborIndex(cloud)
        one = graph_laplacian(cloud, index, IndicatorKernel(), 0.3, f, xs, workers=1)
        many = graph_laplacian(cloud, index, IndicatorKernel(), 0.3, f, xs, workers=4)
        assert np.array_equal(one.values, many.values)

    @pytest.mark.parametrize("h", [0.0, -0.1])
    def test_bandwidth_must_be_positive(self, cloud, sphere, h):
        with pytest.raises(DomainException):
            graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), h,
                            get_test_function(sphere, "coordinate"), NORTH)

    def test_off_manifold_point_rejected(self, cloud, sphere):
        with pytest.raises(DomainException):
            graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), 0.3,
                            get_test_function(sphere, "coordinate"), np.array([0.0, 0.0, 2.0]))

    def test_geodesic_variant_close_to_chord(self, cloud, sphere):
        f = get_test_function(sphere, "coordinate")
        xs = sphere.eval_grid(10)
        index = NeighborIndex(cloud)
        chord = graph_laplacian(cloud, index, IndicatorKernel(), 0.2, f, xs)
        geodesic = graph_laplacian_geodesic(cloud, index, IndicatorKernel(), 0.2, f, xs)
        assert geodesic.provenance["distance"] == "geodesic"
        assert np.all(np.isfinite(geodesic.values))
        assert np.max(np.abs(chord.values - geodesic.values)) < np.max(np.abs(chord.values))


class TestKnnLaplacian:

    def test_direct_formula(self, sphere, uniform):
        points = [cap_point(0.1), cap_point(0.2, 2.0), cap_point(0.4, 4.0)]
        cloud = SampleCloud(points, sphere, uniform, 0)
        f = get_test_function(sphere, {"name": "coordinate", "index": 3})
        a, b = points[0][2] - 1.0, points[1][2] - 1.0
        field = knn_laplacian(cloud, NeighborIndex(cloud), 2, f, NORTH)
        radius = float(np.linalg.norm(points[1] - NORTH))
        assert field.values[0] == pytest.approx((a + b) / (3 * radius ** 4), rel=1e-14)
        assert field.values[0] == pytest.approx((a + b) / (3 * 0.2 ** 4), rel=1e-12)

    def test_constant_annihilated(self, sphere, uniform):
        cloud = sample(sphere, uniform, 10000, 4)
        f = get_test_function(sphere, "constant")
        field = knn_laplacian(cloud, NeighborIndex(cloud), 50, f, sphere.eval_grid(50))
        assert np.all(field.values == 0.0)

    @pytest.mark.parametrize("n,k", [(500, 20), (1500, 60), (2000, 5)])
    def test_matches_sort_oracle(self, sphere, tilted, n, k):
        cloud = sample(sphere, tilted, n, n + k)
        f = get_test_function(sphere, {"name": "zonal", "degree": 2})
        xs = sphere.eval_grid(10)
        field = knn_laplacian(cloud, NeighborIndex(cloud), k, f, xs)
        expected = [knn_oracle(cloud.points, k, f, x, 2) for x in xs]
        assert np.allclose(field.values, expected, rtol=1e-12, atol=1e-12)

    def test_scales_with_differences(self, cloud, sphere):
        index = NeighborIndex(cloud)
        xs = sphere.eval_grid(8)
        base = knn_laplacian(cloud, index, 30, get_test_function(sphere, "coordinate"), xs).values
        scaled = knn_laplacian(cloud, index, 30, get_test_function(sphere, {"name": "coordinate", "scale": -2.5}),
                               xs).values
        assert np.allclose(scaled, -2.5 * base, rtol=1e-12, atol=1e-12)

    def test_degenerate_point(self, sphere, uniform):
        cloud = SampleCloud([NORTH, NORTH, cap_point(0.3)], sphere, uniform, 0)
        xs = np.array([cap_point(0.5), NORTH])
        with pytest.raises(DegeneratePointException) as raised:
            knn_laplacian(cloud, NeighborIndex(cloud), 2, get_test_function(sphere, "coordinate"), xs)
        assert raised.value.point_index == 1


class TestOperatorField:

    def test_rejects_non_finite(self):
        with pytest.raises(NumericalFailureException):
            OperatorField([[0.0, 0.0, 1.0]], [math.nan], {"operator": "graph"})

    def test_csv_columns(self, tmp_path, cloud, sphere):
        field = graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), 0.3,
                                get_test_function(sphere, "coordinate"), sphere.eval_grid(3))
        path = tmp_path / "field.csv"
        field.write_csv(str(path))
        lines = [line for line in path.read_text().splitlines() if not line.startswith("#")]
        assert lines[0] == "x1,x2,x3,value,operator,h_or_k,n,seed"
        assert len(lines) == 4
        assert lines[1].endswith(",graph,0.3,1000,13")


class TestQuadratureRules:

    @pytest.mark.parametrize("d,nodes,area", [(1, 2, 2.0), (2, 16, 2.0 * math.pi), (3, 8, 4.0 * math.pi)])
    def test_angular_weights_sum_to_sphere_area(self, d, nodes, area):
        directions, weights = angular_rule(d, nodes)
        assert np.sum(weights) == pytest.approx(area, rel=1e-13)
        assert np.allclose(np.linalg.norm(directions, axis=1), 1.0)

    def test_radial_panels(self):
        radii, weights = radial_rule([0.0, 0.5, 1.0], 8)
        assert radii.size == 16
        assert np.sum(weights * radii ** 3) == pytest.approx(0.25, rel=1e-14)


class TestDeterministicOperators:

    def test_constant_annihilated(self, sphere, tilted):
        f = get_test_function(sphere, "constant")
        assert deterministic_op_chord(sphere, tilted, IndicatorKernel(), 0.3, f, NORTH) == 0.0
        assert deterministic_op_geodesic(sphere, tilted, IndicatorKernel(), 0.3, f, NORTH) == 0.0

    @pytest.mark.parametrize("h", [0.4, 0.1])
    def test_geodesic_cap_integral(self, sphere, uniform, h):
        # x^1 is a degree-1 harmonic: the cap integral is f(x) 2 pi int_0^h (cos t - 1) sin t dt
        f = get_test_function(sphere, "coordinate")
        x = np.array([0.6, 0.0, 0.8])
        expected = -(1.0 - math.cos(h)) ** 2 / (4.0 * h ** 4) * x[0]
        assert deterministic_op_geodesic(sphere, uniform, IndicatorKernel(), h, f, x) == pytest.approx(
            expected, rel=1e-9)

    @pytest.mark.parametrize("h", [0.4, 0.1])
    def test_chord_cap_integral(self, sphere, uniform, h):
        f = get_test_function(sphere, "coordinate")
        x = np.array([0.6, 0.0, 0.8])
        angle = 2.0 * math.asin(h / 2.0)
        expected = -(1.0 - math.cos(angle)) ** 2 / (4.0 * h ** 4) * x[0]
        assert deterministic_op_chord(sphere, uniform, IndicatorKernel(), h, f, x) == pytest.approx(
            expected, rel=1e-9)

    def test_approaches_limit(self, sphere, tilted):
        f = get_test_function(sphere, {"name": "product", "first": 1, "second": 2})
        x = sphere.eval_grid(7)[3]
        limit = limit_operator(sphere, tilted, f, IndicatorKernel(), x)
        gaps = [abs(deterministic_op_geodesic(sphere, tilted, IndicatorKernel(), h, f, x) - limit)
                for h in (0.4, 0.2, 0.1)]
        assert gaps[2] < gaps[1] < gaps[0]

    def test_torus_chord_and_geodesic_differ(self, torus):
        density = get_density(torus, {"name": "tilted", "beta": 0.3})
        f = get_test_function(torus, {"name": "product", "first": 1, "second": 3})
        x = torus.from_angles(np.array([0.4, 1.1]))
        chord = deterministic_op_chord(torus, density, IndicatorKernel(), 0.3, f, x)
        geodesic = deterministic_op_geodesic(torus, density, IndicatorKernel(), 0.3, f, x)
        assert math.isfinite(chord) and math.isfinite(geodesic)
        assert chord != geodesic

    def test_batch_matches_single(self, sphere, tilted):
        f = get_test_function(sphere, "coordinate")
        xs = sphere.eval_grid(3)
        batch = deterministic_op_chord(sphere, tilted, GaussianKernel(), 0.2, f, xs)
        single = [deterministic_op_chord(sphere, tilted, GaussianKernel(), 0.2, f, x) for x in xs]
        assert np.array_equal(batch, single)
        field = deterministic_field(sphere, tilted, GaussianKernel(), 0.2, f, xs, "chord", workers=2)
        assert np.array_equal(field.values, batch)

    def test_circle(self, circle):
        density = get_density(circle, {"name": "tilted", "beta": 0.2})
        f = get_test_function(circle, "coordinate")
        x = circle.eval_grid(5)[1]
        value = deterministic_op_geodesic(circle, density, IndicatorKernel(), 0.1, f, x)
        limit = limit_operator(circle, density, f, IndicatorKernel(), x)
        assert value == pytest.approx(limit, rel=0.05, abs=1e-3)

    @pytest.mark.slow
    def test_graph_laplacian_unbiased(self, sphere, uniform):
        f = get_test_function(sphere, "coordinate")
        xs = sphere.eval_grid(10)
        values = []
        for seed in range(200):
            cloud = sample(sphere, uniform, 2000, seed)
            values.append(graph_laplacian(cloud, NeighborIndex(cloud), IndicatorKernel(), 0.4, f, xs).values)
        values = np.array(values)
        mean = values.mean(axis=0)
        standard_error = values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])
        expected = deterministic_op_chord(sphere, uniform, IndicatorKernel(), 0.4, f, xs)
        assert np.all(np.abs(mean - expected) <= 4.0 * standard_error)


class TestMoments:

    def test_far_tail_vanishes_for_compact_kernel(self, sphere):
        assert far_tail_integral(sphere, IndicatorKernel(), 0.3, NORTH) == 0.0

    def test_gaussian_far_tail_small(self, sphere):
        assert 0.0 <= far_tail_integral(sphere, GaussianKernel(), 0.2, NORTH) < 1e-12

    def test_second_moment_near_flat_value(self, torus):
        # flat limit (1/h^4) int_{|v| <= h} |v|^2 dv = pi / 2; chords shrink by O(h^2)
        x = torus.from_angles(np.array([0.0, 0.0]))
        value = weighted_moment(torus, IndicatorKernel(), 0.1, x, 2, "geodesic")
        assert value == pytest.approx(math.pi / 2, rel=1e-2)

    def test_window_needs_kappa_above_one(self, cloud, sphere):
        f = get_test_function(sphere, "coordinate")
        with pytest.raises(DomainException):
            window_sup_deviation(cloud, NeighborIndex(cloud), IndicatorKernel(), 0.3, 1.0, f, NORTH, [0.0])

    def test_window_deviation_nonnegative(self, cloud, sphere, tilted):
        f = get_test_function(sphere, "coordinate")
        xs = sphere.eval_grid(5)
        limit = limit_operator(sphere, tilted, f, IndicatorKernel(), xs)
        deviation = window_sup_deviation(cloud, NeighborIndex(cloud), IndicatorKernel(), 0.3, 2.0, f, xs, limit)
        assert deviation.shape == (5,)
        assert np.all(deviation >= 0.0)
