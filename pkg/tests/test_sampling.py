import math

import numpy as np
import pytest
from scipy import stats

from app.exceptions import DomainException, InvalidConfigException
from app.manifolds import get_density, get_manifold
from app.sampling import BLOCK_SIZE, eval_grid, make_rng, read_cloud_csv, sample, write_cloud_csv


class TestRng:

    def test_same_seed_same_stream(self):
        assert np.array_equal(make_rng(42).uniform(size=5), make_rng(42).uniform(size=5))

    def test_tasks_are_distinct_substreams(self):
        assert not np.array_equal(make_rng(42, 0).uniform(size=5), make_rng(42, 1).uniform(size=5))

    @pytest.mark.parametrize("seed", [-1, 2 ** 64, 1.5])
    def test_bad_seed(self, seed):
        with pytest.raises(DomainException):
            make_rng(seed)


class TestSample:

    def test_points_on_manifold(self, torus):
        cloud = sample(torus, get_density(torus, {"name": "tilted", "beta": 0.3}), 1000, 1)
        assert cloud.n == 1000
        assert np.max(torus.constraint_residual(cloud.points)) <= 1e-12

    def test_sphere_points_on_manifold(self, sphere, uniform):
        cloud = sample(sphere, uniform, 2000, 4)
        assert np.max(np.abs(np.linalg.norm(cloud.points, axis=1) - 1.0)) <= 1e-12

    def test_single_point(self, sphere, uniform):
        cloud = sample(sphere, uniform, 1, 0)
        assert cloud.points.shape == (1, 3)
        sphere.check_on_manifold(cloud.points, 1e-12)

    def test_deterministic(self, sphere, tilted):
        first = sample(sphere, tilted, 5000, 9)
        second = sample(sphere, tilted, 5000, 9)
        assert np.array_equal(first.points, second.points)

    def test_independent_of_workers(self, sphere, tilted):
        n = 2 * BLOCK_SIZE + 100
        assert np.array_equal(sample(sphere, tilted, n, 3, workers=1).points,
                              sample(sphere, tilted, n, 3, workers=4).points)

    def test_prefix_stable_within_block(self, sphere, uniform):
        # uniform density accepts every proposal, so the first block is a prefix
        assert np.array_equal(sample(sphere, uniform, 10, 5).points, sample(sphere, uniform, 20, 5).points[:10])

    def test_points_read_only(self, sphere, uniform):
        cloud = sample(sphere, uniform, 10, 0)
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 2.0

    def test_zero_points_rejected(self, sphere, uniform):
        with pytest.raises(DomainException):
            sample(sphere, uniform, 0, 0)

    def test_uniform_means(self, sphere, uniform):
        n = 100000
        cloud = sample(sphere, uniform, n, 2024)
        assert np.all(np.abs(cloud.points.mean(axis=0)) <= 4.0 / math.sqrt(n))

    def test_tilted_first_moment(self, sphere, tilted):
        n = 100000
        cloud = sample(sphere, tilted, n, 17)
        x1 = cloud.points[:, 0]
        standard_error = x1.std(ddof=1) / math.sqrt(n)
        assert abs(x1.mean() - 0.5 / 3.0) <= 4.0 * standard_error

    def test_acceptance_rate(self, sphere):
        density = get_density(sphere, {"name": "tilted", "beta": 0.8})
        cloud = sample(sphere, density, 100000, 8)
        expected = density.get_expected_acceptance()
        assert abs(cloud.get_acceptance_rate() - expected) <= 0.1 * expected

    def test_uniform_height_chi_square(self, sphere, uniform):
        # Archimedes: the height of a uniform point on S^2 is uniform on [-1, 1]
        cloud = sample(sphere, uniform, 100000, 31)
        counts, _ = np.histogram(cloud.points[:, 2], bins=20, range=(-1.0, 1.0))
        assert stats.chisquare(counts).pvalue > 0.001


class TestEvalGrid:

    def test_deterministic(self, sphere):
        assert np.array_equal(eval_grid(sphere, 2), eval_grid(sphere, 2))
        assert eval_grid(sphere, 2).shape == (2, 3)

    def test_torus_lattice(self):
        torus = get_manifold("torus", [1.0, 1.0])
        grid = eval_grid(torus, 16)
        theta = np.sort(np.unique(np.round(torus.angles(grid)[:, 0] % (2 * math.pi), 12)))
        assert theta.size == 4
        assert np.allclose(np.diff(theta), math.pi / 2)

    @pytest.mark.parametrize("name", ["circle", "s2", "s3", "torus"])
    def test_distinct_points_on_manifold(self, name):
        manifold = get_manifold(name)
        grid = eval_grid(manifold, 50)
        manifold.check_on_manifold(grid, 1e-12)
        gaps = np.linalg.norm(grid[:, np.newaxis, :] - grid[np.newaxis, :, :], axis=2)
        assert np.min(gaps + np.eye(50) * 10.0) > 0.0

    def test_empty_grid_rejected(self, sphere):
        with pytest.raises(DomainException):
            eval_grid(sphere, 0)


class TestCloudCsv:

    def test_write_then_read(self, tmp_path, sphere, tilted):
        cloud = sample(sphere, tilted, 50, 12)
        path = tmp_path / "cloud.csv"
        write_cloud_csv(cloud, str(path))
        restored = read_cloud_csv(str(path))
        assert np.array_equal(restored.points, cloud.points)
        assert restored.seed == 12
        assert restored.density.get_id() == tilted.get_id()

    def test_byte_identical(self, tmp_path, sphere, uniform):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for path in paths:
            write_cloud_csv(sample(sphere, uniform, 100, 7), str(path))
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_header_records_metadata(self, tmp_path, torus, uniform):
        cloud = sample(torus, get_density(torus, "uniform"), 5, 3)
        path = tmp_path / "torus.csv"
        write_cloud_csv(cloud, str(path))
        text = path.read_text()
        assert "# manifold=torus" in text
        assert "# seed=3" in text

    def test_incomplete_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2,x3\n0,0,1\n")
        with pytest.raises(InvalidConfigException):
            read_cloud_csv(str(path))
