import json
import math

import numpy as np
import pytest

from app import __version__
from app.config import Config
from app.exceptions import InvalidConfigException
from app.experiments import (
    EXPERIMENTS, ExperimentReport, expected_knn_radius, fit_rate, radius_envelope, run_experiment,
    validate_experiment
)
from app.manifolds import get_manifold
from app.sampling import eval_grid


def rate_config(**values):
    config = {"experiment": "rate", "n_grid": [200, 400], "h": 0.5, "seeds": [0, 1],
              "grid_size": 20, "include_sample_points": False}
    config.update(values)
    return config


class TestValidateExperiment:

    def test_requires_experiment(self):
        with pytest.raises(InvalidConfigException):
            validate_experiment({})

    def test_rate_plan_lists_bandwidths(self):
        plan = validate_experiment({"experiment": "rate", "n_grid": [1024, 4096]})
        assert plan["h"]["1024"] == pytest.approx(1024 ** (-1.0 / 6.0))
        assert plan["manifold"] == get_manifold("s2").get_id()

    def test_rate_rejects_window_violation(self):
        with pytest.raises(InvalidConfigException) as raised:
            validate_experiment({"experiment": "rate", "n_grid": [1000], "h": 0.01})
        assert raised.value.field == "n_grid[0]"

    def test_knn_rejects_k_equal_to_n(self):
        with pytest.raises(InvalidConfigException):
            validate_experiment({"experiment": "knn-rate", "n_grid": [100], "k": 100})

    def test_knn_rejects_small_kappa(self):
        with pytest.raises(InvalidConfigException):
            validate_experiment({"experiment": "concentration", "n_grid": [4096], "kappa": 1.0})

    def test_deviation_plan(self):
        plan = validate_experiment({"experiment": "deviation", "n": 1000, "h": 0.5, "repeats": 4})
        assert plan["delta_interval"] == [0.5, 1.0]

    def test_deviation_rejects_small_delta(self):
        with pytest.raises(InvalidConfigException):
            validate_experiment({"experiment": "deviation", "n": 1000, "h": 0.5, "deltas": [0.01]})

    def test_deviation_rejects_zero_repeats(self):
        with pytest.raises(InvalidConfigException):
            validate_experiment({"experiment": "deviation", "repeats": 0})

    def test_operator_gap_needs_halving_grid(self):
        with pytest.raises(InvalidConfigException):
            validate_experiment({"experiment": "operator-gap", "h_grid": [0.4, 0.3]})

    def test_moments_need_decreasing_grid(self):
        with pytest.raises(InvalidConfigException):
            validate_experiment({"experiment": "moments", "h_grid": [0.1, 0.2]})

    def test_every_kind_is_registered(self):
        assert set(EXPERIMENTS) == set(Config().rules.get_experiment_kinds())


class TestFitRate:

    def test_too_few_sizes(self):
        fit = fit_rate({100: 0.3, 200: 0.2, 400: 0.1})
        assert fit["slope"] is None
        assert fit["reason"] == "fewer than 4 distinct n"

    def test_power_law(self):
        fit = fit_rate({n: 3.0 * n ** -0.5 for n in (1024, 2048, 4096, 8192)})
        assert fit["slope"] == pytest.approx(-0.5)
        assert fit["stderr"] == pytest.approx(0.0, abs=1e-12)

    def test_zero_error(self):
        fit = fit_rate({n: 0.0 for n in (1, 2, 3, 4)})
        assert fit["slope"] is None
        assert fit["reason"] == "zero error"


class TestRateExperiment:

    def test_constant_function_has_zero_error(self):
        report = EXPERIMENTS["rate"](rate_config(functions=[{"name": "constant", "value": 2.0}]))
        assert report.column("sup_error") == [0.0] * 4
        assert report.checks["median_decreases"]
        assert report.summary["slope"] is None

    def test_rows_follow_task_order(self):
        report = EXPERIMENTS["rate"](rate_config())
        assert report.column("n") == [200, 200, 400, 400]
        assert report.column("seed") == [0, 1, 0, 1]
        assert all(error > 0 for error in report.column("sup_error"))

    def test_independent_of_workers(self):
        serial = EXPERIMENTS["rate"](rate_config(seeds=[0, 1, 2]))
        parallel = EXPERIMENTS["rate"](rate_config(seeds=[0, 1, 2], workers=3))
        assert serial.rows == parallel.rows

    def test_slope_window_under_bandwidth_rule(self):
        report = EXPERIMENTS["rate"]({"experiment": "rate", "grid_size": 20, "include_sample_points": False})
        lower, upper = Config().rules.get_rate_slope_window()
        assert report.checks["slope_in_range"] == (lower <= report.summary["slope"] <= upper)

    def test_no_slope_window_for_fixed_bandwidth(self):
        report = EXPERIMENTS["rate"](rate_config(n_grid=[200, 400, 800, 1600]))
        assert report.summary["slope"] is not None
        assert "slope_in_range" not in report.checks

    def test_csv_is_reproducible(self, tmp_path):
        paths = []
        for name in ("first", "second"):
            _, files = run_experiment(rate_config(), str(tmp_path / name))
            paths.append(files[0])
        with open(paths[0], "rb") as first, open(paths[1], "rb") as second:
            assert first.read() == second.read()

    @pytest.mark.slow
    def test_desk_scale_slope(self):
        report = EXPERIMENTS["rate"]({"experiment": "rate", "n_grid": [2 ** e for e in range(10, 16)],
                                      "repeats": 10, "workers": 4})
        medians = report.medians()
        assert -0.30 <= report.summary["slope"] <= -0.05
        assert medians[2 ** 15] < medians[2 ** 10]
        assert report.checks["slope_in_range"]
        assert report.checks["median_decreases"]


class TestKnnExperiments:

    def test_knn_rate_rows(self):
        report = EXPERIMENTS["knn-rate"]({"experiment": "knn-rate", "n_grid": [1000], "grid_size": 10,
                                          "include_sample_points": False})
        assert report.column("k") == [100]
        assert np.all(np.isfinite(report.column("sup_error")))
        assert report.column("window_sup_error")[0] >= 0.0
        assert report.fits[report.column("f")[0]]["reason"] == "fewer than 4 distinct n"

    def test_expected_radius_on_uniform_sphere(self, sphere, uniform):
        # a ball of area pi r^2 carries mass k/n under p = 1/(4 pi)
        radius = expected_knn_radius(sphere, uniform, 100, 1000, eval_grid(sphere, 3))
        assert np.allclose(radius, math.sqrt(0.4))

    def test_radius_envelope(self):
        assert radius_envelope(100, 1000, 2) == pytest.approx(
            2.0 * (0.1 + 1.5 * math.sqrt(13.0) * math.sqrt(math.log(1000) / 100)))

    def test_concentration_report(self):
        report = EXPERIMENTS["concentration"]({"experiment": "concentration", "n_grid": [1000, 4000],
                                               "seeds": [0, 1], "grid_size": 20})
        assert report.column("n") == [1000, 1000, 4000, 4000]
        assert all(0.0 < value < 1.0 for value in report.column("sup_deviation"))
        assert set(report.summary["median"]) == {"1000", "4000"}


class TestDeviationExperiment:

    def test_frequencies(self):
        report = EXPERIMENTS["deviation"]({"experiment": "deviation", "n": 500, "h": 0.5, "repeats": 8,
                                           "grid_size": 10})
        assert len(report.rows) == 6
        assert report.column("delta")[0] == pytest.approx(0.5)
        assert report.column("delta")[-1] == pytest.approx(1.0)
        assert report.column("frequency")[0] <= 0.5
        assert report.checks["frequency_nonincreasing"]
        assert report.checks["last_below_first"]
        assert report.summary["repeats"] == 8

    def test_fixed_scale(self):
        report = EXPERIMENTS["deviation"]({"experiment": "deviation", "n": 500, "h": 0.5, "repeats": 4,
                                           "grid_size": 10, "deltas": [0.5, 1.0], "deviation_scale": 1e9})
        assert report.column("frequency") == [0.0, 0.0]
        assert report.column("threshold") == [0.5e9, 1e9]


class TestMomentExperiment:

    def test_indicator_on_sphere(self):
        report = EXPERIMENTS["moments"]({"experiment": "moments", "h_grid": [0.4, 0.2], "moment_points": 3})
        assert len(report.rows) == 6
        assert report.column("far_geodesic") == [0.0] * 6
        assert report.column("far_chord") == [0.0] * 6
        assert all(value > 0 for value in report.summary["c_second"])
        assert all(report.checks.values())


class TestOperatorGapExperiment:

    def test_unit_sphere_gaps(self):
        config = {"experiment": "operator-gap", "h_grid": [0.4, 0.2, 0.1], "grid_size": 10}
        report = EXPERIMENTS["operator-gap"](config)
        largest = float(np.max(np.abs(eval_grid(get_manifold("s2"), 10)[:, 0])))
        for h, gap in zip(report.column("h"), report.column("gap_geodesic_limit")):
            assert gap == pytest.approx(largest * (1.0 / 16.0 - (1.0 - math.cos(h)) ** 2 / (4.0 * h ** 4)), rel=1e-5)
        assert all(report.checks.values())

    def test_circle(self):
        report = EXPERIMENTS["operator-gap"]({"experiment": "operator-gap", "manifold": {"name": "circle"},
                                              "h_grid": [0.4, 0.2, 0.1], "grid_size": 8})
        assert report.checks["geodesic_limit_decreasing"]
        assert report.checks["chord_geodesic_decreasing"]


class TestGeometryExperiment:

    def test_circle_rows(self):
        report = EXPERIMENTS["geometry"]({"experiment": "geometry", "manifold": {"name": "circle"}, "draws": 20000})
        assert set(report.column("check")) <= set(report.checks)
        assert report.checks["frames"]
        assert report.summary["c2_measured"] >= 0.0


class TestReportOutput:

    def test_write_with_plot_script(self, tmp_path):
        config = Config.from_dict({"experiment": "rate"})
        report = ExperimentReport("rate", ["n", "sup_error"], [[1024, 0.5], [2048, 0.25]], config,
                                  {"slope": -1.0}, {"median_decreases": True})
        files = report.write(str(tmp_path), plot_script=True)
        assert [path.rsplit("/", 1)[-1] for path in files] == ["rate.csv", "plot_rate.py", "rate.json"]
        summary = json.loads((tmp_path / "rate.json").read_text())
        assert summary["passed"] is True
        assert summary["version"] == __version__
        assert summary["config"]["experiment"] == "rate"
        assert 'set_xscale("log")' in (tmp_path / "plot_rate.py").read_text()
        assert "n,sup_error\n1024,0.5\n2048,0.25\n" in (tmp_path / "rate.csv").read_text()

    def test_no_plot_for_geometry(self, tmp_path):
        report = ExperimentReport("geometry", ["check", "quantity", "value"], [], Config())
        assert len(report.write(str(tmp_path), plot_script=True)) == 2

    def test_failed_check_marks_report(self):
        report = ExperimentReport("moments", ["h"], [], Config(), checks={"far_tail_vanishing": False})
        assert report.get_summary()["passed"] is False

    def test_run_experiment_writes_files(self, tmp_path):
        report, files = run_experiment({"experiment": "moments", "h_grid": [0.4], "moment_points": 2,
                                        "plot_script": True}, str(tmp_path))
        assert report.name == "moments"
        assert sorted(path.rsplit("/", 1)[-1] for path in files) == ["moments.csv", "moments.json", "plot_moments.py"]

    def test_config_is_echoed(self):
        report = EXPERIMENTS["operator-gap"]({"experiment": "operator-gap", "density": {"name": "tilted", "beta": 0.5},
                                              "h_grid": [0.4, 0.2], "grid_size": 4})
        assert report.get_summary()["config"]["density"] == {"name": "tilted", "beta": 0.5}


class TestDeskScale:

    @pytest.mark.slow
    def test_operator_gaps_halve(self):
        report = EXPERIMENTS["operator-gap"]({"experiment": "operator-gap", "h_grid": [0.4, 0.2, 0.1, 0.05],
                                              "grid_size": 20, "workers": 4})
        assert all(report.checks.values())

    @pytest.mark.slow
    def test_radius_concentration(self):
        report = EXPERIMENTS["concentration"]({"experiment": "concentration", "n_grid": [5000, 20000, 40000],
                                               "repeats": 20, "workers": 4})
        medians = report.summary["median"]
        assert medians["20000"] <= 0.2
        assert medians["40000"] < medians["5000"]

    @pytest.mark.slow
    def test_knn_rate_on_fixed_grid(self):
        # a fixed grid keeps the number of evaluation points independent of n
        report = EXPERIMENTS["knn-rate"]({"experiment": "knn-rate", "density": {"name": "tilted", "beta": 0.5},
                                          "n_grid": [2 ** e for e in range(12, 16)], "repeats": 50,
                                          "grid_size": 1000, "include_sample_points": False, "workers": 4})
        assert report.column("k")[0] == math.ceil(4096 ** (2.0 / 3.0))
        assert report.checks["median_strictly_decreasing"]

    @pytest.mark.slow
    def test_deviation_frequencies(self):
        report = EXPERIMENTS["deviation"]({"experiment": "deviation", "n": 2 ** 13, "repeats": 200, "workers": 4})
        assert report.summary["h"] == pytest.approx(2 ** (-13.0 / 6.0))
        assert len(report.rows) == 6
        assert report.checks["frequency_nonincreasing"]
        assert report.checks["last_below_first"]
        assert report.checks["negative_rank_correlation"]
