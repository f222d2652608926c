import math

import numpy as np
import pytest

from clgfilter.bench import (
    CSV_COLUMNS,
    ExperimentConfig,
    count_losses,
    emit_plot_data,
    format_csv,
    plot_curves,
    read_csv,
    run_experiment,
    write_csv,
)
from clgfilter.errors import ConfigError
from clgfilter.filters import FilterConfig


@pytest.fixture(scope="module")
def small_result():
    cfg = ExperimentConfig(algorithms=("truth", "mpf", "smpf1"), n_runs=3, horizon=30,
                           filter=FilterConfig(n_particles=20),
                           sweep_axis="n_particles", sweep_values=(10, 20))
    return run_experiment(cfg)


def test_truth_oracle_has_zero_error(small_result):
    rep = small_result.report("truth")
    assert rep.rmse_linear == 0.0 and rep.rmse_nonlinear == 0.0


def test_rows_and_aggregates(small_result):
    table = small_result.table()
    runs = [r for r in table if r.run >= 0]
    agg = [r for r in table if r.run == -1]
    assert len(runs) == 3 * 2 * 3 and len(agg) == 3 * 2
    for a in agg:
        members = [r for r in runs if r.algorithm == a.algorithm and r.point == a.point]
        assert a.rmse_n == pytest.approx(math.sqrt(np.mean([r.rmse_n ** 2 for r in members])))
        assert a.cholesky_count == sum(r.cholesky_count for r in members)
    mpf10 = [r for r in runs if r.algorithm == "mpf" and r.n_particles == 10]
    assert all(r.cholesky_count == 10 * 30 for r in mpf10)


def test_runs_are_paired_across_algorithms(small_result):
    seeds = {(r.algorithm, r.run): r.seed for r in small_result.records if r.n_particles == 10}
    assert seeds[("mpf", 1)] == seeds[("smpf1", 1)] == seeds[("truth", 1)]


def test_parallel_matches_serial(small_result):
    par = run_experiment(small_result.config, jobs=2)
    assert format_csv(par.table()) == format_csv(small_result.table())


def test_csv_roundtrip(tmp_path, small_result):
    path = write_csv(small_result.table(), tmp_path / "out.csv", {"seed": 0})
    text = path.read_text(encoding="utf-8")
    assert text.startswith("# seed=0\n" + ",".join(CSV_COLUMNS) + "\n")
    back = read_csv(path)
    assert [(r.algorithm, r.run, r.rmse_n) for r in back] == \
        [(r.algorithm, r.run, r.rmse_n) for r in small_result.table()]


def test_plot_files(tmp_path, small_result):
    curves = plot_curves(small_result.table(), "n_particles")
    assert [x for x, _, _ in curves["mpf"]] == [10, 20]
    paths = emit_plot_data(small_result.table(), "n_particles", tmp_path)
    assert sorted(p.rsplit("/", 1)[-1] for p in paths) == [
        "rmse_n_particles_mpf.csv", "rmse_n_particles_smpf1.csv", "rmse_n_particles_truth.csv"]
    with pytest.raises(ValueError):
        plot_curves(small_result.table(), "horizon")


def test_kalman_oracle_on_linear_model():
    res = run_experiment(ExperimentConfig(algorithms=("kalman", "mpf"), model="linear", n_runs=2,
                                          horizon=40, filter=FilterConfig(n_particles=100)))
    assert res.report("mpf").rmse_nonlinear <= 1.3 * res.report("kalman").rmse_nonlinear


def test_count_losses_counts_onsets_after_burn_in():
    err = np.array([0.5, 0.0, 0.2, 0.3, 0.0, 0.4])
    assert count_losses(err, 0.1) == 3
    assert count_losses(err, 0.1, burn_in=1) == 2
    assert count_losses(err, 0.1, burn_in=10) == 0


@pytest.mark.parametrize(
    "kw,key",
    [
        (dict(algorithms=()), "algorithms"),
        (dict(algorithms=("pf",)), "algorithms"),
        (dict(algorithms=("kalman",)), "algorithms"),
        (dict(n_runs=0), "n_runs"),
        (dict(horizon=0), "horizon"),
        (dict(sigma_e=0.0), "sigma_e"),
        (dict(sweep_axis="horizon", sweep_values=(1,)), "sweep"),
        (dict(sweep_axis="sigma_e", sweep_values=()), "sweep"),
        (dict(loss_burn_in=-1), "loss_burn_in"),
        (dict(model="other"), "model"),
    ],
)
def test_invalid_experiments(kw, key):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig(**kw)
    assert err.value.key == key


def test_sigma_sweeps_rebuild_the_model():
    res = run_experiment(ExperimentConfig(algorithms=("mpf",), n_runs=1, horizon=20,
                                          filter=FilterConfig(n_particles=20),
                                          sweep_axis="sigma_e", sweep_values=(1e-3, 5e-2)))
    lo, hi = (res.report("mpf", sigma_e=v).rmse_nonlinear for v in (1e-3, 5e-2))
    assert lo < hi
