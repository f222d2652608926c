"""Monte-Carlo experiments: simulate, filter, score, tabulate.

Seeds follow a splittable scheme: run ``r`` simulates its trajectory from
``SeedSequence(base_seed, spawn_key=(r, 0))`` and every filter at that run
draws from ``SeedSequence(base_seed, spawn_key=(r, 1))``.  All algorithms at a
sweep point therefore see the same measurements (paired comparison), and
adding runs never changes earlier ones.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError
from .filters import ALGORITHMS, FilterConfig, kalman_oracle, make_filter
from .model import benchmark_model, default_linear_model, simulate

CSV_COLUMNS = (
    "algorithm", "n_particles", "n_iterations", "sigma_e", "sigma_w_l", "sigma_w_n", "run",
    "rmse_l", "rmse_n", "tracking_losses", "cholesky_count", "inversion_count", "wall_ms", "seed",
)
SWEEP_AXES = ("n_particles", "n_iterations", "sigma_e", "sigma_w")
MODELS = ("benchmark", "linear")
# Reference pseudo-algorithms: the true states, and the exact filter on linear models.
ORACLES = ("truth", "kalman")

# Nonlinear-state error above which a step counts as lost track.  Ten times the
# long-run RMSE_N of the marginalized filter with 300 particles on the default
# benchmark (measured 0.0124 over 50 runs of 200 steps, base seed 0).
DEFAULT_LOSS_THRESHOLD = 0.124
# Leading steps left out of the loss count.  Until the second measurement the
# nonlinear estimate is essentially the prior mean, so a large error there says
# nothing about whether the filter has lost the track.
DEFAULT_LOSS_BURN_IN = 2


@dataclass
class ExperimentConfig:
    algorithms: tuple = ("mpf",)
    model: str = "benchmark"
    n_runs: int = 50
    horizon: int = 200
    base_seed: int = 0
    sigma_e: float = 1e-2
    sigma_w_l: float = 5e-3
    sigma_w_n: float = 5e-3
    init_var_linear: float = 1e-2
    init_var_nonlinear: float = 1e-2
    filter: FilterConfig = field(default_factory=FilterConfig)
    per_filter: dict = field(default_factory=dict)
    sweep_axis: Optional[str] = None
    sweep_values: tuple = ()
    loss_threshold: float = DEFAULT_LOSS_THRESHOLD
    loss_burn_in: int = DEFAULT_LOSS_BURN_IN
    timing: bool = False

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        self.sweep_values = tuple(self.sweep_values)
        self.validate()

    def validate(self):
        if not self.algorithms:
            raise ConfigError("algorithms", "at least one algorithm is required")
        for a in self.algorithms:
            if a not in ALGORITHMS and a not in ORACLES:
                raise ConfigError("algorithms", f"unknown algorithm {a!r}")
        if "kalman" in self.algorithms and self.model != "linear":
            raise ConfigError("algorithms", "the exact Kalman filter needs the linear model")
        if self.model not in MODELS:
            raise ConfigError("model", f"must be one of {MODELS}")
        if int(self.n_runs) != self.n_runs or self.n_runs < 1:
            raise ConfigError("n_runs", "must be an integer >= 1")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon", "must be an integer >= 1")
        for key in ("sigma_e", "sigma_w_l", "sigma_w_n", "init_var_linear", "init_var_nonlinear",
                    "loss_threshold"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be positive")
        if int(self.loss_burn_in) != self.loss_burn_in or self.loss_burn_in < 0:
            raise ConfigError("loss_burn_in", "must be an integer >= 0")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise ConfigError("sweep", f"axis must be one of {SWEEP_AXES}")
            if not self.sweep_values:
                raise ConfigError("sweep", "no sweep values given")
            if any(not v > 0 for v in self.sweep_values):
                raise ConfigError("sweep", "sweep values must be positive")
        for name, over in self.per_filter.items():
            self.filter.replace(**over)
        self.filter.validate()
        return self

    def points(self):
        """Parameter overrides for every sweep point (one empty point without a sweep)."""
        if self.sweep_axis is None:
            return [{}]
        return [{self.sweep_axis: v} for v in self.sweep_values]


@dataclass
class RunRecord:
    algorithm: str
    n_particles: int
    n_iterations: int
    sigma_e: float
    sigma_w_l: float
    sigma_w_n: float
    run: int
    rmse_l: float
    rmse_n: float
    tracking_losses: int
    cholesky_count: int
    inversion_count: int
    wall_ms: float
    seed: int
    error: Optional[str] = None

    @property
    def point(self):
        return (self.n_particles, self.n_iterations, self.sigma_e, self.sigma_w_l, self.sigma_w_n)


@dataclass
class RmseReport:
    """Aggregate over runs: RMSE is the square root of the mean per-run MSE."""

    rmse_linear: float
    rmse_nonlinear: float
    tracking_loss_count: int
    per_run_linear: np.ndarray
    per_run_nonlinear: np.ndarray
    failed_runs: int = 0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list

    def aggregate(self):
        """One aggregate :class:`RunRecord` (``run == -1``) per algorithm and sweep point."""
        groups = {}
        for rec in self.records:
            groups.setdefault((rec.algorithm, rec.point), []).append(rec)
        out = []
        for (alg, point), recs in groups.items():
            rep = report(recs)
            ok = [r for r in recs if r.error is None]
            first = recs[0]
            out.append(RunRecord(
                alg, *point, -1, rep.rmse_linear, rep.rmse_nonlinear, rep.tracking_loss_count,
                sum(r.cholesky_count for r in ok), sum(r.inversion_count for r in ok),
                float(np.mean([r.wall_ms for r in ok])) if ok else math.nan, first.seed,
            ))
        return out

    def table(self):
        return list(self.records) + self.aggregate()

    def report(self, algorithm, **point):
        recs = [r for r in self.records if r.algorithm == algorithm
                and all(getattr(r, k) == v for k, v in point.items())]
        if not recs:
            raise KeyError(f"no runs for {algorithm} at {point}")
        return report(recs)

    def delta_c(self, algorithm, baseline="mpf"):
        """Percentage wall-time change of ``algorithm`` relative to ``baseline`` per sweep point.

        Points are matched ignoring the iteration count, which only the turbo
        filter reads.
        """
        def key(point):
            return (point[0],) + point[2:]

        agg = {(r.algorithm, key(r.point)): r for r in self.aggregate()}
        out = {}
        for (alg, point), rec in agg.items():
            if alg != algorithm or (baseline, point) not in agg:
                continue
            base = agg[(baseline, point)].wall_ms
            out[point] = (rec.wall_ms - base) / base * 100.0 if base > 0 else math.nan
        return out


def report(records) -> RmseReport:
    ok = [r for r in records if r.error is None]
    mse_l = np.array([r.rmse_l ** 2 for r in ok])
    mse_n = np.array([r.rmse_n ** 2 for r in ok])
    if not ok:
        return RmseReport(math.nan, math.nan, 0, mse_l, mse_n, len(records))
    return RmseReport(
        float(np.sqrt(mse_l.mean())), float(np.sqrt(mse_n.mean())),
        int(sum(r.tracking_losses for r in ok)),
        np.sqrt(mse_l), np.sqrt(mse_n), len(records) - len(ok),
    )


def count_losses(err_n, threshold, burn_in=0):
    """Number of excursions of the nonlinear error norm above ``threshold``.

    The first ``burn_in`` steps are ignored.
    """
    above = np.asarray(err_n)[burn_in:] > threshold
    if above.size == 0:
        return 0
    return int(above[0]) + int(np.count_nonzero(above[1:] & ~above[:-1]))


# ----------------------------------------------------------------------------
# execution
# ----------------------------------------------------------------------------


def _seed(base, run, stream):
    return np.random.SeedSequence(base, spawn_key=(run, stream))


def _build_model(cfg: ExperimentConfig, point):
    sigma_e = point.get("sigma_e", cfg.sigma_e)
    sw = point.get("sigma_w")
    sigma_w_l = sw if sw is not None else cfg.sigma_w_l
    sigma_w_n = sw if sw is not None else cfg.sigma_w_n
    if cfg.model == "linear":
        lin = default_linear_model()
        return lin.to_clg(), lin, (sigma_e, sigma_w_l, sigma_w_n)
    model = benchmark_model(sigma_w_l, sigma_w_n, sigma_e, cfg.init_var_linear, cfg.init_var_nonlinear)
    return model, None, (sigma_e, sigma_w_l, sigma_w_n)


def _filter_config(cfg: ExperimentConfig, alg, point):
    fc = cfg.filter.replace(**cfg.per_filter.get(alg, {}))
    over = {k: int(v) for k, v in point.items() if k in ("n_particles", "n_iterations")}
    if alg == "tf" and "n_iterations" not in over and "n_iterations" not in cfg.per_filter.get(alg, {}) \
            and fc.n_iterations == 1:
        over["n_iterations"] = 2
    return fc.replace(**over)


def _run_job(args):
    """All algorithms on one trajectory.  Top-level so worker processes can pickle it."""
    cfg, point, run = args
    model, lin, sigmas = _build_model(cfg, point)
    traj = simulate(model, cfg.horizon, np.random.default_rng(_seed(cfg.base_seed, run, 0)))
    records = []
    for alg in cfg.algorithms:
        fc = _filter_config(cfg, alg, point)
        chol = inv = 0
        wall = 0.0
        err = None
        try:
            if alg == "truth":
                est_l, est_n = traj.linear_states, traj.nonlinear_states
                losses = 0
            elif alg == "kalman":
                k = kalman_oracle(lin, traj.measurements)
                est_l, est_n = k.linear_means, k.nonlinear_means
                losses = 0
            else:
                filt = make_filter(alg, model, fc)
                out = filt.run(traj.measurements, np.random.default_rng(_seed(cfg.base_seed, run, 1)),
                               timing=cfg.timing)
                est_l, est_n = out.est_linear, out.est_nonlinear
                chol, inv = out.counters.cholesky_count, out.counters.inversion_count
                wall = out.counters.wall_time * 1e3 if cfg.timing else 0.0
                err_n = np.linalg.norm(est_n - traj.nonlinear_states, axis=1)
                losses = count_losses(err_n, cfg.loss_threshold, cfg.loss_burn_in) + out.weight_underflows
            rmse_l = float(np.sqrt(np.mean((est_l - traj.linear_states) ** 2)))
            rmse_n = float(np.sqrt(np.mean((est_n - traj.nonlinear_states) ** 2)))
        except Exception as exc:  # noqa: BLE001 - a failed run is recorded, not fatal
            rmse_l = rmse_n = math.nan
            losses = 0
            err = f"{type(exc).__name__}: {exc}"
        records.append(RunRecord(alg, fc.n_particles, fc.n_iterations, *sigmas, run, rmse_l, rmse_n,
                                 losses, chol, inv, wall, cfg.base_seed, err))
    return records


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run every (sweep point, run) job; results are merged in a fixed order."""
    cfg.validate()
    tasks = [(cfg, point, r) for point in cfg.points() for r in range(cfg.n_runs)]
    if jobs <= 1:
        chunks = [_run_job(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_job, tasks))
    order = {a: i for i, a in enumerate(cfg.algorithms)}
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: (r.point, order[r.algorithm], r.run))
    return ExperimentResult(cfg, records)


# ----------------------------------------------------------------------------
# output
# ----------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def format_csv(table, metadata=None) -> str:
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in table:
        writer.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(table, path, metadata=None):
    """Write run and aggregate rows; ``metadata`` goes into leading ``#`` comment lines."""
    text = format_csv(table, metadata)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def read_csv(path):
    """Read a table written by :func:`write_csv` back into :class:`RunRecord` objects."""
    types = {f.name: f.type for f in fields(RunRecord)}
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        kw = {}
        for k, v in row.items():
            t = types[k]
            kw[k] = v if t == "str" else (int(v) if t == "int" else float(v))
        out.append(RunRecord(**kw))
    return out


def plot_curves(table, axis):
    """``{algorithm: [(x, rmse_l, rmse_n), ...]}`` from aggregate rows, sorted by ``x``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    column = "sigma_w_l" if axis == "sigma_w" else axis
    curves = {}
    for rec in table:
        if rec.run != -1:
            continue
        curves.setdefault(rec.algorithm, []).append((getattr(rec, column), rec.rmse_l, rec.rmse_n))
    return {alg: sorted(pts) for alg, pts in curves.items()}


def emit_plot_data(table, axis, out_dir, prefix="rmse", metadata=None):
    """One ``x,rmse_l,rmse_n`` file per algorithm; each file holds both metric curves."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for alg, pts in plot_curves(table, axis).items():
        path = os.path.join(out_dir, f"{prefix}_{axis}_{alg}.csv")
        buf = io.StringIO()
        for key, value in (metadata or {}).items():
            buf.write(f"# {key}={value}\n")
        buf.write("x,rmse_l,rmse_n\n")
        for x, rl, rn in pts:
            buf.write(f"{_fmt(float(x))},{_fmt(rl)},{_fmt(rn)}\n")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        paths.append(path)
    return paths
