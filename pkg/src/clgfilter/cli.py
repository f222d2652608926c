"""Command-line interface.

Subcommands::

    clgfilter simulate --steps 200 --seed 1 --out traj.csv
    clgfilter filter --alg mpf --np 200 --traj traj.csv --out est.csv
    clgfilter bench --algs mpf,smpf1,tf --runs 20 --out bench.csv
    clgfilter sweep --sweep np=50,100,200,300 --algs mpf,smpf1 --out sweep.csv

Settings can also come from a config file (``--config FILE``) holding
``key = value`` lines; ``#`` starts a comment.  Keys are the long option
names with dashes or underscores (``n_particles``, ``sigma-e``, ...).  Command
line flags take precedence over the file.  Relative output paths are placed
in ``$CLGFILTER_OUTPUT_DIR`` when that variable is set.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys

import numpy as np

from . import bench
from .errors import ConfigError, ModelValidationError
from .filters import ALGORITHMS, FilterConfig, make_filter
from .model import Trajectory, benchmark_model, default_linear_model, simulate

OUTPUT_DIR_ENV = "CLGFILTER_OUTPUT_DIR"

# key -> (parser, default).  Aliases map short flag names onto canonical keys.
SCHEMA = {
    "model": (str, "benchmark"),
    "steps": (int, 200),
    "seed": (int, 0),
    "out": (str, None),
    "traj": (str, None),
    "alg": (str, "mpf"),
    "algs": (str, "mpf,smpf1,smpf2,tf"),
    "n_particles": (int, 200),
    "n_iterations": (int, None),
    "runs": (int, 50),
    "sigma_e": (float, 1e-2),
    "sigma_w_l": (float, 5e-3),
    "sigma_w_n": (float, 5e-3),
    "init_var_linear": (float, 1e-2),
    "init_var_nonlinear": (float, 1e-2),
    "resample_scheme": (str, "systematic"),
    "jitter_scale": (float, 1e-6),
    "drop_det": (lambda s: _parse_bool(s), True),
    "drop_d3": (lambda s: _parse_bool(s), True),
    "loss_threshold": (float, bench.DEFAULT_LOSS_THRESHOLD),
    "loss_burn_in": (int, bench.DEFAULT_LOSS_BURN_IN),
    "sweep": (str, None),
    "plot_dir": (str, None),
    "jobs": (int, 1),
    "timing": (lambda s: _parse_bool(s), False),
}
ALIASES = {"np": "n_particles", "nit": "n_iterations", "horizon": "steps", "n_runs": "runs",
           "base_seed": "seed"}
SWEEP_KEYS = {"np": "n_particles", "n_particles": "n_particles", "nit": "n_iterations",
              "n_iterations": "n_iterations", "sigma_e": "sigma_e", "sigma_w": "sigma_w"}


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _canonical(key):
    key = key.strip().replace("-", "_")
    return ALIASES.get(key, key)


def read_config(path):
    """Parse a ``key = value`` file into raw strings; unknown keys are errors."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = _canonical(key)
            if key not in SCHEMA:
                raise ConfigError(key, "unknown configuration key")
            out[key] = value.strip()
    return out


def parse_sweep(spec):
    """``np=50,100`` or ``sigma_e=1e-3:5e-2:log:6`` -> (axis, values)."""
    if "=" not in spec:
        raise ConfigError("sweep", "expected AXIS=VALUES")
    axis, values = spec.split("=", 1)
    axis = axis.strip()
    if axis not in SWEEP_KEYS:
        raise ConfigError("sweep", f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_KEYS)}")
    axis = SWEEP_KEYS[axis]
    values = values.strip()
    try:
        if ":" in values:
            parts = values.split(":")
            if len(parts) != 4 or parts[2] not in ("lin", "log"):
                raise ConfigError("sweep", "range form is START:STOP:lin|log:COUNT")
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[3])
            if count < 1:
                raise ConfigError("sweep", "COUNT must be >= 1")
            if parts[2] == "log":
                if start <= 0 or stop <= 0:
                    raise ConfigError("sweep", "log ranges need positive bounds")
                vals = np.geomspace(start, stop, count)
            else:
                vals = np.linspace(start, stop, count)
            vals = [float(v) for v in vals]
        else:
            vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError("sweep", str(exc)) from None
    if axis in ("n_particles", "n_iterations"):
        if any(v != int(v) for v in vals):
            raise ConfigError("sweep", f"{axis} values must be integers")
        vals = [int(v) for v in vals]
    if not vals or any(not v > 0 for v in vals):
        raise ConfigError("sweep", "sweep values must be positive")
    return axis, tuple(vals)


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------


def _add_common(p, keys):
    flags = {
        "model": (["--model"], dict(choices=bench.MODELS, help="built-in model (default benchmark)")),
        "steps": (["--steps", "--horizon"], dict(help="trajectory length T (default 200)")),
        "seed": (["--seed"], dict(help="base random seed (default 0)")),
        "out": (["--out"], dict(help="output file")),
        "traj": (["--traj"], dict(help="trajectory CSV written by 'simulate'")),
        "alg": (["--alg"], dict(choices=sorted(ALGORITHMS), help="filter to run (default mpf)")),
        "algs": (["--algs"], dict(help="comma separated algorithms")),
        "n_particles": (["--np", "--n-particles"], dict(help="number of particles (default 200)")),
        "n_iterations": (["--nit", "--n-iterations"], dict(help="turbo iterations (default 2 for tf)")),
        "runs": (["--runs"], dict(help="Monte-Carlo runs (default 50)")),
        "sigma_e": (["--sigma-e"], dict(help="measurement noise std (default 1e-2)")),
        "sigma_w_l": (["--sigma-w-l"], dict(help="linear process noise std (default 5e-3)")),
        "sigma_w_n": (["--sigma-w-n"], dict(help="nonlinear process noise std (default 5e-3)")),
        "init_var_linear": (["--init-var-linear"], dict(help="initial linear-state variance")),
        "init_var_nonlinear": (["--init-var-nonlinear"], dict(help="initial nonlinear-state variance")),
        "resample_scheme": (["--resample-scheme"], dict(choices=("systematic", "multinomial"))),
        "jitter_scale": (["--jitter-scale"], dict(help="relative jitter (default 1e-6)")),
        "drop_det": (["--drop-det"], dict(help="drop determinant in weights (true/false)")),
        "drop_d3": (["--drop-d3"], dict(help="drop the extrinsic-weight normalizer (true/false)")),
        "loss_threshold": (["--loss-threshold"], dict(help="nonlinear error counted as lost track")),
        "loss_burn_in": (["--loss-burn-in"], dict(help="leading steps left out of the loss count")),
        "sweep": (["--sweep"], dict(help="AXIS=v1,v2,... or AXIS=start:stop:lin|log:count")),
        "plot_dir": (["--plot-dir"], dict(help="directory for per-algorithm curve files")),
        "jobs": (["--jobs"], dict(help="worker processes (default 1, serial)")),
        "timing": (["--timing"], dict(nargs="?", const="true", help="record wall-clock times")),
    }
    p.add_argument("--config", help="key = value configuration file")
    for key in keys:
        names, kw = flags[key]
        p.add_argument(*names, dest=key, default=None, **kw)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clgfilter",
        description="Particle filters for conditionally linear Gaussian models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    model_keys = ["model", "sigma_e", "sigma_w_l", "sigma_w_n", "init_var_linear", "init_var_nonlinear"]
    filt_keys = ["n_particles", "n_iterations", "resample_scheme", "jitter_scale", "drop_det", "drop_d3"]
    _add_common(sub.add_parser("simulate", help="simulate and save a trajectory"),
                model_keys + ["steps", "seed", "out"])
    _add_common(sub.add_parser("filter", help="run one filter on a trajectory"),
                model_keys + filt_keys + ["alg", "traj", "steps", "seed", "out"])
    exp_keys = model_keys + filt_keys + ["algs", "runs", "steps", "seed", "out", "plot_dir", "jobs",
                                         "timing", "loss_threshold", "loss_burn_in"]
    _add_common(sub.add_parser("bench", help="Monte-Carlo comparison at one operating point"),
                exp_keys + ["sweep"])
    _add_common(sub.add_parser("sweep", help="Monte-Carlo comparison over a parameter sweep"),
                exp_keys + ["sweep"])
    return parser


def resolve(args):
    """Merge defaults, config file and flags; convert and validate every value."""
    raw = {}
    if args.config:
        raw.update(read_config(args.config))
    for key in SCHEMA:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    settings = {}
    for key, (conv, default) in SCHEMA.items():
        if key in raw:
            try:
                settings[key] = conv(raw[key]) if isinstance(raw[key], str) else raw[key]
            except ValueError as exc:
                raise ConfigError(key, f"invalid value {raw[key]!r} ({exc})") from None
        else:
            settings[key] = default
    if settings["n_particles"] < 1:
        raise ConfigError("n_particles", f"must be >= 1, got {settings['n_particles']}")
    if settings["n_iterations"] is not None and settings["n_iterations"] < 1:
        raise ConfigError("n_iterations", f"must be >= 1, got {settings['n_iterations']}")
    if settings["steps"] < 1:
        raise ConfigError("steps", "must be >= 1")
    if settings["runs"] < 1:
        raise ConfigError("runs", "must be >= 1")
    if settings["jobs"] < 1:
        raise ConfigError("jobs", "must be >= 1")
    if settings["model"] not in bench.MODELS:
        raise ConfigError("model", f"must be one of {bench.MODELS}")
    if settings["alg"] not in ALGORITHMS:
        raise ConfigError("alg", f"must be one of {sorted(ALGORITHMS)}")
    for key in ("sigma_e", "sigma_w_l", "sigma_w_n", "init_var_linear", "init_var_nonlinear"):
        if not settings[key] > 0:
            raise ConfigError(key, "must be positive")
    return settings


def _out_path(path, default_name):
    path = path or default_name
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not os.path.isabs(path):
        path = os.path.join(base, path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _model(s):
    if s["model"] == "linear":
        return default_linear_model().to_clg()
    return benchmark_model(s["sigma_w_l"], s["sigma_w_n"], s["sigma_e"],
                           s["init_var_linear"], s["init_var_nonlinear"])


def _filter_config(s, alg=None):
    nit = s["n_iterations"]
    if nit is None:
        nit = 2 if alg == "tf" else 1
    return FilterConfig(
        n_particles=s["n_particles"], n_iterations=nit, resample_scheme=s["resample_scheme"],
        jitter_scale=s["jitter_scale"], drop_det_in_weights=s["drop_det"], drop_D3_factor=s["drop_d3"],
    )


def _f(v):
    return format(float(v), ".17g")


def _meta(s, keys):
    return "".join(f"# {k}={s[k]}\n" for k in keys)


# ----------------------------------------------------------------------------
# trajectories on disk
# ----------------------------------------------------------------------------


def trajectory_csv(traj: Trajectory, header=""):
    dl, dn, p = traj.linear_states.shape[1], traj.nonlinear_states.shape[1], traj.measurements.shape[1]
    cols = (["l"] + [f"xl{i}" for i in range(dl)] + [f"xn{i}" for i in range(dn)]
            + [f"y{i}" for i in range(p)])
    buf = io.StringIO()
    buf.write(header)
    buf.write(",".join(cols) + "\n")
    for i in range(len(traj)):
        row = np.concatenate([traj.linear_states[i], traj.nonlinear_states[i], traj.measurements[i]])
        buf.write(",".join([str(i + 1)] + [_f(v) for v in row]) + "\n")
    return buf.getvalue()


def load_trajectory(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    idx = {k: [i for i, c in enumerate(header) if c.startswith(k)] for k in ("xl", "xn", "y")}
    if not idx["y"]:
        raise ConfigError("traj", f"{path} has no measurement columns")
    return Trajectory(data[:, idx["xl"]], data[:, idx["xn"]], data[:, idx["y"]])


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

_MODEL_META = ("model", "seed", "steps", "sigma_e", "sigma_w_l", "sigma_w_n",
               "init_var_linear", "init_var_nonlinear")


def cmd_simulate(s):
    model = _model(s)
    out = _out_path(s["out"], "trajectory.csv")
    traj = simulate(model, s["steps"], np.random.default_rng(s["seed"]))
    _write(out, trajectory_csv(traj, _meta(s, _MODEL_META)))
    print(f"wrote {out}")
    return 0


def cmd_filter(s):
    model = _model(s)
    cfg = _filter_config(s, s["alg"])
    if s["traj"]:
        traj = load_trajectory(s["traj"])
        if traj.measurements.shape[1] != model.dim_meas:
            raise ConfigError("traj", "measurement dimension does not match the model")
        s = dict(s, steps=len(traj))
    else:
        traj = simulate(model, s["steps"], np.random.default_rng(s["seed"]))
    filt = make_filter(s["alg"], model, cfg)
    # The filter stream is split from the trajectory seed so both can share one seed value.
    rng = np.random.default_rng(np.random.SeedSequence(s["seed"], spawn_key=(0, 1)))
    res = filt.run(traj.measurements, rng, timing=False)
    out = _out_path(s["out"], f"estimates_{s['alg']}.csv")
    dl, dn = model.dim_linear, model.dim_nonlinear
    cols = (["l"] + [f"est_xl{i}" for i in range(dl)] + [f"est_xn{i}" for i in range(dn)]
            + ["ess", "weight_underflow"])
    buf = io.StringIO()
    buf.write(_meta(s, _MODEL_META + ("alg", "n_particles", "traj")))
    buf.write(f"# n_iterations={cfg.n_iterations}\n")
    buf.write(f"# cholesky_count={res.counters.cholesky_count}\n")
    buf.write(f"# inversion_count={res.counters.inversion_count}\n")
    have_truth = traj.linear_states.shape[1] == dl and traj.nonlinear_states.shape[1] == dn
    if have_truth:
        rmse_l = math.sqrt(np.mean((res.est_linear - traj.linear_states) ** 2))
        rmse_n = math.sqrt(np.mean((res.est_nonlinear - traj.nonlinear_states) ** 2))
        buf.write(f"# rmse_l={_f(rmse_l)}\n# rmse_n={_f(rmse_n)}\n")
    buf.write(",".join(cols) + "\n")
    for i in range(len(traj)):
        d = res.diagnostics[i]
        vals = [str(i + 1)] + [_f(v) for v in res.est_linear[i]] + [_f(v) for v in res.est_nonlinear[i]]
        vals += [_f(d.ess), str(int(d.tracking_loss))]
        buf.write(",".join(vals) + "\n")
    _write(out, buf.getvalue())
    print(f"wrote {out}")
    if have_truth:
        print(f"rmse_l={rmse_l:.6g} rmse_n={rmse_n:.6g}")
    return 0


def _experiment(s, require_sweep):
    algs = tuple(a.strip() for a in s["algs"].split(",") if a.strip())
    for a in algs:
        if a not in ALGORITHMS and a not in bench.ORACLES:
            raise ConfigError("algs", f"unknown algorithm {a!r}")
    axis, values = (None, ())
    if s["sweep"]:
        axis, values = parse_sweep(s["sweep"])
    elif require_sweep:
        raise ConfigError("sweep", "the sweep command needs --sweep AXIS=VALUES")
    per_filter = {}
    if s["n_iterations"] is None and "tf" in algs:
        per_filter["tf"] = {"n_iterations": 2}
    return bench.ExperimentConfig(
        algorithms=algs, model=s["model"], n_runs=s["runs"], horizon=s["steps"], base_seed=s["seed"],
        sigma_e=s["sigma_e"], sigma_w_l=s["sigma_w_l"], sigma_w_n=s["sigma_w_n"],
        init_var_linear=s["init_var_linear"], init_var_nonlinear=s["init_var_nonlinear"],
        filter=_filter_config(s), per_filter=per_filter, sweep_axis=axis, sweep_values=values,
        loss_threshold=s["loss_threshold"], loss_burn_in=s["loss_burn_in"], timing=s["timing"],
    )


def cmd_experiment(s, require_sweep):
    cfg = _experiment(s, require_sweep)
    out = _out_path(s["out"], "sweep.csv" if require_sweep else "bench.csv")
    result = bench.run_experiment(cfg, jobs=s["jobs"])
    meta = {k: s[k] for k in ("seed", "model", "algs", "runs", "steps", "n_particles", "sigma_e",
                              "sigma_w_l", "sigma_w_n", "sweep")}
    table = result.table()
    bench.write_csv(table, out, meta)
    print(f"wrote {out}")
    if cfg.sweep_axis and s["plot_dir"]:
        plot_dir = _out_path(os.path.join(s["plot_dir"], ""), "")
        for path in bench.emit_plot_data(table, cfg.sweep_axis, plot_dir or ".", metadata=meta):
            print(f"wrote {path}")
    failed = [r for r in result.records if r.error]
    for r in table:
        if r.run == -1:
            print(f"{r.algorithm:6s} np={r.n_particles:<4d} nit={r.n_iterations} sigma_e={r.sigma_e:.3g} "
                  f"rmse_l={r.rmse_l:.5g} rmse_n={r.rmse_n:.5g} losses={r.tracking_losses}")
    if failed:
        print(f"{len(failed)} run(s) failed; first: {failed[0].error}", file=sys.stderr)
    if cfg.timing:
        for alg in cfg.algorithms:
            if alg != "mpf" and "mpf" in cfg.algorithms:
                for point, dc in result.delta_c(alg).items():
                    print(f"delta_c({alg}) at np={point[0]}: {dc:+.1f}%")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "bench": lambda s: cmd_experiment(s, False),
    "sweep": lambda s: cmd_experiment(s, True),
}


def parse_and_run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = resolve(args)
        return COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"error: key={exc.key} message={str(exc).split(': ', 1)[-1]}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (ModelValidationError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(parse_and_run())


if __name__ == "__main__":
    main()
