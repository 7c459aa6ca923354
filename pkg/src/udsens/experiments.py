"""Experiment drivers behind the command-line interface.

Every driver takes a resolved :class:`ExperimentConfig`, writes CSV tables and
a JSON summary into ``config.out`` and returns an in-memory report. Reports
embed the full config, the seeds and the package version, and contain no
timestamps, so identical configs give byte-identical files.
"""

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .linalg import solve_unit_upper_right, split_ldu
from .mle import ENGINES, MinimizeOptions, Objective, minimize, scan
from .models import (
    build_model,
    example1_static,
    illcond_model,
    load_trajectory,
    replication_seed,
    save_trajectory,
    simulate,
)
from .mwgs import mwgs_derivative, mwgs_orthogonalize

EXPERIMENTS = ("verify-lemma", "scan", "monte-carlo", "filter-run", "simulate")
DEFAULT_DELTAS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
FULL_SCALE_REPLICATIONS = 250
LEMMA_TOL = 5e-5
CONSISTENCY_TOL = 1e-10

# Per-experiment defaults filled in by ExperimentConfig.resolved().
_DEFAULT_MODEL = {"scan": "ins", "monte-carlo": "illcond", "simulate": "illcond"}
_DEFAULT_N = {"scan": 50000, "monte-carlo": 1000, "simulate": 1000}
_DEFAULT_THETA_TRUE = {"ins": [2e-4], "illcond": [7.0]}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class GridSpec:
    start: float = 1e-5
    stop: float = 4e-4
    step: float = 1e-5

    def points(self):
        n = int(round((self.stop - self.start) / self.step)) + 1
        return np.linspace(self.start, self.stop, n)


@dataclass
class ExperimentConfig:
    """Everything needed to rerun an experiment.

    ``None`` fields take per-experiment defaults in :meth:`resolved`.
    ``deltas`` drives the Monte Carlo sweep; single-model experiments on the
    ill-conditioned family use its first entry.
    """

    experiment: str = "monte-carlo"
    model: Optional[str] = None
    constants: dict = field(default_factory=dict)
    deltas: tuple = DEFAULT_DELTAS
    n_steps: Optional[int] = None
    seed: int = 0
    replications: int = 25
    full_scale: bool = False
    engine: str = "both"
    out: str = "results"
    theta_true: Optional[list] = None
    theta0: list = field(default_factory=lambda: [1.0])
    theta: Optional[list] = None
    grid: GridSpec = field(default_factory=GridSpec)
    trajectory: Optional[str] = None
    workers: int = 1

    def resolved(self):
        """Copy with defaults filled in and the full-scale flag applied; validated."""
        cfg = dataclasses.replace(self, constants=dict(self.constants),
                                  deltas=tuple(float(d) for d in self.deltas),
                                  grid=dataclasses.replace(self.grid))
        if cfg.model is None:
            cfg.model = _DEFAULT_MODEL.get(cfg.experiment)
        if cfg.n_steps is None:
            cfg.n_steps = _DEFAULT_N.get(cfg.experiment)
        if cfg.theta_true is None and cfg.model in _DEFAULT_THETA_TRUE:
            cfg.theta_true = list(_DEFAULT_THETA_TRUE[cfg.model])
        if cfg.full_scale:
            cfg.replications = FULL_SCALE_REPLICATIONS
        for name in ("theta_true", "theta0", "theta"):
            val = getattr(cfg, name)
            if val is not None:
                setattr(cfg, name, [float(v) for v in np.atleast_1d(val)])
        cfg.validate()
        return cfg

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.engine not in ENGINES + ("both",):
            raise ConfigError(f"engine must be ud, conv or both, got {self.engine!r}")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.n_steps is not None and self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")
        if not self.deltas or any(not d > 0 for d in self.deltas):
            raise ConfigError("deltas must be a nonempty list of positive numbers")
        g = self.grid
        if not (g.step > 0 and g.stop >= g.start):
            raise ConfigError("grid needs step > 0 and stop >= start")
        if self.model is not None and self.model not in ("ins", "illcond"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.experiment == "filter-run" and not self.trajectory:
            raise ConfigError("filter-run needs a trajectory file")

    def engines(self):
        return ENGINES if self.engine == "both" else (self.engine,)

    def build(self, delta=None):
        consts = dict(self.constants)
        if self.model == "illcond":
            consts["delta"] = self.deltas[0] if delta is None else delta
        return build_model(self.model, **consts)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["deltas"] = list(d["deltas"])
        return d


def config_from_mapping(mapping, base=None):
    """Apply a (possibly nested) mapping of overrides onto ``base``."""
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, val in (mapping or {}).items():
        key = key.replace("-", "_")
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "grid":
            if not isinstance(val, dict):
                raise ConfigError("grid must be a mapping with start, stop, step")
            try:
                val = dataclasses.replace(cfg.grid, **{k: float(v) for k, v in val.items()})
            except TypeError as exc:
                raise ConfigError(f"bad grid entry: {exc}") from None
        elif key == "constants":
            if not isinstance(val, dict):
                raise ConfigError("constants must be a mapping")
            val = {**cfg.constants, **{k: float(v) for k, v in val.items()}}
        elif key == "deltas":
            val = tuple(float(v) for v in np.atleast_1d(val))
        setattr(cfg, key, val)
    return cfg


def load_config(path):
    """Read a YAML config file into an :class:`ExperimentConfig`."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping at top level")
    return config_from_mapping(data)


def _provenance(cfg, **extra):
    return {"tool": "udsens", "version": __version__, "config": cfg.to_dict(), **extra}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------- verify-lemma

LEMMA_THETA = 2.0

# Intermediates of the static example at theta = 2, printed to 4 decimals.
LEMMA_REFERENCE = {
    "U": [[1.0, 0.7169], [0.0, 1.0]],
    "D_beta": [0.1672, 68.4444],
    "B": [[0.1662, 2.0], [0.0883, 2.6667], [-0.1004, 2.0]],
    "L0": [[0.0, 0.0], [25.6693, 0.0]],
    "D0": [0.3216, 90.6667],
    "U0": [[0.0, 1.1359], [0.0, 0.0]],
    "D2": [0.1799, 80.4444],
    "U2": [[0.0, -1.1359], [0.0, 0.0]],
    "U_prime": [[0.0, 0.3750], [0.0, 0.0]],
    "D_beta_prime": [0.8231, 261.7778],
}


@dataclass
class LemmaReport:
    values: dict
    deviations: dict
    consistency_norm: float

    @property
    def max_deviation(self):
        return max(self.deviations.values())

    @property
    def passed(self):
        return self.max_deviation <= LEMMA_TOL and self.consistency_norm <= CONSISTENCY_TOL

    def text(self):
        lines = [f"static example at theta = {LEMMA_THETA:g}"]
        for name, val in self.values.items():
            rows = np.atleast_2d(val)
            body = "; ".join(" ".join(f"{x:10.4f}" for x in r) for r in rows)
            lines.append(f"{name:<13}[{body} ]  max|dev| = {self.deviations[name]:.1e}")
        lines.append(f"consistency norm = {self.consistency_norm:.3e}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {"values": {k: np.asarray(v).tolist() for k, v in self.values.items()},
                "deviations": self.deviations, "consistency_norm": self.consistency_norm,
                "max_deviation": self.max_deviation, "passed": self.passed}


def lemma_intermediates(theta=LEMMA_THETA):
    """Post-arrays, split products and derivatives of the static example.

    Returns the intermediates as a dict and the spectral norm of
    ``(A^T D_w A)' - (U D_beta U^T)'``.
    """
    pre_fn, prime_fn = example1_static()
    pre = pre_fn(theta)
    a_p, dw_p = prime_fn(theta)
    post = mwgs_orthogonalize(pre)
    der = mwgs_derivative(pre, a_p, dw_p, post)
    bt = post.b.T
    m0 = split_ldu(solve_unit_upper_right((bt * pre.d_w) @ a_p, post.u))
    m2 = split_ldu((bt * dw_p) @ post.b)
    vals = {
        "U": post.u, "D_beta": post.d_beta, "B": post.b,
        "L0": m0.strictly_lower, "D0": m0.diagonal, "U0": m0.strictly_upper,
        "D2": m2.diagonal, "U2": m2.strictly_upper,
        "U_prime": der.u_prime, "D_beta_prime": der.d_beta_prime,
    }
    a, dw = pre.a, pre.d_w
    lhs = a_p.T @ (dw[:, None] * a) + a.T @ (dw_p[:, None] * a) + a.T @ (dw[:, None] * a_p)
    t = (der.u_prime * post.d_beta) @ post.u.T
    rhs = t + t.T + (post.u * der.d_beta_prime) @ post.u.T
    return vals, float(np.linalg.norm(lhs - rhs, 2))


def cmd_verify_lemma(config=None):
    vals, norm = lemma_intermediates()
    devs = {k: float(np.max(np.abs(np.asarray(v) - np.asarray(LEMMA_REFERENCE[k]))))
            for k, v in vals.items()}
    report = LemmaReport(vals, devs, norm)
    if config is not None and config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_lemma.txt").write_text(report.text())
        _write_json(out / "verify_lemma.json", _provenance(config, **report.to_dict()))
    return report


# ------------------------------------------------------------------------ scan

@dataclass
class ScanReport:
    config: ExperimentConfig
    grid: np.ndarray
    results: dict

    def summary(self):
        step = self.config.grid.step
        out = {}
        for eng, res in self.results.items():
            coincide = (res.argmin is not None and res.bracket is not None
                        and res.argmin in res.bracket)
            within = (res.argmin is not None and self.config.theta_true is not None
                      and abs(res.argmin - self.config.theta_true[0]) <= step * (1 + 1e-9))
            out[eng] = {"argmin": res.argmin,
                        "zero_crossing": list(res.bracket) if res.bracket else None,
                        "argmin_at_crossing": bool(coincide),
                        "within_one_step": bool(within),
                        "failed_points": sum(r.error is not None for r in res.rows)}
        if len(self.results) == 2:
            ud, cv = self.results["ud"], self.results["conv"]
            out["max_abs_engine_gap"] = {
                "neg_loglik": float(np.nanmax(np.abs(ud.values() - cv.values()))),
                "neg_grad": float(np.nanmax(np.abs(ud.gradients() - cv.gradients()))),
            }
        return out

    def summary_line(self):
        parts = []
        for eng, s in self.summary().items():
            if eng in ENGINES:
                parts.append(f"{eng}: argmin={s['argmin']!r} zero-crossing={s['zero_crossing']}")
        return "; ".join(parts)


_GNUPLOT_SCAN = """\
set datafile separator ','
set key autotitle columnhead
set xlabel 'gamma1'
set multiplot layout 2,1
plot {loglik}
plot {grad}
unset multiplot
"""


def cmd_scan(config):
    cfg = config
    model = cfg.build()
    traj = simulate(model, cfg.theta_true, cfg.n_steps, cfg.seed)
    grid = cfg.grid.points()
    results = {eng: scan(Objective.from_trajectory(model, traj, eng), grid)
               for eng in cfg.engines()}
    report = ScanReport(cfg, grid, results)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["gamma1"]
    for eng in results:
        header += [f"{eng}_neg_loglik", f"{eng}_neg_grad", f"{eng}_flag"]
    rows = []
    for i, g in enumerate(grid):
        row = [float(g)]
        for res in results.values():
            r = res.rows[i]
            row += [r.neg_loglik, r.neg_grad, r.error or ""]
        rows.append(row)
    _write_csv(out / "scan.csv", header, rows)
    cols = {eng: 2 + 3 * j for j, eng in enumerate(results)}
    (out / "scan.gp").write_text(_GNUPLOT_SCAN.format(
        loglik=", ".join(f"'scan.csv' using 1:{c} with linespoints" for c in cols.values()),
        grad=", ".join(f"'scan.csv' using 1:{c + 1} with linespoints" for c in cols.values())))
    _write_json(out / "scan_summary.json",
                _provenance(cfg, seed=cfg.seed, summary=report.summary()))
    return report


# ----------------------------------------------------------------- monte-carlo

def aggregate(theta_hats, theta_true):
    """Return ``(mean, RMSE, MAPE)`` of scalar estimates; MAPE is in percent."""
    est = np.asarray(theta_hats, dtype=float)
    err = est - theta_true
    return (float(np.mean(est)), float(np.sqrt(np.mean(err**2))),
            float(np.mean(np.abs(err) / abs(theta_true)) * 100.0))


RAW_HEADER = ["delta", "replication", "seed", "engine", "theta_hat", "converged",
              "iterations", "n_evals", "neg_loglik", "failure"]


def _mc_task(args):
    delta, rep, seed, engines, n_steps, theta_true, theta0 = args
    model = illcond_model(delta)
    traj = simulate(model, theta_true, n_steps, seed)
    rows = []
    for eng in engines:
        res = minimize(Objective.from_trajectory(model, traj, eng), theta0, MinimizeOptions())
        rows.append([delta, rep, seed, eng, float(res.theta_hat[0]), res.converged,
                     res.iterations, res.n_evals, res.neg_loglik, res.failure_reason or ""])
    return rows


@dataclass
class MonteCarloReport:
    """Per-(delta, engine) statistics of the estimates plus the raw table.

    ``failures`` counts runs where the engine could not evaluate the
    likelihood at the returned estimate (the start value is then kept);
    ``not_converged`` counts every run that stopped short of the gradient
    tolerance, failures included. Statistics use every run's estimate.
    """

    config: ExperimentConfig
    raw: list
    summary: list

    def stat(self, delta, engine, key):
        for s in self.summary:
            if s["engine"] == engine and np.isclose(s["delta"], delta, rtol=1e-12, atol=0):
                return s[key]
        raise KeyError((delta, engine))

    def table(self):
        lines = [f"{'delta':>8} {'engine':>6} {'mean':>9} {'RMSE':>9} {'MAPE':>9} {'fail':>5}"]
        for s in self.summary:
            lines.append(f"{s['delta']:8.0e} {s['engine']:>6} {s['mean']:9.4f} {s['rmse']:9.4f} "
                         f"{s['mape']:9.4f} {s['failures']:5d}")
        return "\n".join(lines) + "\n"


def summarize(raw, theta_true, deltas, engines):
    summary = []
    for d in deltas:
        for eng in engines:
            sel = [r for r in raw if r[0] == d and r[3] == eng]
            mean, rmse, mape = aggregate([r[4] for r in sel], theta_true)
            summary.append({"delta": d, "engine": eng, "replications": len(sel),
                            "mean": mean, "rmse": rmse, "mape": mape,
                            "failures": sum(not np.isfinite(r[8]) for r in sel),
                            "not_converged": sum(not r[5] for r in sel)})
    return summary


def cmd_monte_carlo(config, write=True):
    cfg = config
    engines = cfg.engines()
    seeds = [replication_seed(cfg.seed, r) for r in range(cfg.replications)]
    # the same seed per replication index is reused for every delta
    tasks = [(d, r, seeds[r], engines, cfg.n_steps, cfg.theta_true, cfg.theta0)
             for d in cfg.deltas for r in range(cfg.replications)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_mc_task, tasks))
    else:
        chunks = [_mc_task(t) for t in tasks]
    raw = [row for chunk in chunks for row in chunk]
    report = MonteCarloReport(cfg, raw, summarize(raw, cfg.theta_true[0], cfg.deltas, engines))
    if write:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "mc_raw.csv", RAW_HEADER, raw)
        keys = ["delta", "engine", "replications", "mean", "rmse", "mape", "failures",
                "not_converged"]
        _write_csv(out / "mc_summary.csv", keys, [[s[k] for k in keys] for s in report.summary])
        _write_json(out / "mc_report.json",
                    _provenance(cfg, replication_seeds=seeds, summary=report.summary))
    return report


# ------------------------------------------------------------------ filter-run

@dataclass
class FilterRunReport:
    config: ExperimentConfig
    loglik: float
    gradient: np.ndarray
    header: list
    rows: np.ndarray


def _model_from_sidecar(cfg, meta):
    name = cfg.model or meta.get("name")
    if name not in ("ins", "illcond"):
        raise ConfigError(f"trajectory model {name!r} cannot be rebuilt by name")
    consts = {**meta.get("constants", {}), **cfg.constants}
    return build_model(name, **consts)


def cmd_filter_run(config, model=None):
    """Filter a stored trajectory and emit predicted states, sensitivities and loglik terms.

    ``model`` overrides the catalog model named in the trajectory sidecar.
    """
    cfg = config
    traj = load_trajectory(cfg.trajectory)
    if model is None:
        model = _model_from_sidecar(cfg, traj.model)
    theta = cfg.theta if cfg.theta is not None else list(traj.theta_true)
    engine = "ud" if cfg.engine == "both" else cfg.engine
    rep = Objective.from_trajectory(model, traj, engine).report(np.asarray(theta), record=True)
    n_steps, n = rep.x_pred.shape
    header = ["k"] + [f"x{i + 1}" for i in range(n)]
    header += [f"d{p}_x{i + 1}" for p in model.param_names for i in range(n)]
    header += ["loglik_term"]
    rows = np.column_stack([np.arange(n_steps), rep.x_pred,
                            rep.x_pred_sens.reshape(n_steps, model.p * n), rep.terms])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "filter_run.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([str(int(row[0]))] + [repr(float(v)) for v in row[1:]])
    _write_json(out / "filter_run.json",
                _provenance(cfg, engine=engine, theta=theta, N=int(n_steps),
                            loglik=rep.loglik, gradient=rep.gradient.tolist()))
    return FilterRunReport(cfg, rep.loglik, rep.gradient, header, rows)


# -------------------------------------------------------------------- simulate

def cmd_simulate(config):
    cfg = config
    traj = simulate(cfg.build(), cfg.theta_true, cfg.n_steps, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(traj, out / "trajectory.csv")
    return traj
