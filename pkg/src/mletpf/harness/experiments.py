"""Experiment drivers: twin data, reference runs, consistency, variance decay, cost."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mletpf.filter import (
    ObservationSequence,
    run_filter,
    schedule_from_epsilon,
    update_weights,
)
from mletpf.models import (
    LevelSchedule,
    ModelSpec,
    NoisePath,
    lorenz63,
    lorenz96,
    observe,
    propagate,
    sample_initial_ensemble,
    substream,
)
from mletpf.ot_core import InvalidInputError
from mletpf.transform import (
    CoupledPair,
    WeightedEnsemble,
    build_localisation_matrix,
    seamless_couple,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ReferenceSolution",
    "StudyResult",
    "model_spec",
    "assimilation_interval",
    "derive_seed",
    "generate_twin_data",
    "compute_rmse",
    "fit_loglog_slope",
    "reference_solution",
    "run_consistency_study",
    "run_variance_decay_study",
    "run_cost_accuracy_study",
    "schedule_flops",
]

EXPERIMENTS = ("consistency", "variance-decay", "cost-accuracy", "reference", "twin")
OBS_VARIANCE = 0.25


class ConfigError(InvalidInputError):
    """Inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    """Settings for one experiment run.

    Fields left as ``None`` take the experiment's desk-scale default (see
    ``_DEFAULTS``).  ``samples`` overrides the per-level sample sizes of the
    variance-decay study; ``levels`` picks which pairs are run there.
    """

    experiment: str
    model: str = "lorenz63"
    epsilons: tuple = ()
    seed: int = 0
    reps: int = None
    steps: int = None
    out: str | None = None
    modes: tuple = ()
    r_loc: int | None = None
    levels: tuple = None
    samples: tuple = None
    sizes: tuple = None
    reference_level: int = None
    reference_size: int = None
    cache_dir: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.model not in ("lorenz63", "lorenz96"):
            raise ConfigError(f"unknown model {self.model!r}")
        defaults = _DEFAULTS[(self.experiment, self.model)]
        for key, value in defaults.items():
            if getattr(self, key) in (None, ()):
                setattr(self, key, value)
        self.epsilons = tuple(float(e) for e in self.epsilons)
        self.modes = tuple(self.modes)
        for name in ("levels", "samples", "sizes"):
            if getattr(self, name) is not None:
                setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if any(not 0.0 < e < 1.0 for e in self.epsilons):
            raise ConfigError("epsilon values must lie in (0, 1)")
        if self.r_loc is not None and self.r_loc < 0:
            raise ConfigError("r_loc must be nonnegative")
        for mode in self.modes:
            if mode not in ("seamless", "standard", "single", "seamless-fine-plan"):
                raise ConfigError(f"unknown mode {mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


_VD = dict(reps=5, steps=200, modes=("seamless", "standard"), levels=(1, 2, 3, 4))
_CA = dict(reps=5, steps=100, epsilons=(0.5, 0.35, 0.25, 0.18),
           modes=("single", "seamless", "standard"))
_DEFAULTS = {
    ("consistency", "lorenz63"): dict(reps=10, steps=1, sizes=tuple(2**k for k in range(4, 13))),
    ("consistency", "lorenz96"): dict(reps=10, steps=1, sizes=tuple(2**k for k in range(4, 13))),
    ("variance-decay", "lorenz63"): dict(_VD),
    ("variance-decay", "lorenz96"): dict(_VD, r_loc=0),
    ("cost-accuracy", "lorenz63"): dict(_CA, reference_level=6, reference_size=256),
    ("cost-accuracy", "lorenz96"): dict(_CA, r_loc=0, reference_level=8, reference_size=4000),
    ("reference", "lorenz63"): dict(reps=1, steps=100, reference_level=6, reference_size=256),
    ("reference", "lorenz96"): dict(reps=1, steps=100, r_loc=0, reference_level=8,
                                    reference_size=4000),
    ("twin", "lorenz63"): dict(reps=1, steps=200, reference_level=6),
    ("twin", "lorenz96"): dict(reps=1, steps=200, reference_level=8),
}


@dataclass
class ReferenceSolution:
    """High-accuracy single-level ETPF estimates on a fixed observation record."""

    estimates: dict
    level: int
    size: int
    seed: int
    key: str = ""


@dataclass
class StudyResult:
    """Long-format rows plus fitted log-log slopes."""

    experiment: str
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def add(self, mode, epsilon, level, rep, metric, value):
        self.rows.append(dict(experiment=self.experiment, mode=mode, epsilon=epsilon,
                              level=level, rep=rep, metric=metric, value=float(value)))

    def select(self, metric: str, mode: str | None = None) -> list:
        return [r for r in self.rows
                if r["metric"] == metric and (mode is None or r["mode"] == mode)]


def model_spec(name: str) -> ModelSpec:
    if name == "lorenz63":
        return lorenz63()
    if name == "lorenz96":
        return lorenz96()
    raise ConfigError(f"unknown model {name!r}")


def assimilation_interval(spec: ModelSpec) -> float:
    """Observation spacing: four coarsest steps for Lorenz 63, one for Lorenz 96."""
    return 4 * spec.h0 if spec.name == "lorenz63" else spec.h0


def derive_seed(seed: int, *key: int) -> int:
    """Integer seed for an independent stream identified by ``(seed, key...)``."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in key]])
    return int(ss.generate_state(1, np.uint32)[0])


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MLETPF_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# --- twin data, RMSE, slopes ------------------------------------------------


def generate_twin_data(spec: ModelSpec, schedule: LevelSchedule, seed: int, n_steps: int,
                       R=None, truth_level: int | None = None):
    """Simulate a truth trajectory and noisy identity observations of it.

    The truth runs at level ``truth_level`` (default: the finest level of
    ``schedule``) with its own Brownian path.  Returns ``(truth, obs)`` with
    ``truth`` of shape (n_steps, d).
    """
    if n_steps < 0:
        raise InvalidInputError("n_steps must be nonnegative")
    R = OBS_VARIANCE * np.eye(spec.dimension) if R is None else np.atleast_2d(R)
    level = schedule.L if truth_level is None else truth_level
    h = schedule.h0 * 2.0 ** -(level + schedule.level_offset)
    steps = int(round(schedule.dt / h))
    x = sample_initial_ensemble(spec, 1, substream(seed, 3))
    truth = np.empty((n_steps, spec.dimension))
    values = np.empty((n_steps, spec.dimension))
    for n in range(n_steps):
        x = propagate(spec, x, NoisePath.sample(spec, 1, steps, h, substream(seed, 2, n)))
        truth[n] = x[0]
        values[n] = observe(x[0], R, substream(seed, 4, n))
    times = schedule.dt * np.arange(1, n_steps + 1)
    return truth, ObservationSequence(times, values, R)


def compute_rmse(estimates, reference) -> float:
    """Root mean over steps of the squared Euclidean error."""
    a = np.asarray(estimates, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise InvalidInputError("need at least two matching points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidInputError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# --- reference solution -----------------------------------------------------


def _twin_schedule(spec: ModelSpec, level: int) -> LevelSchedule:
    return LevelSchedule(spec.h0, (1,), assimilation_interval(spec), level_offset=level)


def _twin(cfg: ExperimentConfig, spec: ModelSpec, rep: int):
    sched = _twin_schedule(spec, cfg.reference_level)
    return generate_twin_data(spec, sched, derive_seed(cfg.seed, rep, 0), cfg.steps)


def _reference_key(cfg: ExperimentConfig, rep: int) -> str:
    payload = dict(model=cfg.model, level=cfg.reference_level, size=cfg.reference_size,
                   r_loc=cfg.r_loc, steps=cfg.steps, seed=cfg.seed, rep=rep, version=1)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def reference_solution(cfg: ExperimentConfig, rep: int = 0,
                       obs: ObservationSequence | None = None) -> ReferenceSolution:
    """Localised (when ``cfg.r_loc`` is set) single-level ETPF at reference scale.

    Cached under ``cfg.cache_dir`` keyed by a hash of the configuration.
    """
    spec = model_spec(cfg.model)
    key = _reference_key(cfg, rep)
    path = Path(cfg.cache_dir) / f"reference_{key}.npz" if cfg.cache_dir else None
    if path is not None and path.exists():
        data = np.load(path)
        if int(data["level"]) == cfg.reference_level and int(data["size"]) == cfg.reference_size:
            est = {k[4:]: data[k] for k in data.files if k.startswith("est_")}
            return ReferenceSolution(est, cfg.reference_level, cfg.reference_size,
                                     int(data["seed"]), key)
    if obs is None:
        _, obs = _twin(cfg, spec, rep)
    loc = None if cfg.r_loc is None else build_localisation_matrix(spec.dimension, cfg.r_loc)
    sched = LevelSchedule(spec.h0, (cfg.reference_size,), assimilation_interval(spec),
                          level_offset=cfg.reference_level)
    seed = derive_seed(cfg.seed, rep, 1)
    log.info("reference run: level %d, N=%d", cfg.reference_level, cfg.reference_size)
    report = run_filter(spec, sched, obs, "single", loc, seed=seed)
    ref = ReferenceSolution(report.estimates, cfg.reference_level, cfg.reference_size, seed, key)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, level=ref.level, size=ref.size, seed=seed,
                 **{f"est_{k}": v for k, v in ref.estimates.items()})
    return ref


# --- studies ----------------------------------------------------------------

GAUSSIAN_PRIOR_COARSE = (1.0, 1.0)
GAUSSIAN_PRIOR_FINE = (0.5, 1.0)
GAUSSIAN_OBSERVATION = 0.1
GAUSSIAN_OBS_VARIANCE = 2.0
# posterior N(0.7, 2/3): mean, variance, third and fourth central moments
GAUSSIAN_TARGETS = {"mean": 0.7, "variance": 2.0 / 3.0, "moment3": 0.0,
                    "moment4": 3.0 * (2.0 / 3.0) ** 2}


def _moments(x: np.ndarray) -> dict:
    m = x.mean()
    c = x - m
    return {"mean": m, "variance": np.mean(c**2), "moment3": np.mean(c**3),
            "moment4": np.mean(c**4)}


def run_consistency_study(cfg: ExperimentConfig) -> StudyResult:
    """Moments of the seamlessly transformed coarse posterior in the Gaussian example.

    For each ensemble size, ``cfg.reps`` independent draws of coarse N(1, 1)
    and fine N(0.5, 1) ensembles are weighted against one observation 0.1
    with error variance 2 and coupled; the RMSE of each sample moment against
    the analytic N(0.7, 2/3) posterior is recorded.
    """
    result = StudyResult("consistency", config=cfg.to_dict())
    y = np.array([GAUSSIAN_OBSERVATION])
    R = np.array([[GAUSSIAN_OBS_VARIANCE]])
    errors = {name: [] for name in GAUSSIAN_TARGETS}

    def one(args):
        n, rep = args
        rng = substream(cfg.seed, n, rep)
        xc = GAUSSIAN_PRIOR_COARSE[0] + GAUSSIAN_PRIOR_COARSE[1] * rng.standard_normal(n)
        xf = GAUSSIAN_PRIOR_FINE[0] + GAUSSIAN_PRIOR_FINE[1] * rng.standard_normal(n)
        coarse = update_weights(WeightedEnsemble(xc), y, R)
        fine = update_weights(WeightedEnsemble(xf), y, R)
        out, _ = seamless_couple(CoupledPair(coarse, fine))
        return _moments(out[:, 0])

    jobs = [(n, rep) for n in cfg.sizes for rep in range(cfg.reps)]
    for (n, rep), moments in zip(jobs, _map(one, jobs)):
        for name, value in moments.items():
            result.add("seamless", "", n, rep, name, value)
    for name, target in GAUSSIAN_TARGETS.items():
        rmse = []
        for n in cfg.sizes:
            vals = np.array([r["value"] for r in result.rows
                             if r["metric"] == name and r["level"] == n])
            rmse.append(float(np.sqrt(np.mean((vals - target) ** 2))))
        errors[name] = rmse
        result.slopes[f"{name}_rmse_vs_N"] = fit_loglog_slope(cfg.sizes, rmse)
    result.config["rmse"] = errors
    return result


def _variance_schedule(cfg: ExperimentConfig, spec: ModelSpec) -> LevelSchedule:
    top = max(cfg.levels)
    samples = cfg.samples or tuple(2 ** (8 - level) for level in range(top + 1))
    if len(samples) != top + 1:
        raise ConfigError(f"samples needs {top + 1} entries (levels 0..{top})")
    return LevelSchedule(spec.h0, samples, assimilation_interval(spec))


def run_variance_decay_study(cfg: ExperimentConfig) -> StudyResult:
    """Average ``Tr V_l`` per level and mode, and the fitted decay exponent.

    Only the difference estimators are run; the coarse estimator does not
    affect ``V_l``.  Each repetition uses its own twin experiment.
    """
    spec = model_spec(cfg.model)
    sched = _variance_schedule(cfg, spec)
    loc = None if cfg.r_loc is None else build_localisation_matrix(spec.dimension, cfg.r_loc)
    result = StudyResult("variance-decay", config=cfg.to_dict())
    twin_sched = _twin_schedule(spec, max(cfg.levels))

    def one(args):
        mode, rep = args
        _, obs = generate_twin_data(spec, twin_sched, derive_seed(cfg.seed, rep, 0), cfg.steps)
        report = run_filter(spec, sched, obs, mode, loc, seed=derive_seed(cfg.seed, rep, 2),
                            include_coarse=False)
        return report.variance.mean(axis=0), report.wall_seconds

    jobs = [(mode, rep) for mode in cfg.modes for rep in range(cfg.reps)]
    outputs = _map(one, jobs)
    for (mode, rep), (v, wall) in zip(jobs, outputs):
        for level in cfg.levels:
            result.add(mode, "", level, rep, "trace_V", v[level - 1])
        result.add(mode, "", "", rep, "wall_seconds", wall)
    h = [sched.h(level) for level in cfg.levels]
    for mode in cfg.modes:
        means = [np.mean([r["value"] for r in result.select("trace_V", mode) if r["level"] == lv])
                 for lv in cfg.levels]
        result.slopes[f"{mode}_beta"] = fit_loglog_slope(h, means)
        result.config.setdefault("mean_trace_V", {})[mode] = [float(m) for m in means]
    return result


def run_cost_accuracy_study(cfg: ExperimentConfig, with_reference: bool = True) -> StudyResult:
    """Forward-model cost and RMSE against a reference for each eps and mode.

    Costs are the analytic forward-model flop counts.  Fitted slopes of flops
    against eps are stored as ``<mode>_cost_exponent``.
    """
    spec = model_spec(cfg.model)
    dt = assimilation_interval(spec)
    loc = None if cfg.r_loc is None else build_localisation_matrix(spec.dimension, cfg.r_loc)
    result = StudyResult("cost-accuracy", config=cfg.to_dict())
    twins = {rep: _twin(cfg, spec, rep)[1] for rep in range(cfg.reps)}
    refs = {}
    if with_reference:
        schedules = [schedule_from_epsilon(e, "single", spec.h0, dt) for e in cfg.epsilons]
        if (cfg.reference_level <= max(s.level_offset for s in schedules)
                or cfg.reference_size <= max(s.N[0] for s in schedules)):
            raise ConfigError("the reference must be finer and larger than every run")
        refs = {rep: reference_solution(cfg, rep, twins[rep]) for rep in range(cfg.reps)}

    def one(args):
        mode, eps, rep = args
        sched = schedule_from_epsilon(eps, mode if mode != "seamless-fine-plan" else "seamless",
                                      spec.h0, dt, model=cfg.model)
        report = run_filter(spec, sched, twins[rep], mode, loc,
                            seed=derive_seed(cfg.seed, rep, 3, int(round(eps * 1e6))))
        return report

    jobs = [(mode, eps, rep) for mode in cfg.modes for eps in cfg.epsilons
            for rep in range(cfg.reps)]
    for (mode, eps, rep), report in zip(jobs, _map(one, jobs)):
        result.add(mode, eps, "", rep, "flops", report.total_flops)
        result.add(mode, eps, "", rep, "wall_seconds", report.wall_seconds)
        if rep in refs:
            for name, ref in refs[rep].estimates.items():
                metric = "rmse" if name == "mean" else f"rmse_{name}"
                result.add(mode, eps, "", rep, metric,
                           compute_rmse(report.estimates[name], ref))
    for mode in cfg.modes:
        flops = [np.mean([r["value"] for r in result.select("flops", mode) if r["epsilon"] == e])
                 for e in cfg.epsilons]
        if len(cfg.epsilons) >= 2:
            result.slopes[f"{mode}_cost_exponent"] = fit_loglog_slope(cfg.epsilons, flops)
    return result


def schedule_flops(spec: ModelSpec, schedule: LevelSchedule, n_steps: int) -> float:
    """Closed-form forward-model flop count of a full multilevel run."""
    fps = spec.flops_per_step
    total = schedule.N[0] * schedule.steps(0)
    for level in range(1, schedule.L + 1):
        total += schedule.N[level] * (schedule.steps(level) + schedule.steps(level - 1))
    return float(total * fps * n_steps)
