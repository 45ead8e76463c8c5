"""Experiment orchestration: the sampling/training loop, suites and CSV export."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from akgp import planning
from akgp.environments import (
    RasterEnv,
    RasterSpec,
    Synthetic1D,
    grid_points,
    load_raster,
    make_synthetic_raster,
    observe,
    query_truth,
    synth_eval,
)
from akgp.gpr import GPRModel, Prediction
from akgp.kernels import KERNEL_NAMES, AttentiveKernel, KernelConfig, make_kernel
from akgp.metrics import FIELDS, MetricsRecord, curve_average, evaluate, msll

log = logging.getLogger(__name__)

STRATEGIES = ("random", "active", "myopic")
SYNTHETIC_RASTERS = ("piecewise", "gp")


@dataclass
class ExperimentConfig:
    # environment: "piecewise" | "gp" (generated rasters), "five_partition" |
    # "xsin40x4" (1-D), or a path to a raster file
    env: str = "piecewise"
    env_seed: int = 0
    raster_shape: tuple[int, int] = (100, 100)
    obs_noise_std: float = 1.0

    kernel: str = "ak"
    M: int = 10
    H: int = 10
    l_min: float = 0.01
    l_max: float = 0.5
    amplitude_init: float = 1.0
    noise_init: float = 0.1
    rbf_lengthscale_init: float = 0.5
    dkl_feature_dim: int | None = None

    strategy: str = "random"
    n_init: int = 50
    n_max: int = 600
    init_iters: int = 100
    lr_hyper: float = 1e-2
    lr_net: float = 1e-3
    num_candidates: int = planning.NUM_CANDIDATES
    step_len: float = 0.1
    sample_spacing: float = 0.05

    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    test_grid: tuple[int, int] = (100, 100)
    test_points_1d: int = 500
    out_dir: str = "results"
    export_maps: bool = False

    def __post_init__(self):
        self.raster_shape = tuple(self.raster_shape)
        self.test_grid = tuple(self.test_grid)
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self) -> None:
        if self.n_init < 1 or self.n_init > self.n_max:
            raise ValueError(f"need 1 <= n_init <= n_max, got {self.n_init}, {self.n_max}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.kernel not in KERNEL_NAMES:
            raise ValueError(f"kernel must be one of {KERNEL_NAMES}, got {self.kernel!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.step_len <= 0 or self.sample_spacing <= 0:
            raise ValueError("robot step_len and sample_spacing must be positive")
        if self.obs_noise_std < 0 or self.noise_init <= 0 or self.amplitude_init <= 0:
            raise ValueError("noise and amplitude settings must be positive")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(M=self.M, H=self.H, l_min=self.l_min, l_max=self.l_max,
                            amplitude=self.amplitude_init,
                            rbf_lengthscale=self.rbf_lengthscale_init,
                            dkl_feature_dim=self.dkl_feature_dim)

    @property
    def env_label(self) -> str:
        if self.env in SYNTHETIC_RASTERS:
            return f"{self.env}{self.env_seed}"
        return Path(self.env).stem


def load_config(path, **overrides) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


def build_env(config: ExperimentConfig):
    if config.env in SYNTHETIC_RASTERS:
        rows, cols = config.raster_shape
        return make_synthetic_raster(RasterSpec(config.env, config.env_seed, rows, cols,
                                                obs_noise_std=config.obs_noise_std))
    if config.env in ("five_partition", "xsin40x4"):
        return Synthetic1D(config.env, config.obs_noise_std)
    return load_raster(config.env, config.obs_noise_std)


def truth(env, X) -> np.ndarray:
    if isinstance(env, Synthetic1D):
        return synth_eval(env, np.asarray(X).ravel())
    return query_truth(env, X)


def evaluation_inputs(env, config: ExperimentConfig) -> np.ndarray:
    if isinstance(env, Synthetic1D):
        return np.linspace(*env.domain, config.test_points_1d)[:, None]
    return grid_points(env.extent, config.test_grid)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass
class Normalizer:
    """Maps the workspace to ``[-1, 1]^D`` and targets to zero mean, unit std."""

    lower: np.ndarray
    upper: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, extent, y) -> "Normalizer":
        extent = np.asarray(extent, dtype=float)
        y = np.asarray(y, dtype=float)
        std = float(np.std(y))
        if std <= 0:
            raise ValueError("cannot standardize constant targets")
        return cls(extent[0::2], extent[1::2], float(np.mean(y)), std)

    @property
    def input_scale(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def normalize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.lower.size)
        return 2.0 * (X - self.lower) / (self.upper - self.lower) - 1.0

    def denormalize(self, Xn) -> np.ndarray:
        return self.lower + (np.asarray(Xn) + 1.0) * 0.5 * (self.upper - self.lower)

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def destandardize(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def as_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    records: list[MetricsRecord]
    model: GPRModel
    normalizer: Normalizer
    epoch_iters: list[int]
    X_world: np.ndarray


def _streams(seed: int):
    """Disjoint generators for sampling noise, planning and model init."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def _score(model: GPRModel, norm: Normalizer, X_test_n, y_test_std, num, t0) -> MetricsRecord:
    pred = model.predict(X_test_n, include_noise=True)
    y_train = model.y_train
    return evaluate(y_test_std, pred.mean, pred.variance, float(np.mean(y_train)),
                    float(np.var(y_train)), num, time.perf_counter() - t0, norm.y_std)


def run_seed(config: ExperimentConfig, seed: int, env=None) -> SeedResult:
    """Sample, train and evaluate one seed of the sequential-sampling loop."""
    t0 = time.perf_counter()
    env = build_env(config) if env is None else env
    rng_obs, rng_plan, rng_model = _streams(seed)
    extent = env.extent
    dim = env.dim

    X0 = planning.sample_candidates(extent, rng_plan, config.n_init)
    y0 = observe(env, X0, rng_obs)
    norm = Normalizer.fit(extent, y0)

    kernel = make_kernel(config.kernel, dim, config.kernel_config(), rng_model)
    model = GPRModel(kernel, noise=config.noise_init)
    model.add_data(norm.normalize(X0), norm.standardize(y0))
    model.optimize(config.init_iters, config.lr_hyper, config.lr_net)

    X_test = evaluation_inputs(env, config)
    X_test_n = norm.normalize(X_test)
    y_test_std = norm.standardize(truth(env, X_test))
    records = [_score(model, norm, X_test_n, y_test_std, model.num_train, t0)]
    epoch_iters: list[int] = []
    X_world = [X0]

    def predict_world(X):
        return model.predict(norm.normalize(X))

    scale = float(np.mean(norm.input_scale))
    lower = np.asarray(extent, dtype=float)[0::2]
    upper = np.asarray(extent, dtype=float)[1::2]
    robot = planning.RobotState(0.5 * (lower + upper), config.step_len * scale,
                                config.sample_spacing * scale)

    while model.num_train < config.n_max:
        if config.strategy == "random":
            X_t = planning.random_waypoint(extent, rng_plan)[None, :]
            y_t = observe(env, X_t, rng_obs)
        elif config.strategy == "active":
            cands = planning.sample_candidates(extent, rng_plan, config.num_candidates)
            X_t = planning.active_waypoint(predict_world, extent, rng_plan, cands)[None, :]
            y_t = observe(env, X_t, rng_obs)
        else:
            cands = planning.sample_candidates(extent, rng_plan, config.num_candidates)
            goal = planning.informative_waypoint(predict_world, robot, extent, rng_plan, cands)
            X_t, y_t, robot = planning.track_and_sample(robot, goal, env, rng_obs)
        model.add_data(norm.normalize(X_t), norm.standardize(y_t))
        n_t = X_t.shape[0]
        model.optimize(n_t, config.lr_hyper, config.lr_net)
        epoch_iters.append(n_t)
        X_world.append(X_t)
        records.append(_score(model, norm, X_test_n, y_test_std, model.num_train, t0))

    return SeedResult(seed, records, model, norm, epoch_iters, np.vstack(X_world))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    results: dict[int, SeedResult]
    failures: dict[int, str]

    @property
    def curves(self) -> dict[int, list[MetricsRecord]]:
        return {s: r.records for s, r in self.results.items()}

    def curve_means(self, metric: str = "msll") -> list[float]:
        return [curve_average(r.records, metric) for r in self.results.values()]


def run_experiment(config: ExperimentConfig, export: bool = False) -> ExperimentResult:
    env = build_env(config)
    results, failures = {}, {}
    for seed in config.seeds:
        try:
            results[seed] = run_seed(config, seed, env)
        except Exception as err:  # one bad seed must not sink the others
            log.error("seed %d failed (%s, %s, %s): %s", seed, config.env_label,
                      config.kernel, config.strategy, err)
            failures[seed] = f"{type(err).__name__}: {err}"
    out = ExperimentResult(config, results, failures)
    if export:
        export_results(out, config.out_dir)
    return out


def fit_static(config: ExperimentConfig, seed: int, num_samples: int, num_iters: int,
               callback=None):
    """Fit on a fixed uniform random dataset (no sequential sampling).

    Returns ``(model, normalizer, X_test_n, y_test_std, record)``.
    """
    env = build_env(config)
    rng_obs, rng_plan, rng_model = _streams(seed)
    X = planning.sample_candidates(env.extent, rng_plan, num_samples)
    y = observe(env, X, rng_obs)
    norm = Normalizer.fit(env.extent, y)
    kernel = make_kernel(config.kernel, env.dim, config.kernel_config(), rng_model)
    model = GPRModel(kernel, noise=config.noise_init)
    model.add_data(norm.normalize(X), norm.standardize(y))
    X_test = evaluation_inputs(env, config)
    X_test_n = norm.normalize(X_test)
    y_test_std = norm.standardize(truth(env, X_test))
    t0 = time.perf_counter()
    model.optimize(num_iters, config.lr_hyper, config.lr_net,
                   callback=None if callback is None else
                   (lambda m, it: callback(m, it, X_test_n, y_test_std)))
    record = _score(model, norm, X_test_n, y_test_std, model.num_train, t0)
    return model, norm, X_test_n, y_test_std, record


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

SENSITIVITY_SWEEPS = {
    "M": [2, 3, 5, 10, 20],
    "H": [2, 5, 10, 20],
    "l_min": [0.005, 0.01, 0.05, 0.1],
    "l_max": [0.1, 0.3, 0.5, 1.0],
}

ABLATION_VARIANTS = {"Full": "ak", "Weight": "ak-weight", "Mask": "ak-mask", "NNx2": "ak-nnx2"}


def _table_rows(result: ExperimentResult, base: dict) -> list[dict]:
    rows = []
    for seed in result.config.seeds:
        row = dict(base, seed=seed)
        if seed in result.results:
            recs = result.results[seed].records
            row.update({m: curve_average(recs, m) for m in ("smse", "msll", "nlpd", "rmse", "mae")})
            row["status"] = "ok"
        else:
            row["status"] = result.failures.get(seed, "failed")
        rows.append(row)
    return rows


def run_sensitivity_suite(base_config: ExperimentConfig, sweeps: dict | None = None) -> list[dict]:
    """One-factor-at-a-time sweep; one row per (factor, value, seed)."""
    sweeps = SENSITIVITY_SWEEPS if sweeps is None else sweeps
    rows = []
    for factor, values in sweeps.items():
        for value in values:
            try:
                cfg = base_config.replace(kernel="ak", **{factor: value})
                result = run_experiment(cfg)
            except Exception as err:
                log.error("sensitivity cell %s=%s failed: %s", factor, value, err)
                rows += [dict(factor=factor, value=value, seed=s, status=str(err))
                         for s in base_config.seeds]
                continue
            rows += _table_rows(result, {"factor": factor, "value": value})
    return rows


def run_ablation_suite(base_config: ExperimentConfig, variants: dict | None = None) -> list[dict]:
    """The four AK variants under random sampling; one row per (variant, seed)."""
    variants = ABLATION_VARIANTS if variants is None else variants
    rows = []
    for label, kernel in variants.items():
        try:
            result = run_experiment(base_config.replace(kernel=kernel, strategy="random"))
        except Exception as err:
            log.error("ablation variant %s failed: %s", label, err)
            rows += [dict(variant=label, seed=s, status=str(err)) for s in base_config.seeds]
            continue
        rows += _table_rows(result, {"variant": label})
    return rows


def run_overfitting_suite(config: ExperimentConfig, kernels=("rbf", "ak", "gibbs", "dkl"),
                          num_iters: int = 1000, num_samples: int | None = None,
                          seed: int | None = None) -> dict[str, dict[str, list[float]]]:
    """Long optimization on a fixed dataset, logging train/test MSLL per iteration."""
    num_samples = config.n_max if num_samples is None else num_samples
    seed = config.seeds[0] if seed is None else seed
    traces = {}
    for name in kernels:
        train_trace, test_trace = [], []

        def log_msll(model: GPRModel, it, X_test_n, y_test_std):
            mean_y, var_y = float(np.mean(model.y_train)), float(np.var(model.y_train))
            p_train = model.predict(model.X_train, include_noise=True)
            train_trace.append(msll(model.y_train, p_train.mean, p_train.variance, mean_y, var_y))
            p_test = model.predict(X_test_n, include_noise=True)
            test_trace.append(msll(y_test_std, p_test.mean, p_test.variance, mean_y, var_y))

        try:
            fit_static(config.replace(kernel=name), seed, num_samples, num_iters, log_msll)
        except Exception as err:
            log.error("overfitting run for %s failed: %s", name, err)
        traces[name] = {"train_msll": train_trace, "test_msll": test_trace}
    return traces


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


CURVE_HEADER = ("seed",) + FIELDS


def write_curves(curves: dict[int, list[MetricsRecord]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for seed, records in curves.items():
            for r in records:
                writer.writerow([seed] + [_fmt(getattr(r, f)) for f in FIELDS])


def read_curves(path) -> dict[int, list[MetricsRecord]]:
    curves: dict[int, list[MetricsRecord]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = MetricsRecord(int(row["num_samples"]), *(float(row[f]) for f in FIELDS[1:]))
            curves.setdefault(int(row["seed"]), []).append(rec)
    return curves


def summarize(curves: dict[int, list[MetricsRecord]]) -> dict[str, float]:
    """Mean and population std over seeds of curve-averaged metrics."""
    out = {}
    for metric in ("smse", "msll", "nlpd", "rmse", "mae"):
        per_seed = [curve_average(recs, metric) for recs in curves.values() if recs]
        out[f"{metric}_mean"] = float(np.mean(per_seed)) if per_seed else float("nan")
        out[f"{metric}_std"] = float(np.std(per_seed)) if per_seed else float("nan")
    return out


def write_table(rows: list[dict], path) -> None:
    keys: list[str] = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def export_maps(result: SeedResult, env, config: ExperimentConfig, path) -> None:
    """Per-grid-point prediction, uncertainty, error and AK attention vectors."""
    X_test = evaluation_inputs(env, config)
    Xn = result.normalizer.normalize(X_test)
    pred: Prediction = result.model.predict(Xn)
    mean = result.normalizer.destandardize(pred.mean)
    std = pred.std * result.normalizer.y_std
    true = truth(env, X_test)
    cols = {f"x{k}": X_test[:, k] for k in range(X_test.shape[1])}
    cols.update(truth=true, mean=mean, std=std, abs_error=np.abs(mean - true))
    kernel = result.model.kernel
    if isinstance(kernel, AttentiveKernel):
        w, z = kernel.attention(Xn)
        cols.update({f"w{m}": w[:, m] for m in range(w.shape[1])})
        cols.update({f"z{m}": z[:, m] for m in range(z.shape[1])})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for i in range(X_test.shape[0]):
            writer.writerow([_fmt(float(v[i])) for v in cols.values()])
    samples_path = Path(path).with_name(Path(path).name.replace("map_", "samples_"))
    with open(samples_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{k}" for k in range(result.X_world.shape[1])])
        writer.writerows([[_fmt(v) for v in row] for row in result.X_world])


def curve_filename(config: ExperimentConfig) -> str:
    return f"{config.env_label}_{config.kernel}_{config.strategy}.csv"


def export_results(result: ExperimentResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    curve_path = out / curve_filename(cfg)
    write_curves(result.curves, curve_path)
    written = [curve_path]
    summary_path = out / "summary.csv"
    row = {"env": cfg.env_label, "kernel": cfg.kernel, "strategy": cfg.strategy,
           "num_seeds": len(result.results), **summarize(result.curves)}
    rows = []
    if summary_path.exists():
        with open(summary_path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh)
                    if (r["env"], r["kernel"], r["strategy"]) != (cfg.env_label, cfg.kernel, cfg.strategy)]
    write_table(rows + [row], summary_path)
    written.append(summary_path)
    if cfg.export_maps and result.results:
        env = build_env(cfg)
        first = result.results[min(result.results)]
        map_path = out / f"map_{cfg.env_label}_{cfg.kernel}_{cfg.strategy}_seed{first.seed}.csv"
        export_maps(first, env, cfg, map_path)
        written.append(map_path)
    return written
