"""Experiment orchestration: strict JSON configuration, the round loop with
early stopping, the centralized baseline, parameter sweeps, and CSV/JSON
report emission.

Everything an experiment emits is a pure function of (config, master_seed);
the master seed expands into per-purpose seeds via `seeding.derive_seed`.
"""

from __future__ import annotations

import csv
import enum
import itertools
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as model_ops
from .client import FULL_BATCH, LocalTrainingConfig, local_step_count
from .data import (
    Federation,
    FederationSpec,
    load_federation,
    split_users,
    synthesize_federation,
)
from .errors import ConfigError
from .evaluation import EvalTargets, early_stop_check, federated_eval, pooled_eval
from .model import ModelSpec, xavier_init
from .seeding import derive_seed
from .server import (
    AveragingStrategy,
    RoundConfig,
    ServerState,
    run_round,
    upload_cost_bytes,
)

# Default split: most users train, the rest divides evenly into dev and test.
DEFAULT_TRAIN_FRAC = 1374 / 1774
DEFAULT_DEV_FRAC = 200 / 1774


class BaselineMode(str, enum.Enum):
    NONE = "none"
    CENTRAL_ADAM = "central_adam"
    CENTRAL_SGD = "central_sgd"


class EvalMode(str, enum.Enum):
    FEDERATED = "federated"
    POOLED = "pooled"


@dataclass(frozen=True)
class FederationSource:
    """Either a synthesis spec or a path to a saved federation file."""

    synthesize: FederationSpec | None = None
    load: Path | None = None

    def __post_init__(self):
        if (self.synthesize is None) == (self.load is None):
            raise ConfigError("federation source needs exactly one of 'synthesize' or 'load'")

    def realize(self, seed: int) -> Federation:
        if self.synthesize is not None:
            return synthesize_federation(self.synthesize, seed)
        return load_federation(self.load)


@dataclass(frozen=True)
class ExperimentConfig:
    federation: FederationSource
    model: ModelSpec
    local: LocalTrainingConfig = LocalTrainingConfig()
    strategy: AveragingStrategy = AveragingStrategy.adam()
    train_frac: float = DEFAULT_TRAIN_FRAC
    dev_frac: float = DEFAULT_DEV_FRAC
    participation: float = 0.1
    max_rounds: int = 100
    targets: EvalTargets = EvalTargets()
    master_seed: int = 0
    output_dir: Path | None = None
    eval_every: int = 1
    eval_mode: EvalMode = EvalMode.FEDERATED
    baseline_mode: BaselineMode = BaselineMode.NONE
    workers: int = 1

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigError("participation ratio must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        if self.federation.synthesize is not None:
            spec = self.federation.synthesize
            federation = {
                "synthesize": {
                    "user_count": spec.user_count,
                    "size_mean": spec.size_mean,
                    "size_std": spec.size_std,
                    "positive_rate": spec.positive_rate,
                    "feature_dim": spec.feature_dim,
                    "class_count": spec.class_count,
                    "user_shift_scale": spec.user_shift_scale,
                    "negative_duration_s": spec.negative_duration_s,
                }
            }
        else:
            federation = {"load": str(self.federation.load)}
        return {
            "federation": federation,
            "split": {"train_frac": self.train_frac, "dev_frac": self.dev_frac},
            "model": {"layer_dims": list(self.model.layer_dims), "activation": self.model.activation},
            "local": {
                "epochs": self.local.epochs,
                "batch_size": self.local.batch_size,
                "eta_local": self.local.eta_local,
            },
            "strategy": {
                "kind": self.strategy.kind.value,
                "eta_global": self.strategy.eta_global,
                "beta1": self.strategy.beta1,
                "beta2": self.strategy.beta2,
                "epsilon": self.strategy.epsilon,
            },
            "participation": self.participation,
            "max_rounds": self.max_rounds,
            "targets": {
                "fah_budget": self.targets.fah_budget,
                "recall_target": self.targets.recall_target,
            },
            "master_seed": self.master_seed,
            "output_dir": None if self.output_dir is None else str(self.output_dir),
            "eval_every": self.eval_every,
            "eval_mode": self.eval_mode.value,
            "baseline_mode": self.baseline_mode.value,
            "workers": self.workers,
        }


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluated round; wall_seconds is informational and never written
    to metrics.csv so identical runs stay byte-identical."""

    round: int
    dev_metric: float
    train_loss_mean: float
    cumulative_upload_mb: float
    wall_seconds: float


@dataclass(frozen=True)
class ExperimentResult:
    report: dict
    metrics: list[MetricsRecord]


class _Section:
    """Dict view that tracks consumption and rejects unknown keys."""

    _MISSING = object()

    def __init__(self, mapping, where: str):
        if not isinstance(mapping, dict):
            raise ConfigError(f"{where} must be a JSON object")
        self._d = dict(mapping)
        self.where = where

    def take(self, key: str, default=_MISSING):
        if key in self._d:
            return self._d.pop(key)
        if default is self._MISSING:
            raise ConfigError(f"{self.where}: missing required key {key!r}")
        return default

    def done(self) -> None:
        if self._d:
            raise ConfigError(f"{self.where}: unknown keys {sorted(self._d)}")


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    return value


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {value!r}")
    return value


def _parse_federation(obj) -> FederationSource:
    section = _Section(obj, "federation")
    if "synthesize" in section._d and "load" in section._d:
        raise ConfigError("federation source needs exactly one of 'synthesize' or 'load'")
    if "synthesize" in section._d:
        spec_section = _Section(section.take("synthesize"), "federation.synthesize")
        spec = FederationSpec(
            user_count=_as_int(spec_section.take("user_count"), "user_count"),
            size_mean=_as_float(spec_section.take("size_mean", 39.0), "size_mean"),
            size_std=_as_float(spec_section.take("size_std", 32.0), "size_std"),
            positive_rate=_as_float(spec_section.take("positive_rate", 0.18), "positive_rate"),
            feature_dim=_as_int(spec_section.take("feature_dim", 10), "feature_dim"),
            class_count=_as_int(spec_section.take("class_count", 2), "class_count"),
            user_shift_scale=_as_float(spec_section.take("user_shift_scale", 1.0), "user_shift_scale"),
            negative_duration_s=_as_float(
                spec_section.take("negative_duration_s", 3.0), "negative_duration_s"
            ),
        )
        spec_section.done()
        section.done()
        return FederationSource(synthesize=spec)
    path = _as_str(section.take("load"), "federation.load")
    section.done()
    return FederationSource(load=Path(path))


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed JSON document into an ExperimentConfig, fail-fast."""
    top = _Section(raw, "config")
    federation = _parse_federation(top.take("federation"))

    model_section = _Section(top.take("model"), "model")
    dims = model_section.take("layer_dims")
    if not isinstance(dims, list) or not all(
        isinstance(d, int) and not isinstance(d, bool) for d in dims
    ):
        raise ConfigError("model.layer_dims must be a list of integers")
    spec = ModelSpec(
        layer_dims=tuple(dims),
        activation=_as_str(model_section.take("activation", "relu"), "model.activation"),
    )
    model_section.done()

    split_section = _Section(top.take("split", {}), "split")
    train_frac = _as_float(split_section.take("train_frac", DEFAULT_TRAIN_FRAC), "train_frac")
    dev_frac = _as_float(split_section.take("dev_frac", DEFAULT_DEV_FRAC), "dev_frac")
    split_section.done()

    local_section = _Section(top.take("local", {}), "local")
    batch_size = local_section.take("batch_size", FULL_BATCH)
    if batch_size is not FULL_BATCH and batch_size is not None:
        batch_size = _as_int(batch_size, "local.batch_size")
    local = LocalTrainingConfig(
        epochs=_as_int(local_section.take("epochs", 1), "local.epochs"),
        batch_size=batch_size,
        eta_local=_as_float(local_section.take("eta_local", 0.01), "local.eta_local"),
    )
    local_section.done()

    strategy_section = _Section(top.take("strategy", {}), "strategy")
    kind = _as_str(strategy_section.take("kind", "adam"), "strategy.kind")
    try:
        strategy = AveragingStrategy(
            kind=kind,
            eta_global=_as_float(
                strategy_section.take("eta_global", 1e-3 if kind == "adam" else 1.0), "eta_global"
            ),
            beta1=_as_float(strategy_section.take("beta1", 0.9), "beta1"),
            beta2=_as_float(strategy_section.take("beta2", 0.999), "beta2"),
            epsilon=_as_float(strategy_section.take("epsilon", 1e-8), "epsilon"),
        )
    except ValueError as exc:
        raise ConfigError(f"strategy: {exc}") from None
    strategy_section.done()

    targets_section = _Section(top.take("targets", {}), "targets")
    targets = EvalTargets(
        fah_budget=_as_float(targets_section.take("fah_budget", 5.0), "fah_budget"),
        recall_target=_as_float(targets_section.take("recall_target", 0.95), "recall_target"),
    )
    targets_section.done()

    eval_mode = _as_str(top.take("eval_mode", "federated"), "eval_mode")
    baseline_mode = _as_str(top.take("baseline_mode", "none"), "baseline_mode")
    try:
        eval_mode = EvalMode(eval_mode)
        baseline_mode = BaselineMode(baseline_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    output_dir = top.take("output_dir", None)
    if output_dir is not None:
        output_dir = Path(_as_str(output_dir, "output_dir"))

    config = ExperimentConfig(
        federation=federation,
        model=spec,
        local=local,
        strategy=strategy,
        train_frac=train_frac,
        dev_frac=dev_frac,
        participation=_as_float(top.take("participation", 0.1), "participation"),
        max_rounds=_as_int(top.take("max_rounds", 100), "max_rounds"),
        targets=targets,
        master_seed=_as_int(top.take("master_seed", 0), "master_seed"),
        output_dir=output_dir,
        eval_every=_as_int(top.take("eval_every", 1), "eval_every"),
        eval_mode=eval_mode,
        baseline_mode=baseline_mode,
        workers=_as_int(top.take("workers", 1), "workers"),
    )
    top.done()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    return config_from_dict(raw)


def _evaluate(config: ExperimentConfig, w: np.ndarray, federation: Federation, user_ids) -> float:
    if config.eval_mode is EvalMode.POOLED:
        return pooled_eval(config.model, w, federation, user_ids, config.targets)
    return federated_eval(config.model, w, federation, user_ids, config.targets)


def _prepare(config: ExperimentConfig):
    """Build the federation, user split, and initial weights; validate fit."""
    federation = config.federation.realize(derive_seed(config.master_seed, "federation"))
    if config.model.feature_dim != federation.feature_dim:
        raise ConfigError(
            f"model input dim {config.model.feature_dim} != federation feature dim "
            f"{federation.feature_dim}"
        )
    if config.model.class_count != federation.class_count:
        raise ConfigError(
            f"model class count {config.model.class_count} != federation class count "
            f"{federation.class_count}"
        )
    train, dev, test = split_users(
        federation, config.train_frac, config.dev_frac, derive_seed(config.master_seed, "split")
    )
    if not train:
        raise ConfigError("user split produced an empty training pool")
    if not dev:
        raise ConfigError("user split produced an empty dev pool; cannot early-stop")
    w0 = xavier_init(config.model, derive_seed(config.master_seed, "init"))
    return federation, train, dev, test, w0


def _write_metrics_csv(path: Path, metrics: list[MetricsRecord]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "dev_metric", "train_loss_mean", "cumulative_upload_mb"])
        for rec in metrics:
            writer.writerow([rec.round, rec.dev_metric, rec.train_loss_mean, rec.cumulative_upload_mb])


def _write_report(path: Path, report: dict) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the synchronous optimization loop with early stopping.

    Evaluates dev users every `eval_every` rounds (and at the final round),
    stops at the first round meeting the recall target, then evaluates test
    users once. Writes metrics.csv and report.json when output_dir is set.
    """
    t0 = time.perf_counter()
    federation, train, dev, test, w0 = _prepare(config)
    round_cfg = RoundConfig(
        participation=config.participation,
        local=config.local,
        strategy=config.strategy,
        model=config.model,
        workers=config.workers,
    )
    state = ServerState.initial(w0)
    d = config.model.param_count

    metrics: list[MetricsRecord] = []
    rounds_to_target = None
    dev_metric = None
    total_local_steps = 0
    rounds_used = 0

    for t in range(1, config.max_rounds + 1):
        state, record = run_round(
            state, federation, train, round_cfg, derive_seed(config.master_seed, "round", t)
        )
        rounds_used = t
        total_local_steps += sum(
            local_step_count(
                federation.partition(uid).size, config.local.batch_size, config.local.epochs
            )
            for uid in record.selected_users
        )
        if t % config.eval_every == 0 or t == config.max_rounds:
            dev_metric = _evaluate(config, state.weights, federation, dev)
            metrics.append(
                MetricsRecord(
                    round=t,
                    dev_metric=dev_metric,
                    train_loss_mean=record.train_loss_mean,
                    cumulative_upload_mb=upload_cost_bytes(d, config.participation, t) / 1e6,
                    wall_seconds=time.perf_counter() - t0,
                )
            )
            if early_stop_check(dev_metric, config.targets):
                rounds_to_target = t
                break

    test_metric = _evaluate(config, state.weights, federation, test) if test else None
    report = {
        "rounds_to_target": rounds_to_target,
        "dev_metric": dev_metric,
        "test_metric": test_metric,
        "upload_mb_per_client": upload_cost_bytes(d, config.participation, rounds_used) / 1e6,
        "total_local_steps": total_local_steps,
        "wall_seconds": time.perf_counter() - t0,
        "config_echo": config.to_dict(),
    }
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_metrics_csv(out / "metrics.csv", metrics)
        _write_report(out / "report.json", report)
    return ExperimentResult(report=report, metrics=metrics)


def _adam_step(w, m, v, step, grad, eta, beta1, beta2, epsilon):
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    return w - eta * m_hat / (np.sqrt(v_hat) + epsilon), m, v


def run_baseline(config: ExperimentConfig) -> ExperimentResult:
    """Centralized reference: pool all train users' data on one server.

    Performs up to max_rounds mini-batch steps (epoch-shuffled, partial final
    batch kept) with plain SGD at eta_local or Adam at the strategy's
    eta_global/beta/epsilon settings, evaluating dev users with the same
    pipeline as the federated runs.
    """
    if config.baseline_mode is BaselineMode.NONE:
        raise ConfigError("baseline_mode is 'none'; nothing to run")
    t0 = time.perf_counter()
    federation, train, dev, test, w0 = _prepare(config)

    examples = []
    for uid in train:
        examples.extend(federation.partition(uid).examples)
    X, y = model_ops.batch_arrays(config.model, examples)
    n = X.shape[0]
    batch = n if config.local.batch_size is FULL_BATCH else config.local.batch_size
    d = config.model.param_count

    w = w0.copy()
    m = np.zeros(d)
    v = np.zeros(d)
    metrics: list[MetricsRecord] = []
    steps_to_target = None
    dev_metric = None
    step = 0

    epoch = 0
    cursor = 0
    order = np.random.default_rng(derive_seed(config.master_seed, "baseline", epoch)).permutation(n)
    while step < config.max_rounds and steps_to_target is None:
        if cursor >= n:
            epoch += 1
            cursor = 0
            order = np.random.default_rng(
                derive_seed(config.master_seed, "baseline", epoch)
            ).permutation(n)
        idx = order[cursor : cursor + batch]
        cursor += batch
        grad = model_ops.gradient_from_arrays(config.model, w, X[idx], y[idx])
        step += 1
        if config.baseline_mode is BaselineMode.CENTRAL_ADAM:
            w, m, v = _adam_step(
                w,
                m,
                v,
                step,
                grad,
                config.strategy.eta_global,
                config.strategy.beta1,
                config.strategy.beta2,
                config.strategy.epsilon,
            )
        else:
            w = w - config.local.eta_local * grad
        if step % config.eval_every == 0 or step == config.max_rounds:
            dev_metric = _evaluate(config, w, federation, dev)
            metrics.append(
                MetricsRecord(
                    round=step,
                    dev_metric=dev_metric,
                    train_loss_mean=model_ops.loss_from_arrays(config.model, w, X, y),
                    cumulative_upload_mb=0.0,
                    wall_seconds=time.perf_counter() - t0,
                )
            )
            if early_stop_check(dev_metric, config.targets):
                steps_to_target = step

    test_metric = _evaluate(config, w, federation, test) if test else None
    report = {
        "steps_to_target": steps_to_target,
        "dev_metric": dev_metric,
        "test_metric": test_metric,
        "pooled_examples": n,
        "wall_seconds": time.perf_counter() - t0,
        "config_echo": config.to_dict(),
    }
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_metrics_csv(out / "metrics.csv", metrics)
        _write_report(out / "report.json", report)
    return ExperimentResult(report=report, metrics=metrics)


def _set_dotted(mapping: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = mapping
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def sweep(config: ExperimentConfig, grid: dict[str, list]) -> list[dict]:
    """Cross-product sweep over dotted config paths.

    Every grid point is validated before any point runs. Point i uses master
    seed base+i, so a singleton grid reproduces run_experiment exactly.
    Returns one row per (point, evaluated round) and writes sweep.csv when
    the base config has an output_dir.
    """
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep grid must be a nonempty mapping of parameter lists")
    for key, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep grid entry {key!r} must be a nonempty list")

    keys = list(grid)
    base = config.to_dict()
    points: list[tuple[dict, ExperimentConfig]] = []
    for index, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
        raw = json.loads(json.dumps(base))
        for key, value in zip(keys, combo):
            _set_dotted(raw, key, value)
        raw["master_seed"] = config.master_seed + index
        raw["output_dir"] = None
        try:
            point_config = config_from_dict(raw)
        except ConfigError as exc:
            raise ConfigError(f"sweep point {dict(zip(keys, combo))}: {exc}") from None
        points.append((dict(zip(keys, combo)), point_config))

    rows: list[dict] = []
    for params, point_config in points:
        result = run_experiment(point_config)
        for rec in result.metrics:
            rows.append({**params, "round": rec.round, "dev_metric": rec.dev_metric})

    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sweep.csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(keys + ["round", "dev_metric"])
            for row in rows:
                cells = [
                    json.dumps(row[k]) if isinstance(row[k], (dict, list)) else row[k] for k in keys
                ]
                writer.writerow(cells + [row["round"], row["dev_metric"]])
    return rows
