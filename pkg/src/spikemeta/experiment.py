"""Experiment configuration and the end-to-end runner.

A YAML config describes the network, the learning rule, the meta-loop, the
task family, and the run schedule. The runner executes the meta-training
stream for each seed, then a frozen-initialization adaptation phase on fresh
tasks, and writes per-seed metric CSVs, aggregate curves, checkpoints, and a
resolved-config snapshot.
"""

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .datasets import SyntheticTaskFamily
from .learning import LearnConfig
from .metalearn import (
    METHODS,
    MetaConfig,
    RunMetrics,
    evaluate_adaptation,
    run_task_stream,
)
from .network import make_network, save_checkpoint

log = logging.getLogger("spikemeta")


class ConfigError(ValueError):
    pass


_DEFAULTS: dict = {
    "method": "meta",
    "seed": 0,
    "seeds": None,            # list of ints; overrides `seed` when given
    "output_dir": "runs",
    "network": {
        "preset": "full-recurrent",
        "hidden": 4,
        "window_len": 10,
        "k_alpha": 8,
        "k_beta": None,       # defaults to k_alpha
    },
    "learn": {
        "eta": 0.001,
        "kappa": 0.2,
        "delta_s": 5,
        "reg_lambda": 0.0,
        "reset_between_examples": True,
    },
    "meta": {
        "mu": 0.1,
        "n_tasks": 5,
        "m_examples": 2,
        "batch_size": 2,
        "meta_cadence": 1,
        "eval_cadence": 1,
        "eval_repeats": 5,
        "init_scale": 0.4,
        "buffer_capacity": None,
    },
    "family": {
        "seed": 0,
        "channels": 8,
        "distractors": 8,
        "horizon": 10,
        "prototypes": 5,
        "difficulty": 0.5,
        "max_rate": 1.0,
        "active_rate": 0.9,
        "inactive_rate": 0.05,
        "train_per_class": 10,
        "test_per_class": 6,
    },
    "run": {
        "meta_steps": 15,
        "eval_tasks": 6,
        "eval_train_per_class": 7,
        "checkpoint_every": 0,   # 0 disables periodic checkpoints
    },
}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _parse_set_value(raw: str):
    return yaml.safe_load(raw)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply `--set dotted.key=value` overrides onto a raw config dict."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        node = cfg
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into {dotted!r}")
        node[parts[-1]] = _parse_set_value(raw)
    return cfg


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_file(cls, path, overrides: list[str] | None = None):
        try:
            with open(path) as f:
                user = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config is not valid YAML: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        if overrides:
            user = apply_overrides(user, overrides)
        return cls.from_dict(user)

    @classmethod
    def from_dict(cls, user: dict):
        merged = _merge(_DEFAULTS, user)
        if merged["method"] not in METHODS:
            raise ConfigError(
                f"method must be one of {METHODS}, got {merged['method']!r}"
            )
        if merged["seeds"] is not None:
            if not isinstance(merged["seeds"], list) or not merged["seeds"]:
                raise ConfigError("seeds must be a nonempty list of integers")
        try:
            cfg = cls(raw=merged)
            cfg.learn_config()
            cfg.meta_config()
            cfg.family()
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e
        return cfg

    # -- materialized sub-configs ------------------------------------------
    def seeds(self) -> list[int]:
        if self.raw["seeds"] is not None:
            return [int(s) for s in self.raw["seeds"]]
        return [int(self.raw["seed"])]

    def learn_config(self) -> LearnConfig:
        d = self.raw["learn"]
        return LearnConfig(
            eta=float(d["eta"]),
            kappa=float(d["kappa"]),
            delta_s=int(d["delta_s"]),
            reg_lambda=float(d["reg_lambda"]),
            reset_between_examples=bool(d["reset_between_examples"]),
        )

    def meta_config(self) -> MetaConfig:
        d = self.raw["meta"]
        mu = float(d["mu"])
        if self.raw["method"] == "conventional" and mu != 0.0:
            log.warning(
                "method is 'conventional': meta-learning rate mu=%g is ignored",
                mu,
            )
        return MetaConfig(
            mu=mu,
            n_tasks=int(d["n_tasks"]),
            m_examples=int(d["m_examples"]),
            batch_size=int(d["batch_size"]),
            inner=self.learn_config(),
            meta_cadence=int(d["meta_cadence"]),
            eval_cadence=int(d["eval_cadence"]),
            eval_repeats=int(d["eval_repeats"]),
            init_scale=float(d["init_scale"]),
            buffer_capacity=(
                None if d["buffer_capacity"] is None
                else int(d["buffer_capacity"])
            ),
        )

    def family(self) -> SyntheticTaskFamily:
        d = self.raw["family"]
        return SyntheticTaskFamily(
            family_seed=int(d["seed"]),
            num_channels=int(d["channels"]),
            num_distractors=int(d["distractors"]),
            horizon=int(d["horizon"]),
            num_prototypes=int(d["prototypes"]),
            difficulty=float(d["difficulty"]),
            max_rate=float(d["max_rate"]),
            active_rate=float(d["active_rate"]),
            inactive_rate=float(d["inactive_rate"]),
        )

    def network_spec(self):
        n = self.raw["network"]
        fam = self.raw["family"]
        return make_network(
            n_inputs=int(fam["channels"]) + int(fam["distractors"]),
            n_visible=2,
            n_hidden=int(n["hidden"]),
            window_len=int(n["window_len"]),
            k_alpha=int(n["k_alpha"]),
            k_beta=None if n["k_beta"] is None else int(n["k_beta"]),
            preset=n["preset"],
        )


def _aggregate(rows_by_seed: dict, out_path: Path):
    """Mean/std of accuracy and logloss across seeds, grouped by (t, i)."""
    groups: dict = {}
    for seed, metrics in rows_by_seed.items():
        for r in metrics.records:
            groups.setdefault((r.t, r.i), []).append(
                (r.test_accuracy, r.test_logloss)
            )
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([
            "t", "i", "mean_accuracy", "std_accuracy",
            "mean_logloss", "std_logloss", "n_seeds",
        ])
        for (t, i) in sorted(groups):
            vals = np.array(groups[(t, i)])
            w.writerow([
                t, i,
                format(vals[:, 0].mean(), ".17g"),
                format(vals[:, 0].std(), ".17g"),
                format(vals[:, 1].mean(), ".17g"),
                format(vals[:, 1].std(), ".17g"),
                len(vals),
            ])


def _adaptation_curve(metrics: RunMetrics) -> dict:
    """Mean accuracy per within-task step, averaged over tasks."""
    by_i: dict = {}
    for r in metrics.records:
        by_i.setdefault(r.i, []).append(r.test_accuracy)
    return {i: float(np.mean(v)) for i, v in sorted(by_i.items())}


def run_single_seed(config: ExperimentConfig, seed: int):
    """Meta-training stream plus frozen-initialization evaluation phase.

    Returns (train_metrics, eval_metrics, theta).
    """
    raw = config.raw
    method = raw["method"]
    family = config.family()
    spec = config.network_spec()
    cfg = config.meta_config()
    fam = raw["family"]
    run = raw["run"]

    train_tasks = [
        family.sample_task(
            task_seed=seed * 100_000 + k,
            per_class_train=int(fam["train_per_class"]),
            per_class_test=int(fam["test_per_class"]),
        )
        for k in range(int(run["meta_steps"]))
    ]
    eval_tasks = [
        family.sample_task(
            task_seed=seed * 100_000 + 50_000 + k,
            per_class_train=int(run["eval_train_per_class"]),
            per_class_test=int(fam["test_per_class"]),
        )
        for k in range(int(run["eval_tasks"]))
    ]

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train_rng, eval_rng = rng.spawn(2)
    train_metrics, theta, _ = run_task_stream(
        train_tasks, spec, cfg, train_rng, method=method
    )
    eval_metrics = RunMetrics()
    if eval_tasks:
        eval_metrics = evaluate_adaptation(
            theta, eval_tasks, spec, cfg, eval_rng, method=method
        )
    return train_metrics, eval_metrics, theta


def run_experiment(config: ExperimentConfig, output_dir=None) -> Path:
    """Execute the configured experiment for every seed; write artifacts.

    Returns the output directory.
    """
    raw = config.raw
    out = Path(output_dir or raw["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.resolved.yaml", "w") as f:
        yaml.safe_dump(raw, f, sort_keys=True)

    spec = config.network_spec()
    train_by_seed, eval_by_seed = {}, {}
    for seed in config.seeds():
        train_metrics, eval_metrics, theta = run_single_seed(config, seed)
        train_metrics.write_csv(out / f"train_metrics_seed{seed}.csv")
        eval_metrics.write_csv(out / f"eval_metrics_seed{seed}.csv")
        save_checkpoint(out / f"theta_seed{seed}.ckpt", spec, theta)
        train_by_seed[seed] = train_metrics
        eval_by_seed[seed] = eval_metrics
        log.info("seed %d done (%d train records, %d eval records)",
                 seed, len(train_metrics.records), len(eval_metrics.records))

    _aggregate(train_by_seed, out / "train_aggregate.csv")
    _aggregate(eval_by_seed, out / "eval_aggregate.csv")

    # plot-ready adaptation curve: accuracy vs within-task step, averaged
    # over evaluation tasks and seeds
    by_i: dict = {}
    for metrics in eval_by_seed.values():
        for i, acc in _adaptation_curve(metrics).items():
            by_i.setdefault(i, []).append(acc)
    with open(out / "adaptation_curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["i", "examples_seen", "mean_accuracy", "std_accuracy"])
        bsz = int(raw["meta"]["batch_size"])
        for i in sorted(by_i):
            vals = np.array(by_i[i])
            w.writerow([
                i, i * bsz,
                format(vals.mean(), ".17g"),
                format(vals.std(), ".17g"),
            ])
    return out
