"""Experiment configuration stored as a sectioned INI file."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import conformal
from .errors import ConfigurationError

EXPERIMENTS = ("forward-logistic", "forward-bl", "inverse", "coverage")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "forward-logistic"
    seed: int = 0
    plots: bool = True
    workers: int = 1

    # problem
    beta: float = 0.05
    n0: float = 0.1
    t_max: float = 150.0
    u_left: float = -3.0
    u_right: float = 3.0

    # data
    noise: float = 0.08
    n_points: int = 150
    n_train: int = 25
    n_holdout: int = 100
    n_test: int = 25
    bl_nx: int = 800
    bl_nt: int = 101
    bl_data_time: float = 1.0

    # conformal
    alphas: tuple[float, ...] = (0.1, 0.5)
    n_c: int = 80
    n_v: int = 20
    trials: int = 10000

    # training
    adam_epochs: int = 100
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    lbfgs_max_iterations: int = 5000
    lbfgs_history: int = 50
    gradient_tolerance: float = 1e-9
    step_tolerance: float = 1e-12
    n_collocation: int = 200
    bl_grid_t: int = 50
    bl_grid_x: int = 50
    bl_ic_points: int = 100
    w_data: float = 1.0
    w_physics: float = 1.0
    w_ic: float = 1.0

    # inverse
    n_datasets: int = 1000
    points_per_dataset: int = 10
    inverse_t_max: float = 30.0
    prior_low: float = 0.0
    prior_high: float = 0.5
    beta_sampling: str = "uniform"
    fresh_tests: int = 1000
    fresh_n_c: int = 800
    split_n_c: int = 800
    split_n_v: int = 200
    save_models: bool = True

    def validate(self) -> "ExperimentConfig":
        """Check sizes are self-consistent before any compute."""
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if not self.alphas:
            raise ConfigurationError("alpha list is empty")
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ConfigurationError(f"alpha must lie in (0, 1), got {a}")
        if self.noise < 0:
            raise ConfigurationError("noise must be >= 0")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.experiment in ("forward-logistic", "forward-bl"):
            if self.n_train + self.n_holdout + self.n_test != self.n_points:
                raise ConfigurationError(
                    f"n_train + n_holdout + n_test = {self.n_train + self.n_holdout + self.n_test}"
                    f" but n_points = {self.n_points}")
            if self.n_c + self.n_v != self.n_holdout:
                raise ConfigurationError(f"n_c + n_v = {self.n_c + self.n_v} but n_holdout = {self.n_holdout}")
            if min(self.n_train, self.n_c, self.n_v, self.n_test) < 1:
                raise ConfigurationError("train, calibration, validation and test parts must be nonempty")
        if self.experiment == "inverse":
            if self.beta_sampling not in ("uniform", "equispaced"):
                raise ConfigurationError(f"beta_sampling must be uniform or equispaced, got {self.beta_sampling!r}")
            if self.n_datasets < 1:
                raise ConfigurationError("n_datasets must be >= 1")
            if self.fresh_tests and self.fresh_n_c > self.n_datasets:
                raise ConfigurationError(f"fresh_n_c = {self.fresh_n_c} exceeds n_datasets = {self.n_datasets}")
            if self.split_n_c + self.split_n_v != self.n_datasets:
                raise ConfigurationError(f"split_n_c + split_n_v = {self.split_n_c + self.split_n_v}"
                                         f" but n_datasets = {self.n_datasets}")
            if not self.prior_high > self.prior_low:
                raise ConfigurationError("prior_high must exceed prior_low")
        return self


SECTIONS = {
    "experiment": ("experiment", "seed", "plots", "workers"),
    "problem": ("beta", "n0", "t_max", "u_left", "u_right"),
    "data": ("noise", "n_points", "n_train", "n_holdout", "n_test", "bl_nx", "bl_nt", "bl_data_time"),
    "conformal": ("alphas", "n_c", "n_v", "trials"),
    "training": ("adam_epochs", "lr_start", "lr_end", "lbfgs_max_iterations", "lbfgs_history",
                 "gradient_tolerance", "step_tolerance", "n_collocation", "bl_grid_t", "bl_grid_x",
                 "bl_ic_points", "w_data", "w_physics", "w_ic"),
    "inverse": ("n_datasets", "points_per_dataset", "inverse_t_max", "prior_low", "prior_high",
                "beta_sampling", "fresh_tests", "fresh_n_c", "split_n_c", "split_n_v", "save_models"),
}
_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
assert set(_FIELDS) == {k for keys in SECTIONS.values() for k in keys}


def defaults_for(experiment: str) -> ExperimentConfig:
    """Per-experiment defaults (noise, alpha list) on top of the shared ones."""
    base = ExperimentConfig(experiment=experiment)
    if experiment == "forward-bl":
        return replace(base, noise=0.0, alphas=(0.1, 0.15))
    if experiment == "inverse":
        return replace(base, noise=0.0, alphas=(0.2,))
    if experiment == "coverage":
        return replace(base, alphas=(0.1,), n_c=0, n_v=0)
    return base


def reduced_inverse(cfg: ExperimentConfig) -> ExperimentConfig:
    """Smaller inverse run (200 records, 100 fresh tests) for quick checks."""
    return replace(cfg, n_datasets=200, fresh_tests=100, fresh_n_c=160, split_n_c=160, split_n_v=40)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(name: str, text: str):
    kind = type(getattr(ExperimentConfig, name))
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {text!r}") from None
    return text


def coerce(name: str, value):
    if name not in _FIELDS:
        raise ConfigurationError(f"unknown config key {name!r}")
    return _parse(name, value) if isinstance(value, str) else value


def save_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()
    for section, keys in SECTIONS.items():
        parser[section] = {k: _format(getattr(cfg, k)) for k in keys}
    with Path(path).open("w") as fh:
        parser.write(fh)


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigurationError(f"cannot read config file {path}")
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, text in parser[section].items():
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
            values[key] = coerce(key, text)
    name = experiment or values.get("experiment", "forward-logistic")
    if experiment and values.get("experiment", experiment) != experiment:
        raise ConfigurationError(f"config is for {values['experiment']!r}, not {experiment!r}")
    values["experiment"] = name
    return replace(defaults_for(name), **values)


def theoretical_target(cfg: ExperimentConfig, alpha: float) -> float:
    return conformal.theoretical_coverage(cfg.n_c, alpha)
