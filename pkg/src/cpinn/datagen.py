"""Ground-truth solutions, noise injection, and random splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, ParseError
from .physics import BuckleyLeverettProblem, flux, flux_extrema, max_wave_speed


@dataclass
class Dataset:
    inputs: np.ndarray              # (n, d)
    observations: np.ndarray        # (n,)
    meta: dict = field(default_factory=dict)
    input_names: tuple[str, ...] = ("t",)
    observation_name: str = "N"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.observations = np.asarray(self.observations, dtype=np.float64).reshape(-1)
        if self.inputs.shape[0] != self.observations.shape[0]:
            raise ConfigurationError("inputs and observations differ in length")
        if not np.all(np.isfinite(self.observations)):
            raise NumericError("non-finite observation in dataset")

    def __len__(self):
        return self.observations.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(self, inputs=self.inputs[idx], observations=self.observations[idx],
                       meta=dict(self.meta))


@dataclass(frozen=True)
class SplitSpec:
    n_train: int = 25
    n_holdout: int = 100
    n_test: int = 25
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_holdout, self.n_test) < 0:
            raise ConfigurationError("split sizes must be nonnegative")


def logistic_analytic(t, beta: float, n0: float):
    t = np.asarray(t, dtype=np.float64)
    return n0 / (n0 + (1.0 - n0) * np.exp(-beta * t))


def solve_ode_rk4(beta: float, n0: float, t_grid, max_step: float = 0.1) -> np.ndarray:
    """Classical RK4 for the logistic ODE, sub-stepping so no step exceeds ``max_step``."""
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.ndim != 1 or np.any(np.diff(t_grid) <= 0):
        raise ConfigurationError("t_grid must be strictly increasing")

    def rhs(n):
        return beta * n * (1.0 - n)

    out = np.empty_like(t_grid)
    n = float(n0)
    out[0] = n
    for i in range(1, t_grid.size):
        span = t_grid[i] - t_grid[i - 1]
        m = max(1, math.ceil(span / max_step - 1e-12))
        h = span / m
        for _ in range(m):
            k1 = rhs(n)
            k2 = rhs(n + 0.5 * h * k1)
            k3 = rhs(n + 0.5 * h * k2)
            k4 = rhs(n + h * k3)
            n += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out[i] = n
    return out


def godunov_flux(ul, ur, orientation: int = 1):
    """Exact Godunov interface flux for u_t + s f(u)_x = 0, s = ``orientation``.

    For the scaled flux g = s f this is min g over [ul, ur] when ul <= ur and
    max g over [ur, ul] otherwise.
    """
    fmin, fmax = flux_extrema(ul, ur)
    rising = np.asarray(ul) <= np.asarray(ur)
    if orientation > 0:
        return np.where(rising, fmin, fmax)
    return np.where(rising, -fmax, -fmin)


@dataclass
class BLSolution:
    t: np.ndarray                   # (nt,)
    x: np.ndarray                   # (nx,) cell centers
    u: np.ndarray                   # (nt, nx)
    max_mass_defect: float
    max_cfl: float

    def profile(self, t_index: int, x_query) -> np.ndarray:
        return np.interp(np.asarray(x_query, dtype=np.float64), self.x, self.u[t_index])

    def at_time(self, t: float, x_query) -> np.ndarray:
        i = int(np.argmin(np.abs(self.t - t)))
        return self.profile(i, x_query)


def solve_bl_reference(problem: BuckleyLeverettProblem = BuckleyLeverettProblem(), nx: int = 800,
                       nt: int = 101, cfl: float = 0.9, initial=None) -> BLSolution:
    """Godunov finite volumes for u_t - f(u)_x = 0 with zero-gradient boundaries.

    Output is sampled at ``nt`` equispaced times; between samples the scheme
    sub-steps with dt = cfl * dx / max|f'|.
    """
    if nx < 16 or nt < 16:
        raise ConfigurationError("nx and nt must be at least 16")
    if not 0 < cfl <= 0.9:
        raise ConfigurationError("CFL number must lie in (0, 0.9]")
    x0, x1 = problem.x_domain
    dx = (x1 - x0) / nx
    x = x0 + (np.arange(nx) + 0.5) * dx
    u = problem.initial_condition(x) if initial is None else np.asarray(initial, dtype=np.float64).copy()
    speed = max_wave_speed(float(u.min()), float(u.max()))
    times = np.linspace(*problem.t_domain, nt)
    out = np.empty((nt, nx))
    out[0] = u
    max_defect = 0.0
    max_cfl = 0.0
    t = times[0]
    for k in range(1, nt):
        while t < times[k]:
            dt = times[k] - t
            if speed > 0:
                dt = min(dt, cfl * dx / speed)
            ext = np.concatenate([u[:1], u, u[-1:]])
            F = godunov_flux(ext[:-1], ext[1:], orientation=-1)
            new = u - dt / dx * (F[1:] - F[:-1])
            if not np.all(np.isfinite(new)):
                raise NumericError(f"non-finite state at t={t}")
            defect = abs((new.sum() - u.sum()) * dx + dt * (F[-1] - F[0]))
            max_defect = max(max_defect, defect)
            max_cfl = max(max_cfl, speed * dt / dx)
            u = new
            t = times[k] if dt == times[k] - t else t + dt
        out[k] = u
    return BLSolution(times, x, out, max_defect, max_cfl)


def logistic_dataset(beta: float = 0.05, n0: float = 0.1, t_max: float = 150.0,
                     n_points: int = 150) -> Dataset:
    t = np.linspace(0.0, t_max, n_points)
    n = solve_ode_rk4(beta, n0, t)
    return Dataset(t[:, None], n, {"problem": "logistic", "true_beta": beta, "n0": n0,
                                   "noise_sigma": 0.0, "seed": None})


def bl_dataset(solution: BLSolution, n_points: int = 150, t_value: float = 1.0,
               x_domain=(-1.0, 1.0)) -> Dataset:
    x = np.linspace(*x_domain, n_points)
    u = solution.at_time(t_value, x)
    inputs = np.column_stack([np.full(n_points, t_value), x])
    return Dataset(inputs, u, {"problem": "buckley-leverett", "noise_sigma": 0.0, "seed": None},
                   input_names=("t", "x"), observation_name="u")


def add_noise(dataset: Dataset, sigma: float, seed) -> Dataset:
    if sigma < 0:
        raise ConfigurationError(f"noise sigma must be >= 0, got {sigma}")
    meta = dict(dataset.meta, noise_sigma=float(sigma), noise_seed=seed)
    if sigma == 0:
        return replace(dataset, inputs=dataset.inputs.copy(), observations=dataset.observations.copy(),
                       meta=meta)
    rng = np.random.default_rng(seed)
    noisy = dataset.observations + rng.normal(0.0, sigma, size=len(dataset))
    return replace(dataset, inputs=dataset.inputs.copy(), observations=noisy, meta=meta)


def split_indices(n: int, sizes, seed) -> list[np.ndarray]:
    if sum(sizes) != n:
        raise ConfigurationError(f"split sizes {tuple(sizes)} do not sum to dataset length {n}")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0, *sizes])
    return [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def split(dataset: Dataset, spec: SplitSpec) -> dict[str, Dataset]:
    """Uniformly random train/holdout/test partition."""
    parts = split_indices(len(dataset), (spec.n_train, spec.n_holdout, spec.n_test), spec.seed)
    return {name: dataset.subset(idx) for name, idx in zip(("train", "holdout", "test"), parts)}


def split_holdout(holdout: Dataset, n_c: int, n_v: int, seed) -> dict[str, Dataset]:
    cal, val = split_indices(len(holdout), (n_c, n_v), seed)
    return {"calibration": holdout.subset(cal), "validation": holdout.subset(val)}


def save_dataset(dataset: Dataset, path) -> None:
    """CSV with full-precision floats plus a ``.meta.json`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.input_names, dataset.observation_name])
        for x, y in zip(dataset.inputs, dataset.observations):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    meta = {"meta": dataset.meta, "input_names": list(dataset.input_names),
            "observation_name": dataset.observation_name}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    try:
        values = np.array([[float(v) for v in row] for row in body], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    values = values.reshape(-1, len(header))
    meta_path = path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text())["meta"] if meta_path.exists() else {}
    return Dataset(values[:, :-1], values[:, -1], meta, tuple(header[:-1]), header[-1])
