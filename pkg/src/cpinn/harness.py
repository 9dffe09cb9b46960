"""Coverage validation: repeated calibration/validation splits and the
inverse-problem pipeline with fresh test datasets."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import conformal, net, optim
from .datagen import add_noise, solve_ode_rk4, Dataset
from .errors import ConfigurationError, CpinnError
from .physics import LogisticProblem, PinnObjective

log = logging.getLogger(__name__)

# stream tags for counter-based seeding
RECORD_STREAM = 1
FRESH_TEST_STREAM = 2
CALIBRATION_STREAM = 3

RECORD_FIELDS = ("index", "beta_true", "beta_hat", "seed", "final_loss", "termination",
                 "iterations")
REPORT_FIELDS = ("trial", "coverage", "running_mean", "theoretical")


def fmt(x) -> str:
    """Shortest repr that round-trips a double."""
    return repr(float(x))


@dataclass
class CoverageReport:
    coverages: np.ndarray
    theoretical: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coverages = np.asarray(self.coverages, dtype=np.float64)

    @property
    def running_mean(self) -> np.ndarray:
        return np.cumsum(self.coverages) / np.arange(1, self.coverages.size + 1)

    @property
    def trials(self) -> int:
        return self.coverages.size

    @property
    def final(self) -> float:
        return float(self.running_mean[-1])

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_FIELDS)
            for i, (c, m) in enumerate(zip(self.coverages, self.running_mean), start=1):
                w.writerow([i, fmt(c), fmt(m), fmt(self.theoretical)])


def repeated_split_coverage(predictions, truths, n_c: int, n_v: int, alpha: float,
                            trials: int, seed) -> CoverageReport:
    """Re-split a fixed holdout many times; per split, the fraction of
    validation truths inside prediction +/- calibration quantile."""
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    truths = np.asarray(truths, dtype=np.float64).reshape(-1)
    if predictions.shape != truths.shape:
        raise ConfigurationError("predictions and truths differ in length")
    if predictions.size != n_c + n_v:
        raise ConfigurationError(f"holdout has {predictions.size} points, expected n_c + n_v = {n_c + n_v}")
    if trials < 1 or n_c < 1 or n_v < 1:
        raise ConfigurationError("need trials, n_c, n_v >= 1")
    target = conformal.theoretical_coverage(n_c, alpha)
    scores = _scores(predictions, truths)
    rng = np.random.default_rng(seed)
    out = np.empty(trials)
    for i in range(trials):
        perm = rng.permutation(predictions.size)
        cal, val = perm[:n_c], perm[n_c:]
        q = _quantile_with_inf(scores[cal], alpha)
        out[i] = conformal.covered_many(predictions[val], q, truths[val]).mean()
    return CoverageReport(out, target, {"n_c": n_c, "n_v": n_v, "alpha": alpha,
                                        "trials": trials, "seed": seed})


@dataclass
class InverseRecord:
    index: int
    beta_true: float
    beta_hat: float
    seed: int
    final_loss: float
    termination: str
    iterations: int = 0

    def row(self) -> list[str]:
        return [str(self.index), fmt(self.beta_true), fmt(self.beta_hat), str(self.seed),
                fmt(self.final_loss), self.termination, str(self.iterations)]


@dataclass(frozen=True)
class InverseSetup:
    """Everything needed to generate one inverse dataset and fit beta to it."""

    prior: tuple[float, float] = (0.0, 0.5)
    points_per_dataset: int = 10
    t_max: float = 30.0
    n0: float = 0.1
    noise_sigma: float = 0.0
    n_collocation: int = 200
    layer_sizes: tuple[int, ...] = (1, 10, 10, 1)
    adam: optim.AdamConfig = optim.AdamConfig()
    lbfgs: optim.LbfgsConfig = optim.LbfgsConfig()

    def __post_init__(self):
        lo, hi = self.prior
        if not hi > lo:
            raise ConfigurationError(f"empty prior support {self.prior}")
        if self.points_per_dataset < 2:
            raise ConfigurationError("need at least two points per dataset")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise sigma must be >= 0")


def stream_seed(master: int, stream: int, index: int) -> int:
    """Counter-based per-item seed: reproducible for any single index."""
    return int(np.random.SeedSequence([int(master), stream, int(index)]).generate_state(1)[0])


def _sub_seeds(seed: int) -> tuple[int, int, int]:
    """Independent (beta draw, noise, weight init) seeds for one item."""
    states = np.random.SeedSequence(int(seed)).generate_state(3)
    return int(states[0]), int(states[1]), int(states[2])


def inverse_dataset(beta: float, setup: InverseSetup, seed: int) -> Dataset:
    t = np.linspace(0.0, setup.t_max, setup.points_per_dataset)
    clean = Dataset(t[:, None], solve_ode_rk4(beta, setup.n0, t),
                    {"problem": "logistic-inverse", "true_beta": beta, "n0": setup.n0, "seed": seed})
    return add_noise(clean, setup.noise_sigma, _sub_seeds(seed)[1])


def fit_beta(dataset: Dataset, setup: InverseSetup, seed: int):
    """Train a freshly initialized inverse-mode PINN; returns (model, TrainResult)."""
    problem = LogisticProblem(beta=float("nan"), n0=setup.n0, t_domain=(0.0, setup.t_max),
                              inverse_mode=True)
    objective = PinnObjective(problem, dataset.inputs, dataset.observations,
                              problem.default_grid(setup.n_collocation))
    model = net.init_model(setup.layer_sizes, seed=_sub_seeds(seed)[2], inverse_mode=True)
    result = optim.train(model, objective, setup.adam, setup.lbfgs)
    return result.params, result


def _estimate(beta: float, setup: InverseSetup, seed: int, index: int) -> tuple[InverseRecord, net.MlpModel | None]:
    data = inverse_dataset(beta, setup, seed)
    try:
        model, result = fit_beta(data, setup, seed)
    except CpinnError as exc:
        # keep the record: dropping failed fits would break exchangeability
        log.warning("record %d: training failed (%s)", index, exc)
        return InverseRecord(index, beta, float("nan"), seed, float("nan"),
                             f"error:{exc.category}"), None
    iters = result.lbfgs.iterations if result.lbfgs else 0
    return InverseRecord(index, beta, float(model.beta), seed, result.loss, result.termination,
                         iters), model


def _record_job(args):
    index, beta, setup, seed = args
    return _estimate(beta, setup, seed, index)


def _draw_beta(setup: InverseSetup, seed: int) -> float:
    lo, hi = setup.prior
    return float(np.random.default_rng(_sub_seeds(seed)[0]).uniform(lo, hi))


def equispaced_betas(n: int = 100, upper: float = 0.5) -> np.ndarray:
    return upper * np.arange(n) / n


def _map(fn, jobs: Iterable, workers: int):
    if workers <= 1:
        yield from map(fn, jobs)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, jobs, chunksize=1)


def run_inverse_pipeline(setup: InverseSetup, n_datasets: int, seed: int,
                         betas: Sequence[float] | None = None, records_path=None,
                         model_dir=None, workers: int = 1) -> list[InverseRecord]:
    """Sample beta_j, simulate D_j, fit beta_hat_j with its own PINN.

    When ``records_path`` is given, records are appended to that CSV as they
    complete, in index order.  ``betas`` overrides sampling from the prior.
    """
    if n_datasets < 1:
        raise ConfigurationError("n_datasets must be >= 1")
    if betas is not None and len(betas) != n_datasets:
        raise ConfigurationError("explicit betas must have length n_datasets")
    jobs = []
    for j in range(n_datasets):
        s = stream_seed(seed, RECORD_STREAM, j)
        beta = float(betas[j]) if betas is not None else _draw_beta(setup, s)
        jobs.append((j, beta, setup, s))

    fh = writer = None
    if records_path is not None:
        fh = Path(records_path).open("w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        fh.flush()
    records = []
    try:
        for record, model in _map(_record_job, jobs, workers):
            records.append(record)
            if writer is not None:
                writer.writerow(record.row())
                fh.flush()
            if model_dir is not None and model is not None:
                net.save_model(model, Path(model_dir) / f"record_{record.index:05d}.txt")
            log.debug("record %d: beta=%.5f beta_hat=%.5f (%s)", record.index, record.beta_true,
                      record.beta_hat, record.termination)
    finally:
        if fh is not None:
            fh.close()
    return records


def read_records(path) -> list[InverseRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [InverseRecord(int(r["index"]), float(r["beta_true"]), float(r["beta_hat"]), int(r["seed"]),
                          float(r["final_loss"]), r["termination"], int(r.get("iterations") or 0))
            for r in rows]


def _record_arrays(records: Sequence[InverseRecord]) -> tuple[np.ndarray, np.ndarray]:
    beta = np.array([r.beta_true for r in records])
    beta_hat = np.array([r.beta_hat for r in records])
    return beta, beta_hat


@dataclass
class FreshTest:
    index: int
    beta_test: float
    beta_hat_test: float
    half_width: float
    covered: bool


def inverse_fresh_test_coverage(records: Sequence[InverseRecord], setup: InverseSetup, n_c: int = 800,
                                alpha: float = 0.2, n_tests: int = 1000, seed: int = 0,
                                workers: int = 1, tests_path=None) -> tuple[CoverageReport, list[FreshTest]]:
    """Coverage of beta_hat_test +/- q for fresh (beta_test, D_test) draws.

    The calibration subset of size ``n_c`` is redrawn from the records for
    every test, so the estimate is marginal over both.
    """
    if len(records) < n_c:
        raise ConfigurationError(f"need at least n_c={n_c} records, have {len(records)}")
    if n_tests < 1:
        raise ConfigurationError("n_tests must be >= 1")
    beta, beta_hat = _record_arrays(records)
    scores = _scores(beta_hat, beta)
    jobs = []
    for i in range(n_tests):
        s = stream_seed(seed, FRESH_TEST_STREAM, i)
        jobs.append((i, _draw_beta(setup, s), setup, s))

    target = conformal.theoretical_coverage(n_c, alpha)
    tests: list[FreshTest] = []
    fh = writer = None
    if tests_path is not None:
        fh = Path(tests_path).open("w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["test", "beta_test", "beta_hat_test", "half_width", "covered"])
    try:
        for record, _ in _map(_record_job, jobs, workers):
            rng = np.random.default_rng(stream_seed(seed, CALIBRATION_STREAM, record.index))
            cal = rng.choice(len(records), size=n_c, replace=False)
            q = _quantile_with_inf(scores[cal], alpha)
            hit = bool(np.isfinite(record.beta_hat)) and conformal.covered(
                conformal.make_interval(record.beta_hat, q, alpha), record.beta_true)
            test = FreshTest(record.index, record.beta_true, record.beta_hat, q, hit)
            tests.append(test)
            if writer is not None:
                writer.writerow([test.index, fmt(test.beta_test), fmt(test.beta_hat_test),
                                 fmt(test.half_width), int(test.covered)])
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    report = CoverageReport([float(t.covered) for t in tests], target,
                            {"n_c": n_c, "alpha": alpha, "n_tests": n_tests, "seed": seed})
    return report, tests


def _scores(predictions: np.ndarray, truths: np.ndarray) -> np.ndarray:
    # a failed fit (nan estimate) scores as infinitely wrong rather than being dropped
    scores = np.abs(truths - predictions)
    return np.where(np.isnan(scores), np.inf, scores)


def _quantile_with_inf(scores: np.ndarray, alpha: float) -> float:
    """Same rule as :func:`conformal.conformal_quantile`, tolerating infinite scores."""
    if np.all(np.isfinite(scores)):
        return conformal.conformal_quantile(scores, alpha)
    k = conformal.quantile_rank(scores.size, alpha)
    if k > scores.size:
        return float("inf")
    return float(np.sort(scores, kind="stable")[k - 1])


def inverse_repeated_split_coverage(records: Sequence[InverseRecord], n_c: int, n_v: int, alpha: float,
                                    trials: int, seed) -> CoverageReport:
    beta, beta_hat = _record_arrays(records)
    return repeated_split_coverage(beta_hat, beta, n_c, n_v, alpha, trials, seed)
