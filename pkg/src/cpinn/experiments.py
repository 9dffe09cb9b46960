"""One function per experiment: compute, then write CSVs, models and figures."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import conformal, datagen, harness, net, optim, physics
from .config import ExperimentConfig, save_config
from .errors import ParseError
from .harness import fmt

log = logging.getLogger(__name__)

# seed streams derived from the master seed
NOISE, SPLIT, HOLDOUT, INIT, COVERAGE, RECORDS, FRESH = range(10, 17)


@dataclass
class RunDirs:
    root: Path

    def __post_init__(self):
        for sub in ("data", "models", "reports", "plots"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def plots(self) -> Path:
        return self.root / "plots"


def _seed(cfg: ExperimentConfig, stream: int) -> int:
    return harness.stream_seed(cfg.seed, stream, 0)


def write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _training(cfg: ExperimentConfig):
    adam = optim.AdamConfig(cfg.adam_epochs, cfg.lr_start, cfg.lr_end)
    lbfgs = optim.LbfgsConfig(cfg.lbfgs_history, cfg.lbfgs_max_iterations, cfg.gradient_tolerance,
                              cfg.step_tolerance)
    return adam, lbfgs


def _alpha_tag(alpha: float) -> str:
    return f"{alpha:g}"


@dataclass
class ForwardOutcome:
    model: net.MlpModel
    train_result: optim.TrainResult
    half_widths: dict
    reports: dict
    summary: dict


def _conformalize(cfg, dirs, problem, parts, model, clean_truth):
    """Shared conformal stage of both forward experiments."""
    holdout, test = parts["holdout"], parts["test"]
    pred_h = physics.predict(model, problem, holdout.inputs)
    pred_t = physics.predict(model, problem, test.inputs)
    cal_val = datagen.split_indices(len(holdout), (cfg.n_c, cfg.n_v), _seed(cfg, HOLDOUT))

    write_rows(dirs.reports / "holdout_predictions.csv", ("input", "truth", "prediction"),
               [(x[-1], y, p) for x, y, p in zip(holdout.inputs, holdout.observations, pred_h)])

    half_widths, reports, rows = {}, {}, []
    for alpha in cfg.alphas:
        scores = conformal.nonconformity_scores(pred_h[cal_val[0]], holdout.observations[cal_val[0]])
        q = conformal.conformal_quantile(scores, alpha)
        half_widths[alpha] = q
        for x, y, p in zip(test.inputs, test.observations, pred_t):
            iv = conformal.make_interval(p, q, alpha)
            rows.append((alpha, *x, y, clean_truth(x), p, iv.lower, iv.upper, int(conformal.covered(iv, y))))
        report = harness.repeated_split_coverage(pred_h, holdout.observations, cfg.n_c, cfg.n_v, alpha,
                                                 cfg.trials, _seed(cfg, COVERAGE))
        report.write_csv(dirs.reports / f"coverage_alpha{_alpha_tag(alpha)}.csv")
        reports[alpha] = report
    names = [*holdout.input_names]
    write_rows(dirs.reports / "intervals.csv",
               ("alpha", *names, "observation", "truth", "prediction", "lower", "upper", "covered"), rows)
    return half_widths, reports


def _write_traces(dirs, result: optim.TrainResult) -> None:
    write_rows(dirs.reports / "loss_trace.csv", ("epoch", "loss"), enumerate(result.adam.trace))
    if result.lbfgs is not None:
        write_rows(dirs.reports / "lbfgs_trace.csv", ("iteration", "loss"), enumerate(result.lbfgs.history))


def _write_summary(dirs, summary: dict) -> None:
    write_rows(dirs.reports / "summary.csv", ("key", "value"), summary.items())


def _summary_common(cfg, result, half_widths, reports) -> dict:
    s = {"final_loss": float(result.loss), "termination": result.termination,
         "lbfgs_iterations": result.lbfgs.iterations if result.lbfgs else 0}
    for alpha in cfg.alphas:
        tag = _alpha_tag(alpha)
        s[f"half_width_alpha{tag}"] = float(half_widths[alpha])
        s[f"coverage_final_alpha{tag}"] = reports[alpha].final
        s[f"coverage_theoretical_alpha{tag}"] = reports[alpha].theoretical
    return s


def cmd_forward_logistic(cfg: ExperimentConfig, outdir) -> ForwardOutcome:
    cfg.validate()
    dirs = RunDirs(Path(outdir))
    save_config(cfg, dirs.root / "config.ini")

    problem = physics.LogisticProblem(cfg.beta, cfg.n0, (0.0, cfg.t_max))
    clean = datagen.logistic_dataset(cfg.beta, cfg.n0, cfg.t_max, cfg.n_points)
    data = datagen.add_noise(clean, cfg.noise, _seed(cfg, NOISE))
    data.meta["seed"] = cfg.seed
    datagen.save_dataset(data, dirs.data / "dataset.csv")
    parts = datagen.split(data, datagen.SplitSpec(cfg.n_train, cfg.n_holdout, cfg.n_test, _seed(cfg, SPLIT)))
    for name, part in parts.items():
        datagen.save_dataset(part, dirs.data / f"{name}.csv")

    grid = problem.default_grid(cfg.n_collocation)
    weights = physics.LossWeights(cfg.w_data, cfg.w_physics, cfg.w_ic)
    objective = physics.PinnObjective(problem, parts["train"].inputs, parts["train"].observations, grid, weights)
    model0 = net.init_model([1, 10, 10, 1], seed=_seed(cfg, INIT))
    result = optim.train(model0, objective, *_training(cfg))
    model = result.params
    net.save_model(model, dirs.models / "pinn.txt")
    _write_traces(dirs, result)

    def truth(x):
        return float(datagen.logistic_analytic(x[0], cfg.beta, cfg.n0))

    half_widths, reports = _conformalize(cfg, dirs, problem, parts, model, truth)

    t_dense = np.linspace(0.0, cfg.t_max, 301)
    truth_dense = datagen.logistic_analytic(t_dense, cfg.beta, cfg.n0)
    pred_dense = physics.predict(model, problem, t_dense)
    write_rows(dirs.reports / "fit.csv", ("t", "truth", "prediction"), zip(t_dense, truth_dense, pred_dense))

    summary = _summary_common(cfg, result, half_widths, reports)
    summary["max_abs_error"] = float(np.max(np.abs(pred_dense - truth_dense)))
    _write_summary(dirs, summary)

    if cfg.plots:
        from . import plotting
        tr, te = parts["train"], parts["test"]
        plotting.plot_fit(dirs.plots / "fit.svg", t_dense, truth_dense, pred_dense, half_widths,
                          data=[("train", tr.inputs[:, 0], tr.observations),
                                ("test", te.inputs[:, 0], te.observations)],
                          title=f"logistic growth, noise {cfg.noise:g}")
        plotting.plot_coverage(dirs.plots / "coverage.svg", reports, title="repeated-split coverage")
    return ForwardOutcome(model, result, half_widths, reports, summary)


def cmd_forward_bl(cfg: ExperimentConfig, outdir) -> ForwardOutcome:
    cfg.validate()
    dirs = RunDirs(Path(outdir))
    save_config(cfg, dirs.root / "config.ini")

    problem = physics.BuckleyLeverettProblem(u_left=cfg.u_left, u_right=cfg.u_right)
    reference = datagen.solve_bl_reference(problem, cfg.bl_nx, cfg.bl_nt)
    k_ref = int(np.argmin(np.abs(reference.t - cfg.bl_data_time)))
    write_rows(dirs.data / "reference.csv", ("x", "u"), zip(reference.x, reference.u[k_ref]))

    clean = datagen.bl_dataset(reference, cfg.n_points, cfg.bl_data_time, problem.x_domain)
    data = datagen.add_noise(clean, cfg.noise, _seed(cfg, NOISE))
    data.meta["seed"] = cfg.seed
    datagen.save_dataset(data, dirs.data / "dataset.csv")
    parts = datagen.split(data, datagen.SplitSpec(cfg.n_train, cfg.n_holdout, cfg.n_test, _seed(cfg, SPLIT)))
    for name, part in parts.items():
        datagen.save_dataset(part, dirs.data / f"{name}.csv")

    grid = problem.default_grid(cfg.bl_grid_t, cfg.bl_grid_x, cfg.bl_ic_points)
    weights = physics.LossWeights(cfg.w_data, cfg.w_physics, cfg.w_ic)
    objective = physics.PinnObjective(problem, parts["train"].inputs, parts["train"].observations, grid, weights)
    model0 = net.init_model([2, 10, 10, 1], seed=_seed(cfg, INIT))
    result = optim.train(model0, objective, *_training(cfg))
    model = result.params
    net.save_model(model, dirs.models / "pinn.txt")
    _write_traces(dirs, result)

    def truth(x):
        return float(reference.at_time(x[0], [x[1]])[0])

    half_widths, reports = _conformalize(cfg, dirs, problem, parts, model, truth)

    x_dense = reference.x
    truth_dense = reference.u[k_ref]
    tx = np.column_stack([np.full(x_dense.size, reference.t[k_ref]), x_dense])
    pred_dense = physics.predict(model, problem, tx)
    write_rows(dirs.reports / "fit.csv", ("x", "truth", "prediction"), zip(x_dense, truth_dense, pred_dense))

    err = np.abs(pred_dense - truth_dense)
    summary = _summary_common(cfg, result, half_widths, reports)
    summary["max_abs_error"] = float(err.max())
    summary["median_abs_error"] = float(np.median(err))
    summary["reference_mass_defect"] = reference.max_mass_defect
    _write_summary(dirs, summary)

    if cfg.plots:
        from . import plotting
        tr, te = parts["train"], parts["test"]
        plotting.plot_fit(dirs.plots / "fit.svg", x_dense, truth_dense, pred_dense, half_widths,
                          data=[("train", tr.inputs[:, 1], tr.observations),
                                ("test", te.inputs[:, 1], te.observations)],
                          xlabel="x", ylabel=f"u(t={reference.t[k_ref]:g}, x)", title="Buckley-Leverett")
        plotting.plot_coverage(dirs.plots / "coverage.svg", reports, title="repeated-split coverage")
    return ForwardOutcome(model, result, half_widths, reports, summary)


@dataclass
class InverseOutcome:
    records: list
    fresh_report: harness.CoverageReport | None
    fresh_tests: list
    split_reports: dict
    summary: dict


def inverse_setup(cfg: ExperimentConfig) -> harness.InverseSetup:
    adam, lbfgs = _training(cfg)
    return harness.InverseSetup(prior=(cfg.prior_low, cfg.prior_high), points_per_dataset=cfg.points_per_dataset,
                                t_max=cfg.inverse_t_max, n0=cfg.n0, noise_sigma=cfg.noise,
                                n_collocation=cfg.n_collocation, adam=adam, lbfgs=lbfgs)


def cmd_inverse(cfg: ExperimentConfig, outdir) -> InverseOutcome:
    cfg.validate()
    dirs = RunDirs(Path(outdir))
    save_config(cfg, dirs.root / "config.ini")
    setup = inverse_setup(cfg)
    betas = None
    if cfg.beta_sampling == "equispaced":
        betas = cfg.prior_low + (cfg.prior_high - cfg.prior_low) * np.arange(cfg.n_datasets) / cfg.n_datasets

    records = harness.run_inverse_pipeline(setup, cfg.n_datasets, _seed(cfg, RECORDS), betas=betas,
                                           records_path=dirs.data / "records.csv",
                                           model_dir=dirs.models if cfg.save_models else None,
                                           workers=cfg.workers)
    write_rows(dirs.reports / "scatter.csv", ("beta", "beta_hat"), [(r.beta_true, r.beta_hat) for r in records])

    summary: dict = {"n_records": len(records),
                     "failed_records": sum(1 for r in records if not np.isfinite(r.beta_hat))}
    errors = np.array([abs(r.beta_hat - r.beta_true) for r in records])
    summary["median_abs_beta_error"] = float(np.nanmedian(errors))

    fresh_report, fresh_tests = None, []
    if cfg.fresh_tests > 0:
        alpha = cfg.alphas[0]
        fresh_report, fresh_tests = harness.inverse_fresh_test_coverage(
            records, setup, cfg.fresh_n_c, alpha, cfg.fresh_tests, _seed(cfg, FRESH), workers=cfg.workers,
            tests_path=dirs.data / "fresh_tests.csv")
        fresh_report.write_csv(dirs.reports / f"fresh_coverage_alpha{_alpha_tag(alpha)}.csv")
        summary[f"fresh_coverage_final_alpha{_alpha_tag(alpha)}"] = fresh_report.final
        summary[f"fresh_coverage_theoretical_alpha{_alpha_tag(alpha)}"] = fresh_report.theoretical

    split_reports = {}
    for alpha in cfg.alphas:
        report = harness.inverse_repeated_split_coverage(records, cfg.split_n_c, cfg.split_n_v, alpha,
                                                         cfg.trials, _seed(cfg, COVERAGE))
        report.write_csv(dirs.reports / f"split_coverage_alpha{_alpha_tag(alpha)}.csv")
        split_reports[alpha] = report
        summary[f"split_coverage_final_alpha{_alpha_tag(alpha)}"] = report.final
        summary[f"split_coverage_theoretical_alpha{_alpha_tag(alpha)}"] = report.theoretical
    _write_summary(dirs, summary)

    if cfg.plots:
        from . import plotting
        beta = np.array([r.beta_true for r in records])
        beta_hat = np.array([r.beta_hat for r in records])
        plotting.plot_estimates(dirs.plots / "scatter.svg", beta, beta_hat,
                                title=f"{len(records)} datasets, noise {cfg.noise:g}")
        if fresh_report is not None:
            plotting.plot_coverage(dirs.plots / "fresh_coverage.svg", {cfg.alphas[0]: fresh_report},
                                   title="fresh-test coverage")
        plotting.plot_coverage(dirs.plots / "split_coverage.svg", split_reports, title="repeated-split coverage")
    return InverseOutcome(records, fresh_report, fresh_tests, split_reports, summary)


def read_predictions(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse an (input, truth, prediction) CSV; missing columns are named in the error."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in ("input", "truth", "prediction"):
                if col not in header:
                    raise ParseError(f"{path}: missing column {col!r}")
            rows = list(reader)
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    try:
        cols = [np.array([float(r[c]) for r in rows]) for c in ("input", "truth", "prediction")]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: non-numeric value ({exc})") from None
    if cols[0].size == 0:
        raise ParseError(f"{path}: no data rows")
    return cols[0], cols[1], cols[2]


def cmd_coverage(cfg: ExperimentConfig, predictions_file, outdir) -> dict:
    """Coverage analysis of a persisted prediction file, no training.

    With ``n_c = n_v = 0`` in the config, the holdout is split 80/20.
    """
    _, truth, pred = read_predictions(predictions_file)
    n = truth.size
    if cfg.n_c == 0 and cfg.n_v == 0:
        n_c = int(round(0.8 * n))
        cfg = replace(cfg, n_c=n_c, n_v=n - n_c)
    cfg = replace(cfg, n_holdout=cfg.n_c + cfg.n_v)
    cfg.validate()
    if cfg.n_c + cfg.n_v != n:
        raise ParseError(f"{predictions_file}: {n} rows but n_c + n_v = {cfg.n_c + cfg.n_v}")
    dirs = RunDirs(Path(outdir))
    save_config(cfg, dirs.root / "config.ini")
    reports = {}
    for alpha in cfg.alphas:
        report = harness.repeated_split_coverage(pred, truth, cfg.n_c, cfg.n_v, alpha, cfg.trials,
                                                 _seed(cfg, COVERAGE))
        report.write_csv(dirs.reports / f"coverage_alpha{_alpha_tag(alpha)}.csv")
        reports[alpha] = report
    summary = {}
    for alpha, r in reports.items():
        summary[f"coverage_final_alpha{_alpha_tag(alpha)}"] = r.final
        summary[f"coverage_theoretical_alpha{_alpha_tag(alpha)}"] = r.theoretical
    _write_summary(dirs, summary)
    if cfg.plots:
        from . import plotting
        for alpha, r in reports.items():
            plotting.plot_coverage(dirs.plots / f"coverage_alpha{_alpha_tag(alpha)}.svg", {alpha: r})
    return reports
