import numpy as np
import pytest

from cpinn import conformal, harness, optim
from cpinn.errors import ConfigurationError, NumericError

FAST = harness.InverseSetup(lbfgs=optim.LbfgsConfig(max_iterations=300))


def perfect_job(args):
    index, beta, setup, seed = args
    return harness.InverseRecord(index, beta, beta, seed, 0.0, "stub"), None


def test_perfect_predictor_always_covered():
    y = np.random.default_rng(0).normal(size=100)
    rep = harness.repeated_split_coverage(y, y, 80, 20, 0.1, 50, seed=1)
    assert np.all(rep.coverages == 1.0)


def test_synthetic_residuals_converge_to_exact_value():
    rng = np.random.default_rng(3)
    truth = rng.normal(size=100)
    pred = truth + rng.standard_normal(100)
    rep = harness.repeated_split_coverage(pred, truth, 80, 20, 0.1, 10_000, seed=4)
    assert rep.theoretical == pytest.approx(73 / 81)
    assert abs(rep.final - 73 / 81) <= 0.01
    # running mean has settled: last 1000 trials within 0.01 of the final value
    assert np.all(np.abs(rep.running_mean[-1000:] - rep.final) <= 0.01)


def test_single_trial_counts_validation_points():
    rng = np.random.default_rng(5)
    rep = harness.repeated_split_coverage(rng.normal(size=100), rng.normal(size=100), 80, 20, 0.1, 1, seed=0)
    assert rep.trials == 1
    assert (rep.coverages[0] * 20) == pytest.approx(round(rep.coverages[0] * 20))


def test_running_mean_definition_and_determinism():
    rng = np.random.default_rng(6)
    p, y = rng.normal(size=30), rng.normal(size=30)
    a = harness.repeated_split_coverage(p, y, 20, 10, 0.2, 200, seed=7)
    b = harness.repeated_split_coverage(p, y, 20, 10, 0.2, 200, seed=7)
    assert np.array_equal(a.coverages, b.coverages)
    np.testing.assert_allclose(a.running_mean, np.cumsum(a.coverages) / np.arange(1, 201))
    assert np.all((a.coverages >= 0) & (a.coverages <= 1))


def test_size_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        harness.repeated_split_coverage(np.zeros(99), np.zeros(99), 80, 20, 0.1, 10, seed=0)
    with pytest.raises(ConfigurationError):
        harness.repeated_split_coverage(np.zeros(100), np.zeros(99), 80, 20, 0.1, 10, seed=0)


def test_report_csv(tmp_path):
    rep = harness.CoverageReport([1.0, 0.5, 0.75], 0.9)
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "trial,coverage,running_mean,theoretical"
    assert lines[2] == "2,0.5,0.75,0.9"
    assert len(lines) == 4


def test_stream_seeds():
    assert harness.stream_seed(0, 1, 5) == harness.stream_seed(0, 1, 5)
    seeds = {harness.stream_seed(0, s, i) for s in (1, 2) for i in range(500)}
    assert len(seeds) == 1000


def test_equispaced_betas():
    b = harness.equispaced_betas()
    assert b.size == 100
    np.testing.assert_allclose(b, 0.5 * np.arange(100) / 100)


def test_single_noiseless_fit_recovers_beta():
    rec, model = harness._estimate(0.25, harness.InverseSetup(), seed=11, index=0)
    assert abs(rec.beta_hat - 0.25) < 1e-3
    assert model.beta == rec.beta_hat


def test_pipeline_single_record_and_determinism(tmp_path):
    a = harness.run_inverse_pipeline(FAST, 1, seed=3, records_path=tmp_path / "a.csv", model_dir=tmp_path)
    b = harness.run_inverse_pipeline(FAST, 1, seed=3, records_path=tmp_path / "b.csv")
    assert len(a) == 1
    assert a == b
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert harness.read_records(tmp_path / "a.csv") == a
    assert (tmp_path / "record_00000.txt").exists()
    lo, hi = FAST.prior
    assert lo <= a[0].beta_true < hi


def test_parallel_matches_serial():
    serial = harness.run_inverse_pipeline(FAST, 2, seed=9)
    parallel = harness.run_inverse_pipeline(FAST, 2, seed=9, workers=2)
    assert serial == parallel


def test_failed_fit_is_recorded_not_dropped(monkeypatch):
    def boom(dataset, setup, seed):
        raise NumericError("diverged")
    monkeypatch.setattr(harness, "fit_beta", boom)
    recs = harness.run_inverse_pipeline(FAST, 3, seed=0)
    assert len(recs) == 3
    assert all(np.isnan(r.beta_hat) and r.termination == "error:numeric" for r in recs)


def test_failed_records_score_as_infinite():
    recs = [harness.InverseRecord(i, 0.1, 0.1, i, 0.0, "ok") for i in range(9)]
    recs.append(harness.InverseRecord(9, 0.1, float("nan"), 9, float("nan"), "error:numeric"))
    rep = harness.inverse_repeated_split_coverage(recs, 9, 1, 0.1, 200, seed=0)
    # k = 9 = n_c, so the quantile is infinite whenever the failure is in calibration
    assert 0.0 < rep.final < 1.0


def test_fresh_tests_perfect_estimator(monkeypatch):
    monkeypatch.setattr(harness, "_record_job", perfect_job)
    recs = harness.run_inverse_pipeline(FAST, 50, seed=1)
    rep, tests = harness.inverse_fresh_test_coverage(recs, FAST, n_c=40, alpha=0.2, n_tests=30, seed=2)
    assert all(t.half_width == 0.0 and t.covered for t in tests)
    assert rep.final == 1.0
    assert rep.theoretical == pytest.approx(conformal.theoretical_coverage(40, 0.2))


def test_fresh_test_preconditions():
    recs = [harness.InverseRecord(0, 0.1, 0.1, 0, 0.0, "ok")]
    with pytest.raises(ConfigurationError):
        harness.inverse_fresh_test_coverage(recs, FAST, n_c=2, n_tests=1)
    with pytest.raises(ConfigurationError):
        harness.inverse_fresh_test_coverage(recs, FAST, n_c=1, n_tests=0)


def test_inverse_split_coverage_cases():
    rng = np.random.default_rng(8)
    perfect = [harness.InverseRecord(i, b, b, i, 0.0, "ok") for i, b in enumerate(rng.uniform(0, 0.5, 100))]
    assert np.all(harness.inverse_repeated_split_coverage(perfect, 80, 20, 0.2, 50, 0).coverages == 1.0)
    noisy = [harness.InverseRecord(r.index, r.beta_true, r.beta_true + 0.01 * rng.standard_normal(), r.seed,
                                   0.0, "ok") for r in perfect]
    rep = harness.inverse_repeated_split_coverage(noisy, 80, 20, 0.2, 10_000, seed=1)
    assert abs(rep.final - conformal.theoretical_coverage(80, 0.2)) <= 0.01


def test_setup_validation():
    with pytest.raises(ConfigurationError):
        harness.InverseSetup(prior=(0.5, 0.5))
    with pytest.raises(ConfigurationError):
        harness.InverseSetup(noise_sigma=-1.0)
    with pytest.raises(ConfigurationError):
        harness.run_inverse_pipeline(FAST, 0, seed=0)
