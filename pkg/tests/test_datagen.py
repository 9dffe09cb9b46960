import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cpinn import datagen, physics
from cpinn.errors import ConfigurationError


@pytest.fixture(scope="module")
def bl_solutions():
    p = physics.BuckleyLeverettProblem()
    return {nx: datagen.solve_bl_reference(p, nx=nx, nt=21) for nx in (200, 400, 800)}


def test_logistic_analytic_examples():
    assert datagen.logistic_analytic(0.0, 0.05, 0.1) == pytest.approx(0.1)
    assert np.all(datagen.logistic_analytic(np.linspace(0, 150, 5), 0.0, 0.1) == 0.1)
    assert datagen.logistic_analytic(150.0, 0.05, 0.1) == pytest.approx(0.99505, abs=5e-6)


def test_rk4_matches_analytic():
    t = np.linspace(0, 150, 150)
    err = np.abs(datagen.solve_ode_rk4(0.05, 0.1, t) - datagen.logistic_analytic(t, 0.05, 0.1))
    assert err.max() <= 1e-8


def test_rk4_fixed_points_and_grid_check():
    t = np.linspace(0, 10, 4)
    assert np.all(datagen.solve_ode_rk4(0.0, 0.1, t) == 0.1)
    assert np.all(datagen.solve_ode_rk4(0.3, 0.0, t) == 0.0)
    with pytest.raises(ConfigurationError):
        datagen.solve_ode_rk4(0.05, 0.1, [0.0, 1.0, 1.0])


def test_rk4_is_fourth_order():
    t = np.array([0.0, 20.0])
    exact = datagen.logistic_analytic(20.0, 0.4, 0.1)
    e1 = abs(datagen.solve_ode_rk4(0.4, 0.1, t, max_step=0.8)[-1] - exact)
    e2 = abs(datagen.solve_ode_rk4(0.4, 0.1, t, max_step=0.4)[-1] - exact)
    assert 12 < e1 / e2 < 20


def test_godunov_flux_examples():
    assert datagen.godunov_flux(0.0, 1.0) == 0.0
    assert datagen.godunov_flux(1.0, 0.0) == 1.0
    assert datagen.godunov_flux(0.0, 1.0, orientation=-1) == -1.0
    # consistency: equal states give the physical flux
    u = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(datagen.godunov_flux(u, u), physics.flux(u))
    np.testing.assert_allclose(datagen.godunov_flux(u, u, -1), -physics.flux(u))


def test_constant_initial_data_stays_constant():
    p = physics.BuckleyLeverettProblem(u_left=0.4, u_right=0.4)
    sol = datagen.solve_bl_reference(p, nx=64, nt=16)
    assert np.all(sol.u == 0.4)


def test_reference_solver_conserves_mass(bl_solutions):
    for sol in bl_solutions.values():
        assert sol.max_mass_defect <= 1e-10
        assert sol.max_cfl <= 0.9 + 1e-12
        assert np.all(np.isfinite(sol.u))


def test_reference_self_convergence(bl_solutions):
    def l1(a, b):
        fine = bl_solutions[b]
        coarse = bl_solutions[a].profile(-1, fine.x)
        return np.mean(np.abs(coarse - fine.u[-1])) * 2.0
    assert l1(400, 800) < l1(200, 400)


def test_reference_respects_bounds(bl_solutions):
    # a monotone scheme creates no new extrema
    u = bl_solutions[800].u
    assert u.min() >= -3 - 1e-12 and u.max() <= 3 + 1e-12


def test_reference_rejects_small_grids():
    with pytest.raises(ConfigurationError):
        datagen.solve_bl_reference(nx=8)


def test_add_noise_statistics():
    clean = datagen.Dataset(np.arange(100_000.0), np.zeros(100_000))
    noisy = datagen.add_noise(clean, 0.08, seed=42)
    assert abs(noisy.observations.std() - 0.08) <= 0.01 * 0.08
    assert np.array_equal(noisy.inputs, clean.inputs)
    assert noisy.meta["noise_sigma"] == 0.08 and noisy.meta["noise_seed"] == 42


def test_add_noise_contracts():
    ds = datagen.logistic_dataset()
    same = datagen.add_noise(ds, 0.0, seed=1)
    assert np.array_equal(same.observations, ds.observations)
    a = datagen.add_noise(ds, 0.08, seed=3)
    b = datagen.add_noise(ds, 0.08, seed=3)
    assert np.array_equal(a.observations, b.observations)
    with pytest.raises(ConfigurationError):
        datagen.add_noise(ds, -0.1, seed=0)


def test_forward_split_sizes_and_partition():
    ds = datagen.logistic_dataset()
    parts = datagen.split(ds, datagen.SplitSpec(25, 100, 25, seed=8))
    assert [len(parts[k]) for k in ("train", "holdout", "test")] == [25, 100, 25]
    union = np.sort(np.concatenate([parts[k].inputs[:, 0] for k in parts]))
    assert np.array_equal(union, ds.inputs[:, 0])


def test_split_errors_and_degenerate_holdout():
    ds = datagen.logistic_dataset(n_points=20)
    with pytest.raises(ConfigurationError):
        datagen.split(ds, datagen.SplitSpec(5, 10, 4))
    hold = ds.subset(np.arange(10))
    parts = datagen.split_holdout(hold, 10, 0, seed=1)
    assert len(parts["validation"]) == 0
    assert np.array_equal(np.sort(parts["calibration"].inputs[:, 0]), hold.inputs[:, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(1, 60), st.integers(0, 60))
def test_split_holdout_partition(seed, n_c, n_v):
    hold = datagen.Dataset(np.arange(n_c + n_v, dtype=float), np.zeros(n_c + n_v))
    parts = datagen.split_holdout(hold, n_c, n_v, seed)
    a = parts["calibration"].inputs[:, 0]
    b = parts["validation"].inputs[:, 0]
    assert len(a) == n_c and len(b) == n_v
    assert np.array_equal(np.sort(np.concatenate([a, b])), hold.inputs[:, 0])
    again = datagen.split_holdout(hold, n_c, n_v, seed)
    assert np.array_equal(again["calibration"].inputs, parts["calibration"].inputs)


def test_calibration_membership_is_uniform():
    n, n_c, trials = 100, 80, 10_000
    counts = np.zeros(n)
    for s in range(trials):
        counts[datagen.split_indices(n, (n_c, n - n_c), seed=s)[0]] += 1
    p = n_c / n
    chi2 = np.sum((counts - trials * p) ** 2) / (trials * p * (1 - p))
    assert stats.chi2.sf(chi2, df=n - 1) > 0.001


@pytest.mark.parametrize("factory", [
    lambda: datagen.add_noise(datagen.logistic_dataset(), 0.08, seed=5),
    lambda: datagen.bl_dataset(datagen.solve_bl_reference(nx=64, nt=16), n_points=30),
])
def test_csv_roundtrip_bit_exact(tmp_path, factory):
    ds = factory()
    datagen.save_dataset(ds, tmp_path / "d.csv")
    back = datagen.load_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.inputs, ds.inputs)
    assert np.array_equal(back.observations, ds.observations)
    assert back.input_names == ds.input_names
    assert back.meta == ds.meta
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == ",".join([*ds.input_names, ds.observation_name])


def test_bl_dataset_layout():
    sol = datagen.solve_bl_reference(nx=64, nt=16)
    ds = datagen.bl_dataset(sol, n_points=150)
    assert len(ds) == 150 and np.all(ds.inputs[:, 0] == 1.0)
    np.testing.assert_allclose(ds.inputs[:, 1], np.linspace(-1, 1, 150))
