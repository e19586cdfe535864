import json

import numpy as np
import pytest

from poisonbench.data import Dataset
from poisonbench.regress import RegressionModel, fit, loss, mse, select_lambda

from conftest import make_noisy_dataset


def grad_eq4(ds, model):
    """Gradient of the regularized training loss at (w, b)."""
    r = model.predict(ds.features) - ds.responses
    gw = ds.features.T @ r
    if model.family == "ridge":
        gw = gw + model.lam * model.weights
    elif model.family == "enet":
        gw = gw + model.lam * (1 - model.rho) * model.weights
    return np.concatenate([gw, [r.sum()]])


class TestFit:
    def test_exact_interpolation(self):
        ds = Dataset(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]))
        report = fit(ds, "ols")
        assert report.model.weights[0] == pytest.approx(1.0, abs=1e-12)
        assert report.model.bias == pytest.approx(0.0, abs=1e-12)
        assert report.train_mse == pytest.approx(0.0, abs=1e-24)

    def test_ridge_small_lambda_matches_ols(self):
        ds = make_noisy_dataset(n=40, d=3, seed=1)
        w_ols = fit(ds, "ols").model.weights
        w_ridge = fit(ds, "ridge", 1e-12).model.weights
        assert np.max(np.abs(w_ols - w_ridge)) <= 1e-6

    def test_hand_solved_normal_equations(self):
        # three points (0,0), (0.5,0.4), (1,1): slope 1, intercept -1/30
        ds = Dataset(np.array([[0.0], [0.5], [1.0]]), np.array([0.0, 0.4, 1.0]))
        model = fit(ds, "ols").model
        assert model.weights[0] == pytest.approx(1.0, abs=1e-12)
        assert model.bias == pytest.approx(-1.0 / 30.0, abs=1e-12)

    def test_singular_system_uses_fallback(self):
        x = np.array([[0.1, 0.1], [0.4, 0.4], [0.9, 0.9]])  # duplicated column
        ds = Dataset(x, np.array([0.1, 0.4, 0.9]))
        report = fit(ds, "ols")
        assert report.fallback
        assert report.train_mse <= 1e-20

    def test_ols_forces_zero_lambda(self):
        ds = make_noisy_dataset(seed=2)
        assert fit(ds, "ols", lam=5.0).model.lam == 0.0

    def test_rejects_underdetermined(self):
        ds = Dataset(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ValueError, match="d\\+1"):
            fit(ds, "ols")

    @pytest.mark.parametrize("family,lam", [("ols", 0.0), ("ridge", 0.3)])
    def test_closed_form_stationarity(self, family, lam):
        for seed in range(5):
            ds = make_noisy_dataset(n=60, d=4, seed=seed)
            model = fit(ds, family, lam).model
            assert np.max(np.abs(grad_eq4(ds, model))) <= 1e-8

    @pytest.mark.parametrize("family,lam,rho", [("lasso", 0.01, 1.0), ("enet", 0.01, 0.5)])
    def test_subgradient_optimality(self, family, lam, rho):
        for seed in range(5):
            ds = make_noisy_dataset(n=60, d=4, seed=seed)
            report = fit(ds, family, lam, rho=rho)
            assert report.converged
            model = report.model
            r = model.predict(ds.features) - ds.responses
            l1 = lam * (rho if family == "enet" else 1.0)
            l2 = lam * (1 - rho) if family == "enet" else 0.0
            for j in range(ds.d):
                g = float(ds.features[:, j] @ r) + l2 * model.weights[j]
                if model.weights[j] != 0.0:
                    assert abs(g + l1 * np.sign(model.weights[j])) <= 1e-5
                else:
                    assert abs(g) <= l1 + 1e-5
            assert abs(r.sum()) <= 1e-5

    def test_ridge_weight_norm_monotone_in_lambda(self):
        for seed in range(5):
            ds = make_noisy_dataset(n=50, d=3, seed=seed + 10)
            lams = [0.01, 0.1, 1.0, 10.0]
            norms = [np.linalg.norm(fit(ds, "ridge", lam).model.weights) for lam in lams]
            assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))

    def test_ols_beats_dense_grid(self):
        ds = make_noisy_dataset(n=30, d=1, seed=3)
        best = fit(ds, "ols").model
        best_mse = mse(ds, best)
        for w in np.linspace(best.weights[0] - 0.5, best.weights[0] + 0.5, 41):
            for b in np.linspace(best.bias - 0.5, best.bias + 0.5, 41):
                other = RegressionModel(np.array([w]), float(b))
                assert best_mse <= mse(ds, other) + 1e-15

    def test_train_loss_is_half_n_times_mse_for_ols(self):
        ds = make_noisy_dataset(n=35, seed=4)
        report = fit(ds, "ols")
        assert report.train_loss == pytest.approx(ds.n / 2 * report.train_mse, rel=1e-12)


class TestLossAndMse:
    def test_zero_on_the_line(self, line_dataset):
        model = fit(line_dataset, "ols").model
        assert loss(line_dataset, model, True) <= 1e-20
        assert loss(line_dataset, model, False) <= 1e-20
        assert mse(line_dataset, model) <= 1e-20

    def test_duplication_doubles_loss(self):
        ds = make_noisy_dataset(n=25, seed=5)
        model = fit(ds, "ols").model
        doubled = Dataset(
            np.vstack([ds.features, ds.features]),
            np.concatenate([ds.responses, ds.responses]),
        )
        assert loss(doubled, model, False) == pytest.approx(
            2 * loss(ds, model, False), rel=1e-12
        )

    def test_hand_summed_residuals(self):
        # residuals 0.1, -0.2, 0.1 under y = x
        model = RegressionModel(np.array([1.0]), 0.0)
        ds = Dataset(np.array([[0.1], [0.2], [0.3]]), np.array([0.0, 0.4, 0.2]))
        assert loss(ds, model, False) == pytest.approx(0.03, abs=1e-15)
        assert mse(ds, model) == pytest.approx(0.02, abs=1e-15)

    def test_mse_identity(self):
        ds = make_noisy_dataset(n=40, seed=6)
        model = fit(ds, "ridge", 0.1).model
        assert mse(ds, model) == pytest.approx(2 * loss(ds, model, False) / ds.n, rel=1e-12)

    def test_regularizer_flag(self):
        ds = make_noisy_dataset(n=40, seed=7)
        model = fit(ds, "ridge", 0.5).model
        assert loss(ds, model, True) - loss(ds, model, False) == pytest.approx(
            0.5 * 0.5 * float(model.weights @ model.weights), rel=1e-12
        )

    def test_empty_dataset_mse_errors(self):
        model = RegressionModel(np.array([1.0]), 0.0)
        with pytest.raises(ValueError, match="empty"):
            mse(Dataset(np.empty((0, 1)), np.empty(0)), model)


class TestSerialization:
    def test_model_json_round_trip(self):
        model = RegressionModel(np.array([0.25, -0.5]), 0.125, "enet", 0.01, 0.3)
        again = RegressionModel.from_json(model.to_json())
        assert np.array_equal(again.weights, model.weights)
        assert (again.bias, again.family, again.lam, again.rho) == (0.125, "enet", 0.01, 0.3)

    def test_json_fields(self):
        doc = json.loads(RegressionModel(np.array([1.0]), 0.0, "lasso", 0.1).to_json())
        assert set(doc) == {"family", "lambda", "rho", "weights", "bias"}


class TestSelectLambda:
    def test_ols_gets_zero(self):
        ds = make_noisy_dataset(seed=8)
        assert select_lambda(ds, ds, "ols") == 0.0

    def test_picks_from_grid_deterministically(self):
        train = make_noisy_dataset(n=45, seed=9)
        val = make_noisy_dataset(n=45, seed=10)
        lam1 = select_lambda(train, val, "ridge")
        lam2 = select_lambda(train, val, "ridge")
        assert lam1 == lam2
        assert any(np.isclose(lam1, g) for g in np.logspace(-4, 0, 9))


class TestConvergenceFlag:
    def test_lasso_non_convergence_is_flagged_not_raised(self):
        ds = make_noisy_dataset(n=60, d=4, seed=11)
        report = fit(ds, "lasso", 0.001, max_iters=1)
        assert not report.converged
        assert report.iterations == 1
