import numpy as np
import pytest

from pmforest.errors import SchemaMismatchError, UnknownVariableError
from pmforest.forest import ForestConfig, fit_forest, similarity_weights
from pmforest.model_core import DataView, Family, FittedParams, fit_weighted, loglik_contributions
from pmforest.personalise import (
    dependence_data,
    effect_distribution,
    forest_loglik,
    personalise_new,
    personalise_training,
    personalised_params,
)
from pmforest.simulate import simulate_appendix_b
from pmforest.split_engine import PartitionColumn
from pmforest.tree import GrowConfig

from oracles import random_view

GROW = GrowConfig(alpha=0.2, min_leaf=10, mtry=3, test="maxstat")


@pytest.fixture(scope="module")
def trial():
    ds, _ = simulate_appendix_b(200, amplitude=3.0, seed=21)
    forest = fit_forest(ds.family, ds.view(), ds.partition(), GROW,
                        ForestConfig(n_trees=20, seed=1))
    return ds, forest


@pytest.fixture(scope="module")
def weibull_trial():
    rng = np.random.default_rng(0)
    n = 240
    view = random_view(Family.WEIBULL_AFT, rng, n=n)
    z = rng.normal(size=n)
    levels = rng.integers(0, 3, n).astype(float)
    levels[:6] = np.nan
    part = [PartitionColumn("age", "numeric", z),
            PartitionColumn("site", "categorical", levels, ("a", "b", "c"))]
    forest = fit_forest(Family.WEIBULL_AFT, view, part, GrowConfig(alpha=0.5, min_leaf=15),
                        ForestConfig(n_trees=10, seed=2))
    return view, part, forest


class TestPersonalisedParams:
    def test_refit_with_oob_weights(self, trial):
        ds, forest = trial
        view = ds.view()
        est = personalised_params(forest, view, 3)
        w = similarity_weights(forest, None, oob_for=3)
        np.testing.assert_allclose(est.theta_hat.theta,
                                   fit_weighted(forest.family, view, w).theta, rtol=1e-12)
        assert est.total_weight == w.sum()

    def test_new_subject_uses_all_trees(self, trial):
        ds, forest = trial
        part = ds.partition()
        query = [c.take([11]) for c in part]
        est = personalised_params(forest, ds.view(), query)
        w = similarity_weights(forest, query)
        np.testing.assert_allclose(est.theta_hat.theta,
                                   fit_weighted(forest.family, ds.view(), w).theta)

    def test_batch_matches_single(self, trial):
        ds, forest = trial
        pers = personalise_training(forest, ds.view())
        for i in (0, 50, 199):
            np.testing.assert_allclose(pers.theta[i],
                                       personalised_params(forest, ds.view(), i).theta_hat.theta)

    def test_threads_do_not_change_estimates(self, trial):
        ds, forest = trial
        a = personalise_new(forest, ds.view(), ds.partition())
        b = personalise_new(forest, ds.view(), ds.partition(), threads=4)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_effect_is_beta(self, trial):
        ds, forest = trial
        pers = personalise_training(forest, ds.view())
        np.testing.assert_array_equal(pers.effect, pers.theta[:, 1])
        assert pers.delta_median is None


class TestDegenerateForest:
    def test_single_leaf_forest_reproduces_base(self, trial):
        ds, _ = trial
        view = ds.view()
        forest = fit_forest(ds.family, view, ds.partition(),
                            GrowConfig(alpha=1e-12, mtry=3, test="maxstat"),
                            ForestConfig(n_trees=10, seed=0))
        base = fit_weighted(ds.family, view)
        pers = personalise_training(forest, view)
        np.testing.assert_allclose(pers.theta, np.tile(base.theta, (len(view), 1)),
                                   rtol=1e-12, atol=1e-12)
        base_ll = float(np.sum(loglik_contributions(base, view)))
        assert forest_loglik(forest, view, pers) == pytest.approx(base_ll, abs=1e-10)

    def test_fit_failure_falls_back_to_base(self):
        view = DataView(np.arange(6.0), np.array([0, 0, 0, 1, 1, 1]))
        part = [PartitionColumn("z", "numeric", np.arange(6.0))]
        forest = fit_forest(Family.LINEAR_NORMAL, view, part, GrowConfig(min_leaf=3),
                            ForestConfig(n_trees=3, subsample_fraction=1.0))
        # a query row in no training leaf gets zero weights
        forest.train_leaves = forest.train_leaves + 1
        pers = personalise_training(forest, view)
        assert pers.degenerate.all()
        np.testing.assert_allclose(pers.theta[0], fit_weighted(Family.LINEAR_NORMAL, view).theta)


class TestForestLoglik:
    def test_sum_of_own_contributions(self, trial):
        ds, forest = trial
        view = ds.view()
        pers = personalise_training(forest, view)
        expected = sum(
            loglik_contributions(FittedParams(forest.family, pers.theta[i]), view.take([i]))[0]
            for i in range(len(view))
        )
        assert forest_loglik(forest, view, pers) == pytest.approx(expected, rel=1e-12)

    def test_beats_base_model_on_signal(self):
        ds, _ = simulate_appendix_b(400, amplitude=3.0, seed=3)
        view = ds.view()
        forest = fit_forest(ds.family, view, ds.partition(), GROW, ForestConfig(30, seed=0))
        base_ll = float(np.sum(loglik_contributions(fit_weighted(ds.family, view), view)))
        assert forest_loglik(forest, view) > base_ll

    def test_effects_track_cosine(self):
        ds, _ = simulate_appendix_b(400, amplitude=3.0, seed=4)
        forest = fit_forest(ds.family, ds.view(), ds.partition(), GROW, ForestConfig(30, seed=0))
        pers = personalise_training(forest, ds.view())
        assert np.corrcoef(pers.effect, np.cos(ds.columns["z1"]))[0, 1] > 0.5


class TestDependence:
    def test_numeric_pairs_sorted(self, trial):
        ds, forest = trial
        pers = personalise_training(forest, ds.view())
        table = dependence_data(forest, ds.view(), ds.partition(), "z1", personalised=pers)
        z = [r[0] for r in table.rows]
        assert z == sorted(z) and len(z) == ds.n_rows
        lookup = dict(zip(ds.columns["z1"], pers.effect))
        assert all(lookup[zz] == e for zz, e in table.rows)

    def test_unknown_variable(self, trial):
        ds, forest = trial
        with pytest.raises(UnknownVariableError):
            dependence_data(forest, ds.view(), ds.partition(), "nope")

    def test_delta_median_needs_weibull(self, trial):
        ds, forest = trial
        with pytest.raises(SchemaMismatchError):
            dependence_data(forest, ds.view(), ds.partition(), "z1", "delta-median")

    def test_categorical_summary(self, weibull_trial):
        view, part, forest = weibull_trial
        pers = personalise_training(forest, view)
        table = dependence_data(forest, view, part, "site", "delta-median", personalised=pers)
        assert [r[0] for r in table.rows] == ["a", "b", "c", "NA"]
        assert sum(r[1] for r in table.rows) == len(view)
        codes = part[1].values
        sel = pers.delta_median[codes == 1]
        row = table.rows[1]
        assert row[2] == pytest.approx(sel.mean())
        assert row[4] == pytest.approx(np.median(sel))

    def test_effect_distribution_weibull(self, weibull_trial):
        view, part, forest = weibull_trial
        pers = personalise_training(forest, view)
        dist = effect_distribution(pers)
        np.testing.assert_allclose(dist["alpha2"], np.exp(pers.theta[:, 2]))
        assert set(dist) == {"subject", "beta", "alpha1", "alpha2"}
