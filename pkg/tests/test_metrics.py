"""Tests for DTW, RaTS, classifiers, and the evaluation harness."""

import math

import numpy as np
import pytest

from conftest import dtw_bruteforce
from tsedit.errors import InputError, SchemaError
from tsedit.metrics import (
    AttributeClassifier,
    ClassifierConfig,
    delta_dtw,
    dtw,
    dtw_batch,
    dtw_path,
    mse_mae,
    rats,
    train_attribute_classifiers,
)
from tsedit.synthgen import SynthConfig, generate_dataset


class TestDtw:
    def test_identical_series_have_zero_distance(self):
        x = np.array([1.0, 2.0, -3.0, 0.5])
        assert dtw(x, x) == 0.0

    def test_single_points_use_squared_distance(self):
        assert dtw([0.0], [3.0]) == 9.0

    def test_small_case_matches_bruteforce(self):
        x, y = [0.0, 1.0], [0.0, 1.0, 1.0]
        assert dtw(x, y) == pytest.approx(dtw_bruteforce(x, y), abs=1e-12)

    def test_random_small_cases_match_bruteforce(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n, m = rng.integers(1, 7), rng.integers(1, 7)
            x = rng.integers(0, 3, n).astype(float)
            y = rng.integers(0, 3, m).astype(float)
            assert dtw(x, y) == pytest.approx(dtw_bruteforce(x, y), abs=1e-9)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.normal(size=rng.integers(2, 12))
            y = rng.normal(size=rng.integers(2, 12))
            assert dtw(x, y) >= 0.0
            assert dtw(x, y) == pytest.approx(dtw(y, x), rel=1e-12)

    def test_batch_agrees_with_single(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=15)
        Y = rng.normal(size=(6, 12))
        batch = dtw_batch(x, Y)
        for i in range(6):
            assert batch[i] == pytest.approx(dtw(x, Y[i]), rel=1e-12)

    def test_empty_series_rejected(self):
        with pytest.raises(InputError):
            dtw(np.array([]), np.array([1.0]))

    def test_path_satisfies_constraints_and_cost(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=7)
        y = rng.normal(size=5)
        cost, path = dtw_path(x, y)
        assert cost == pytest.approx(dtw(x, y), rel=1e-12)
        assert path[0] == (1, 1) and path[-1] == (len(x), len(y))
        for (i0, j0), (i1, j1) in zip(path, path[1:]):
            assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
        total = sum((x[i - 1] - y[j - 1]) ** 2 for i, j in path)
        assert total == pytest.approx(cost, rel=1e-12)


class TestDeltaDtw:
    def test_identity_edit_scores_zero(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=10)
        targets = [rng.normal(size=10) for _ in range(3)]
        assert delta_dtw(x, x, targets) == 0.0

    def test_perfect_edit_to_single_target_is_negative(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=8)
        target = rng.normal(size=8)
        assert delta_dtw(target, x, [target]) == pytest.approx(-dtw(x, target), rel=1e-12)

    def test_median_of_three_targets(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=6)
        x_hat = rng.normal(size=6)
        targets = [rng.normal(size=6) for _ in range(3)]
        diffs = sorted(dtw(x_hat, t) - dtw(x, t) for t in targets)
        assert delta_dtw(x_hat, x, targets) == pytest.approx(diffs[1], rel=1e-12)

    def test_target_permutation_invariance(self):
        rng = np.random.default_rng(3)
        x, x_hat = rng.normal(size=6), rng.normal(size=6)
        targets = [rng.normal(size=6) for _ in range(5)]
        a = delta_dtw(x_hat, x, targets)
        b = delta_dtw(x_hat, x, targets[::-1])
        assert a == pytest.approx(b, rel=1e-12)

    def test_empty_targets_rejected(self):
        with pytest.raises(InputError):
            delta_dtw(np.ones(3), np.ones(3), [])


class TestMseMae:
    def test_perfect_prediction(self):
        X = np.random.default_rng(0).normal(size=(4, 6))
        assert mse_mae(X, X) == (0.0, 0.0)

    def test_unit_example(self):
        mse, mae = mse_mae(np.array([[1.0, 1.0]]), np.array([[0.0, 0.0]]))
        assert mse == pytest.approx(2.0)
        assert mae == pytest.approx(math.sqrt(2.0))

    def test_duplicating_samples_changes_nothing(self):
        rng = np.random.default_rng(4)
        X, Y = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        once = mse_mae(X, Y)
        twice = mse_mae(np.vstack([X, X]), np.vstack([Y, Y]))
        assert once == pytest.approx(twice)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            mse_mae(np.zeros((2, 3)), np.zeros((2, 4)))


@pytest.fixture(scope="module")
def small_classifier_setup():
    ds = generate_dataset(SynthConfig(T=60, samples_per_combination=6, seed=31,
                                      families=("trend", "shift")))
    cfg = ClassifierConfig(epochs=40, lr=3e-3, seed=2, k=2, d=16, kernel_fractions=(1.0, 0.25),
                           conv_channels=(4, 8), patience=0)
    results = train_attribute_classifiers(ds.series, ds.schema, cfg, attributes=["shift"])
    return ds, results["shift"][0], results["shift"][1]


class TestClassifiers:
    def test_probabilities_sum_to_one(self, small_classifier_setup):
        ds, clf, _ = small_classifier_setup
        probs = clf.predict_proba(ds.series[0].values)
        assert probs.shape == (3,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(probs >= 0)

    def test_shift_attribute_is_learnable(self, small_classifier_setup):
        _, _, acc = small_classifier_setup
        assert acc >= 0.9

    def test_seeded_retraining_is_bit_identical(self):
        ds = generate_dataset(SynthConfig(T=60, samples_per_combination=2, seed=32,
                                          families=("trend", "shift")))
        cfg = ClassifierConfig(epochs=2, seed=5, k=2, d=8, kernel_fractions=(1.0, 0.25),
                               conv_channels=(4, 8))
        a = train_attribute_classifiers(ds.series, ds.schema, cfg, ["shift"])["shift"][0]
        b = train_attribute_classifiers(ds.series, ds.schema, cfg, ["shift"])["shift"][0]
        for pa, pb in zip(a.params(), b.params()):
            assert np.array_equal(pa.values, pb.values)

    def test_single_observed_level_is_schema_error(self):
        ds = generate_dataset(SynthConfig(T=60, samples_per_combination=2, seed=33,
                                          families=("trend", "shift")))
        constant_shift = [s for s in ds.series if s.attributes["shift"] == "none"]
        with pytest.raises(SchemaError):
            train_attribute_classifiers(constant_shift, ds.schema,
                                        ClassifierConfig(epochs=1, k=2, d=8,
                                                         kernel_fractions=(1.0, 0.25),
                                                         conv_channels=(4, 8)),
                                        ["shift"])

    def test_unknown_level_probability_rejected(self, small_classifier_setup):
        _, clf, _ = small_classifier_setup
        with pytest.raises(SchemaError):
            clf.level_probability(np.zeros(60), "sideways")


class TestRats:
    def test_equal_probabilities_give_zero(self, small_classifier_setup):
        ds, clf, _ = small_classifier_setup
        x = ds.series[0].values
        assert rats(clf, x, x, "upward") == 0.0

    def test_direct_formula(self):
        class Fixed:
            levels = ["a", "b"]

            def __init__(self, p_hat, p_src):
                self.p = {"hat": p_hat, "src": p_src}
                self.calls = 0

            def level_probability(self, x, level):
                self.calls += 1
                return self.p["hat"] if self.calls % 2 == 1 else self.p["src"]

        clf = Fixed(0.9, 0.3)
        assert rats(clf, np.zeros(3), np.zeros(3), "a") == pytest.approx(math.log(3.0))

    def test_antisymmetry(self, small_classifier_setup):
        ds, clf, _ = small_classifier_setup
        x = ds.series[0].values
        y = ds.series[-1].values
        assert rats(clf, y, x, "upward") == pytest.approx(-rats(clf, x, y, "upward"))

    def test_probability_clamping_bounds_rats(self, small_classifier_setup):
        ds, clf, _ = small_classifier_setup
        x = ds.series[0].values
        y = ds.series[-1].values
        bound = math.log((1 - 1e-7) / 1e-7)
        assert abs(rats(clf, y, x, "upward")) <= bound + 1e-9


class TestEvaluateHarness:
    def test_missing_population_reported_not_fatal(self, small_classifier_setup, tiny_model):
        from tsedit.metrics import EditPlanItem, evaluate
        from tsedit.synthgen import TemplateSet, render_instruction

        ds, clf, _ = small_classifier_setup
        templates = TemplateSet.canonical(ds.schema)
        item = ds.series[0]
        target = dict(item.attributes)
        target["shift"] = "upward" if item.attributes["shift"] != "upward" else "downward"
        plan = [EditPlanItem(series=item, target=target, edit_attrs=["shift"],
                             preserve_attrs=[n for n in ds.schema.names if n != "shift"],
                             instruction=render_instruction(target, templates))]
        # population deliberately excludes the target combination
        population = [s for s in ds.series
                      if tuple(sorted(s.attributes.items())) != tuple(sorted(target.items()))]
        from tsedit.model import Model, ModelConfig

        model = Model(ModelConfig(T=60, k=2, d=8, kernel_fractions=(1.0, 0.25),
                                  decoder_blocks=2, attention_heads=2, conv_channels=(4, 8),
                                  mlp_hidden=32, seed=3),
                      tiny_model.provider)
        report = evaluate(model, plan, 0.9, {"shift": clf}, population)
        assert report.missing_populations == [target]
        assert report.n_items == 1
        assert report.per_attribute["shift"]["rats"]["n"] == 1
        assert report.per_attribute["shift"]["delta_dtw"]["mean"] is None
