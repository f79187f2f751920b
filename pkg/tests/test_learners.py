import math

import numpy as np
import pytest

from core.dataset import LabeledDataset
from core.logistic import LogisticConfig, log_loss_and_gradient, train_logistic
from core.models import model_from_dict
from core.naive_bayes import train_naive_bayes
from core.ocsvm import OcsvmConfig, rbf_kernel, solve_one_class_dual, train_ocsvm
from core.random_forest import LEAF, ForestConfig, train_random_forest
from utils.errors import DataError, SchemaError

NB_ROWS = [
    ({"gps": 1, "map": 1}, "expected"),
    ({"gps": 1}, "expected"),
    ({"map": 1}, "expected"),
    ({"ads": 1}, "unexpected"),
    ({"ads": 1, "gps": 1}, "unexpected"),
    ({}, "unexpected"),
]


def test_naive_bayes_matches_closed_form():
    model = train_naive_bayes(LabeledDataset.from_rows(NB_ROWS), smoothing=1.0)

    # vocabulary (ads, gps, map); each class has 3 rows
    expected_prob = {
        "expected": [(0 + 1) / 5, (2 + 1) / 5, (2 + 1) / 5],
        "unexpected": [(2 + 1) / 5, (1 + 1) / 5, (0 + 1) / 5],
    }
    assert model.vocabulary == ("ads", "gps", "map")
    for c, label in enumerate(model.label_space):
        assert np.exp(model.feature_log_prob[c]) == pytest.approx(expected_prob[label])
        assert math.exp(model.class_log_prior[c]) == pytest.approx(0.5)

    # posterior for {gps}: product over all three features of P or 1 - P
    def joint(p):
        return 0.5 * (1 - p[0]) * p[1] * (1 - p[2])
    e, u = joint(expected_prob["expected"]), joint(expected_prob["unexpected"])
    prediction = model.predict({"gps": 1, "unseen": 1})
    assert prediction.label == "expected"
    assert prediction.scores["expected"] == pytest.approx(e / (e + u))


def test_naive_bayes_requires_every_class():
    data = LabeledDataset.from_rows(NB_ROWS[:3], label_space=("expected", "unexpected"))
    with pytest.raises(DataError):
        train_naive_bayes(data)


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(12, 4))
    y = (rng.random(12) > 0.5).astype(float)
    weights, bias, l2 = rng.normal(size=4), 0.3, 0.01

    _, grad_w, grad_b = log_loss_and_gradient(weights, bias, X, y, l2)

    eps = 1e-6
    for k in range(4):
        step = np.zeros(4)
        step[k] = eps
        plus = log_loss_and_gradient(weights + step, bias, X, y, l2)[0]
        minus = log_loss_and_gradient(weights - step, bias, X, y, l2)[0]
        assert abs((plus - minus) / (2 * eps) - grad_w[k]) <= 1e-4
    plus = log_loss_and_gradient(weights, bias + eps, X, y, l2)[0]
    minus = log_loss_and_gradient(weights, bias - eps, X, y, l2)[0]
    assert abs((plus - minus) / (2 * eps) - grad_b) <= 1e-4


def test_logistic_separates_and_serializes():
    rows = [({"gps": 1, "weather": 1}, "expected")] * 5 + [({"ads": 1, "sdk": 1}, "unexpected")] * 5
    model = train_logistic(LabeledDataset.from_rows(rows), LogisticConfig(epochs=300))

    assert model.predict({"gps": 1}).label == "expected"
    assert model.predict({"sdk": 1}).label == "unexpected"
    restored = model_from_dict(model.to_dict())
    assert restored.predict({"ads": 1}).scores == model.predict({"ads": 1}).scores


def test_model_from_dict_rejects_unknown_algorithm():
    with pytest.raises(SchemaError):
        model_from_dict({"algorithm": "perceptron"})


def _gini(counts):
    total = sum(counts)
    return 1.0 - sum((c / total) ** 2 for c in counts)


def _cart_oracle(X, y, n_classes):
    """Exhaustive CART over every feature and midpoint; lowest feature wins ties"""
    counts = [int(np.sum(y == c)) for c in range(n_classes)]
    if sum(1 for c in counts if c) <= 1 or len(y) < 2:
        return counts
    per_feature = []
    for feature in range(X.shape[1]):
        values = sorted(set(X[:, feature]))
        best = None
        for low, high in zip(values, values[1:]):
            threshold = (low + high) / 2
            left = X[:, feature] <= threshold
            left_counts = [int(np.sum(y[left] == c)) for c in range(n_classes)]
            right_counts = [int(np.sum(y[~left] == c)) for c in range(n_classes)]
            impurity = (sum(left_counts) * _gini(left_counts) + sum(right_counts) * _gini(right_counts)) / len(y)
            if best is None or impurity < best[0]:
                best = (impurity, feature, threshold)
        if best is not None:
            per_feature.append(best)
    if not per_feature:
        return counts
    lowest = min(b[0] for b in per_feature)
    _, feature, threshold = next(b for b in per_feature if b[0] <= lowest + 1e-12)
    left = X[:, feature] <= threshold
    return (feature, threshold,
            _cart_oracle(X[left], y[left], n_classes),
            _cart_oracle(X[~left], y[~left], n_classes))


def _nested(tree, node=0):
    if tree.feature[node] == LEAF:
        return [int(v) for v in tree.value[node]]
    return (tree.feature[node], tree.threshold[node],
            _nested(tree, tree.left[node]), _nested(tree, tree.right[node]))


def _assert_same_tree(actual, expected):
    if isinstance(expected, list):
        assert actual == expected
        return
    assert actual[0] == expected[0]
    assert actual[1] == pytest.approx(expected[1])
    _assert_same_tree(actual[2], expected[2])
    _assert_same_tree(actual[3], expected[3])


def test_single_tree_matches_exhaustive_cart():
    rng = np.random.default_rng(11)
    X = rng.uniform(0.1, 10.0, size=(20, 5))
    y = ((X[:, 1] + X[:, 3] > 10.0).astype(int) + (X[:, 0] > 8.0)).clip(0, 1)
    labels = ("expected", "unexpected")
    rows = [({f"f{j}": float(X[i, j]) for j in range(5)}, labels[y[i]]) for i in range(20)]

    forest = train_random_forest(
        LabeledDataset.from_rows(rows, label_space=labels),
        ForestConfig(n_trees=1, max_features="all", bootstrap="none", seed=5),
    )

    _assert_same_tree(_nested(forest.trees[0]), _cart_oracle(X, y, 2))


def test_forest_is_deterministic_and_independent_of_jobs():
    rng = np.random.default_rng(2)
    rows = [({"a": float(rng.integers(1, 5)), "b": float(rng.integers(1, 5))}, "expected" if i % 3 else "unexpected")
            for i in range(30)]
    data = LabeledDataset.from_rows(rows)
    config = ForestConfig(n_trees=8, seed=21)

    serial = train_random_forest(data, config, jobs=1).to_dict()
    parallel = train_random_forest(data, config, jobs=4).to_dict()

    assert serial == parallel
    assert serial["parameters"]["oob_score"] is not None


def test_row_hash_bootstrap_ignores_row_order():
    rows = [({"a": float(i % 7 + 1), "b": float(i % 3 + 1)}, "expected" if i % 2 else "unexpected") for i in range(24)]
    config = ForestConfig(n_trees=5, bootstrap="row-hash", seed=9)

    forward = train_random_forest(LabeledDataset.from_rows(rows), config)
    backward = train_random_forest(LabeledDataset.from_rows(reversed(rows)), config)

    queries = [{"a": float(a), "b": float(b)} for a in range(1, 8) for b in range(1, 4)]
    assert [p.scores for p in forward.predict_many(queries)] == [p.scores for p in backward.predict_many(queries)]


def test_forest_rejects_unknown_bootstrap():
    with pytest.raises(DataError):
        train_random_forest(LabeledDataset.from_rows(NB_ROWS), ForestConfig(bootstrap="jackknife"))


def _gaussian_rows(n=200, seed=4):
    points = np.random.default_rng(seed).normal(size=(n, 2))
    return [{"x": float(p[0]), "y": float(p[1])} for p in points]


def test_ocsvm_dual_satisfies_constraints():
    rows = _gaussian_rows()
    X = np.array([[r["x"], r["y"]] for r in rows])
    nu = 0.1
    K = rbf_kernel(X, X, 0.5)

    result = solve_one_class_dual(K, nu)

    assert abs(result.alpha.sum() - 1.0) <= 1e-8
    assert np.all(result.alpha >= 0.0)
    assert np.all(result.alpha <= 1.0 / (nu * len(rows)) + 1e-12)
    assert np.count_nonzero(result.alpha) >= nu * len(rows)


def test_ocsvm_outlier_fraction_tracks_nu():
    rows = _gaussian_rows()
    nu = 0.1
    model = train_ocsvm(rows, ("x", "y"), OcsvmConfig(nu=nu))

    decisions = model.decisions(rows)
    outliers = np.mean(decisions < -1e-5)
    support_fraction = len(model.alpha) / len(rows)

    assert abs(model.alpha.sum() - 1.0) <= 1e-8
    assert model.gamma == pytest.approx(0.5)
    assert nu - 0.05 <= outliers <= nu + 0.02
    assert support_fraction >= nu - 1.0 / len(rows)
    assert model.predict({"x": 0.0, "y": 0.0}).label == "in-class"


def test_ocsvm_rejects_bad_nu():
    with pytest.raises(DataError):
        train_ocsvm(_gaussian_rows(10), ("x", "y"), OcsvmConfig(nu=1.5))


def _noisy_rows(n=60, seed=12):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        x, y, z = rng.normal(size=3)
        features = {"alpha": float(x), "beta": float(y), "gamma": float(z)}
        if rng.random() < 0.5:
            features["host:ads"] = 1.0
        rows.append((features, "expected" if x + 0.5 * y > 0 else "unexpected"))
    return rows


@pytest.mark.parametrize("train", [
    lambda data: train_naive_bayes(data),
    lambda data: train_logistic(data, LogisticConfig(epochs=200)),
    lambda data: train_random_forest(data, ForestConfig(n_trees=7, seed=4)),
])
def test_predictions_ignore_vocabulary_order(train):
    data = LabeledDataset.from_rows(_noisy_rows())
    reordered = data.with_vocabulary(tuple(reversed(data.vocabulary)))
    queries = [features for features, _ in _noisy_rows(20, seed=13)]

    original = train(data).predict_many(queries)
    permuted = train(reordered).predict_many(queries)

    assert [p.label for p in permuted] == [p.label for p in original]
    for a, b in zip(original, permuted):
        assert b.scores == pytest.approx(a.scores, rel=1e-9, abs=1e-12)


def test_naive_bayes_two_row_example():
    model = train_naive_bayes(LabeledDataset.from_rows([({"f": 1}, "A"), ({}, "B")]), smoothing=1.0)
    assert np.exp(model.feature_log_prob[:, 0]) == pytest.approx([2 / 3, 1 / 3])
    assert model.predict({"f": 1}).label == "A"
    assert model.predict({}).label == "B"


def test_naive_bayes_duplicated_rows_predict_the_same():
    queries = [features for features, _ in NB_ROWS] + [{"gps": 1, "unseen": 1}]
    once = train_naive_bayes(LabeledDataset.from_rows(NB_ROWS))
    twice = train_naive_bayes(LabeledDataset.from_rows(NB_ROWS + NB_ROWS))
    assert [p.label for p in twice.predict_many(queries)] == [p.label for p in once.predict_many(queries)]


def test_naive_bayes_single_class_predicts_it():
    model = train_naive_bayes(LabeledDataset.from_rows([({"gps": 1}, "expected"), ({"map": 1}, "expected")]))
    assert {model.predict(query).label for query in ({}, {"ads": 1}, {"gps": 1, "x": 5})} == {"expected"}


def test_logistic_without_signal_predicts_majority():
    rows = [({"const": 1.0}, "expected")] + [({"const": 1.0}, "unexpected")] * 3
    model = train_logistic(LabeledDataset.from_rows(rows))
    assert model.label_space == ("expected", "unexpected")
    assert model.predict({"const": 1.0}).label == "unexpected"


def _separated_rows(n, seed):
    rng = np.random.default_rng(seed)
    rows = []
    while len(rows) < n:
        x, y = rng.uniform(-3, 3, size=2)
        if abs(x + y) < 0.5:
            continue
        rows.append(({"x": float(x), "y": float(y)}, "expected" if x + y > 0 else "unexpected"))
    return rows


def test_doubling_trees_keeps_held_out_accuracy():
    train = LabeledDataset.from_rows(_separated_rows(300, 30))
    held_out = _separated_rows(200, 31)

    def accuracy(n_trees):
        forest = train_random_forest(train, ForestConfig(n_trees=n_trees, seed=6))
        predictions = forest.predict_many(features for features, _ in held_out)
        return np.mean([p.label == label for p, (_, label) in zip(predictions, held_out)])

    assert abs(accuracy(40) - accuracy(20)) < 0.02


def test_ocsvm_decisions_ignore_translation():
    # eighths shifted by integers stay exact, so both fits see identical scaled inputs
    grid = np.random.default_rng(9).integers(-16, 16, size=(80, 2)) / 8.0
    rows = [{"x": float(x), "y": float(y)} for x, y in grid]
    moved = [{"x": r["x"] + 250.0, "y": r["y"] - 40.0} for r in rows]
    queries = [{"x": x, "y": y} for x in (-2.0, 0.0, 1.5) for y in (-1.0, 0.5, 3.0)]
    moved_queries = [{"x": p["x"] + 250.0, "y": p["y"] - 40.0} for p in queries]

    model = train_ocsvm(rows, ("x", "y"), OcsvmConfig(nu=0.2))
    shifted = train_ocsvm(moved, ("x", "y"), OcsvmConfig(nu=0.2))

    assert shifted.decisions(moved_queries) == pytest.approx(model.decisions(queries), abs=1e-9)
    assert shifted.decisions(moved) == pytest.approx(model.decisions(rows), abs=1e-9)


def test_ocsvm_point_mass():
    rows = [{"x": 1.0, "y": 2.0}] * 10
    model = train_ocsvm(rows, ("x", "y"), OcsvmConfig(nu=0.1))

    assert all(p.label == "in-class" for p in model.predict_many(rows))
    assert model.predict({"x": 100.0, "y": 100.0}).label == "out-of-class"
