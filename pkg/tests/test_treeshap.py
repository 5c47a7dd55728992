import numpy as np
import pytest

from framebench.features import Dataset
from framebench.gbdt import HyperParams, Tree, TreeEnsemble, train
from framebench.treeshap import (TreeShapExplainer, brute_force_shap,
                                 dependence_data, global_importance, shap_values,
                                 summary_data)


def leaf_tree(value=0.5):
    return Tree(feature=np.array([-1], dtype=np.int64),
                threshold=np.array([np.nan]),
                default_left=np.array([True]),
                left=np.array([-1], dtype=np.int64),
                right=np.array([-1], dtype=np.int64),
                value=np.array([value]))


def single_split_tree(feature=0, threshold=0.0, left_value=2.0, right_value=-1.0):
    return Tree(feature=np.array([feature, -1, -1], dtype=np.int64),
                threshold=np.array([threshold, np.nan, np.nan]),
                default_left=np.array([True, True, True]),
                left=np.array([1, -1, -1], dtype=np.int64),
                right=np.array([2, -1, -1], dtype=np.int64),
                value=np.array([0.0, left_value, right_value]))


def random_tree(rng, n_features, depth):
    """Random binary tree over a random subset of features, as flat arrays."""
    feature, threshold, default_left, left, right, value = [], [], [], [], [], []

    def build(level):
        idx = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        default_left.append(bool(rng.random() < 0.5))
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        if level >= depth or rng.random() < 0.25:
            value[idx] = float(rng.normal())
            return idx
        feature[idx] = int(rng.integers(n_features))
        threshold[idx] = float(rng.normal())
        left[idx] = build(level + 1)
        right[idx] = build(level + 1)
        return idx

    # nodes are appended parent-first, so index 0 stays the root
    build(0)
    return Tree(feature=np.asarray(feature, dtype=np.int64),
                threshold=np.asarray(threshold),
                default_left=np.asarray(default_left),
                left=np.asarray(left, dtype=np.int64),
                right=np.asarray(right, dtype=np.int64),
                value=np.asarray(value))


def random_ensemble(rng, n_features=5, n_trees=2, depth=3, base=0.1):
    trees = tuple(random_tree(rng, n_features, depth) for _ in range(n_trees))
    return TreeEnsemble(base_score=base, trees=trees,
                        feature_names=tuple(f"f{j}" for j in range(n_features)))


def random_rows(rng, n, n_features, missing=0.2):
    X = rng.normal(size=(n, n_features))
    X[rng.random(size=X.shape) < missing] = np.nan
    return X


def test_constant_ensemble_has_zero_phis():
    model = TreeEnsemble(base_score=0.3, trees=(leaf_tree(0.5),), feature_names=("a", "b"))
    explanation = shap_values(model, np.array([1.0, 2.0]), np.zeros((4, 2)))
    assert np.allclose(explanation.phis, 0.0)
    assert explanation.base_value == pytest.approx(0.8)
    assert explanation.margin == pytest.approx(0.8)


def test_single_split_closed_form():
    model = TreeEnsemble(base_score=0.0, trees=(single_split_tree(),),
                         feature_names=("a", "b"))
    # background: 3 rows go left (a < 0), 1 goes right
    background = np.array([[-1.0, 0.0], [-2.0, 0.0], [-0.5, 0.0], [3.0, 0.0]])
    x = np.array([1.0, 7.0])
    explanation = shap_values(model, x, background)
    expected_value = (3 * 2.0 + 1 * -1.0) / 4.0
    assert explanation.phis[0] == pytest.approx(-1.0 - expected_value, abs=1e-12)
    assert explanation.phis[1] == pytest.approx(0.0, abs=1e-12)
    assert explanation.base_value == pytest.approx(expected_value, abs=1e-12)


def test_local_accuracy_on_random_ensembles():
    rng = np.random.default_rng(4)
    for _ in range(25):
        model = random_ensemble(rng, n_features=6, n_trees=3, depth=4)
        background = random_rows(rng, 30, 6)
        explainer = TreeShapExplainer(model, background)
        rows = random_rows(rng, 40, 6)
        explanations = explainer.explain_matrix(rows)
        assert explanations.local_accuracy_gaps().max() <= 1e-9


def test_matches_brute_force_on_random_ensembles():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n_features = int(rng.integers(1, 7))
        model = random_ensemble(rng, n_features=n_features,
                                n_trees=int(rng.integers(1, 4)),
                                depth=int(rng.integers(1, 5)))
        background = random_rows(rng, int(rng.integers(1, 25)), n_features)
        x = random_rows(rng, 1, n_features)[0]
        fast = shap_values(model, x, background)
        slow = brute_force_shap(model, x, background)
        assert np.max(np.abs(fast.phis - slow.phis)) <= 1e-9
        assert fast.base_value == pytest.approx(slow.base_value, abs=1e-9)
        assert fast.margin == pytest.approx(slow.margin, abs=1e-12)


def test_additivity_across_trees():
    rng = np.random.default_rng(6)
    t1 = random_tree(rng, 4, 3)
    t2 = random_tree(rng, 4, 3)
    background = random_rows(rng, 20, 4)
    x = random_rows(rng, 1, 4)[0]
    names = tuple(f"f{j}" for j in range(4))
    both = shap_values(TreeEnsemble(0.0, (t1, t2), names), x, background)
    first = shap_values(TreeEnsemble(0.0, (t1,), names), x, background)
    second = shap_values(TreeEnsemble(0.0, (t2,), names), x, background)
    assert np.allclose(both.phis, first.phis + second.phis, atol=1e-12)


def test_duplicated_feature_columns_share_credit():
    # two features used through identical structures (one tree each) get
    # equal attributions on rows where their values agree
    model = TreeEnsemble(0.0, (single_split_tree(feature=0),
                               single_split_tree(feature=1)), ("a", "b"))
    rng = np.random.default_rng(3)
    background = rng.normal(size=(60, 1))
    background = np.hstack([background, background])  # identical columns
    for _ in range(20):
        v = float(rng.normal())
        explanation = shap_values(model, np.array([v, v]), background)
        assert explanation.phis[0] == pytest.approx(explanation.phis[1], abs=1e-9)


def test_missing_feature_still_gets_routed_credit():
    model = TreeEnsemble(0.0, (single_split_tree(),), ("a", "b"))
    background = np.array([[-1.0, 0.0], [3.0, 0.0]])
    explanation = shap_values(model, np.array([np.nan, 0.0]), background)
    # default direction is left: f(x) = 2, expectation = 0.5, so "a" carries credit
    assert explanation.phis[0] == pytest.approx(2.0 - 0.5, abs=1e-12)


def test_empty_background_rejected():
    model = TreeEnsemble(0.0, (leaf_tree(),), ("a",))
    with pytest.raises(ValueError, match="non-empty"):
        shap_values(model, np.array([1.0]), np.zeros((0, 1)))


def test_schema_mismatch_rejected():
    model = TreeEnsemble(0.0, (leaf_tree(),), ("a",))
    with pytest.raises(ValueError):
        shap_values(model, np.array([1.0, 2.0]), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        shap_values(model, np.array([1.0]), np.zeros((3, 2)))


def test_brute_force_refuses_too_many_features():
    rng = np.random.default_rng(0)
    trees = tuple(single_split_tree(feature=j) for j in range(13))
    model = TreeEnsemble(0.0, trees, tuple(f"f{j}" for j in range(13)))
    with pytest.raises(ValueError, match="brute-force"):
        brute_force_shap(model, np.zeros(13), np.zeros((2, 13)))


# --- aggregations -------------------------------------------------------------------

def make_explanations(phi_rows, names):
    from framebench.treeshap import ShapExplanations
    phis = np.asarray(phi_rows, dtype=float)
    return ShapExplanations(phis=phis, base_value=0.0,
                            margins=phis.sum(axis=1), feature_names=tuple(names))


def test_importance_of_single_explanation_is_absolute_phis():
    table = global_importance(make_explanations([[0.5, -2.0]], ("a", "b")))
    assert table.entries == (("b", 2.0), ("a", 0.5))


def test_importance_averages_absolute_values():
    table = global_importance(make_explanations([[0.0, 1.0], [0.0, -1.0]], ("a", "b")))
    assert table.value("b") == pytest.approx(1.0)
    assert table.value("a") == 0.0


def test_importance_is_permutation_stable():
    rows = [[0.1, 0.9], [0.6, -0.3], [-0.2, 0.4]]
    forward = global_importance(make_explanations(rows, ("a", "b")))
    backward = global_importance(make_explanations(rows[::-1], ("a", "b")))
    assert forward.entries == backward.entries


def test_importance_ties_break_by_feature_index():
    table = global_importance(make_explanations([[1.0, 1.0]], ("a", "b")))
    assert [name for name, _ in table.entries] == ["a", "b"]


def _tiny_dataset():
    X = np.array([[1.0, np.nan], [2.0, 5.0], [3.0, 6.0]])
    return Dataset.from_arrays(X, [0, 1, 0], feature_names=("a", "b"))


def test_summary_pairs_phis_with_raw_values():
    explanations = make_explanations([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]], ("a", "b"))
    data = summary_data(explanations, _tiny_dataset())
    assert len(data["a"]) == 3
    assert data["b"][0] == (0.2, None, True)
    assert data["b"][1] == (0.4, 5.0, False)


def test_summary_length_mismatch_is_error():
    explanations = make_explanations([[0.1, 0.2]], ("a", "b"))
    with pytest.raises(ValueError, match="rows"):
        summary_data(explanations, _tiny_dataset())


def test_dependence_sorted_and_missing_excluded():
    explanations = make_explanations([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]], ("a", "b"))
    pairs = dependence_data(explanations, _tiny_dataset(), "b")
    assert pairs == [(5.0, 0.4), (6.0, 0.6)]
    with pytest.raises(ValueError, match="unknown feature"):
        dependence_data(explanations, _tiny_dataset(), "zz")


def test_dependence_of_single_split_model_is_step_function():
    model = TreeEnsemble(0.0, (single_split_tree(threshold=0.0),), ("a", "b"))
    rng = np.random.default_rng(12)
    background = random_rows(rng, 50, 2, missing=0.0)
    X = random_rows(rng, 80, 2, missing=0.0)
    explainer = TreeShapExplainer(model, background)
    explanations = explainer.explain_matrix(X)
    dataset = Dataset.from_arrays(X, np.zeros(len(X), dtype=int), feature_names=("a", "b"))
    pairs = dependence_data(explanations, dataset, "a")
    lows = [phi for v, phi in pairs if v < 0.0]
    highs = [phi for v, phi in pairs if v >= 0.0]
    assert max(lows) > min(highs)          # step down across the threshold
    assert len(set(np.round(lows, 9))) == 1
    assert len(set(np.round(highs, 9))) == 1


def test_explanations_on_trained_model_are_locally_accurate():
    rng = np.random.default_rng(31)
    X = rng.normal(size=(400, 8))
    X[rng.random(size=X.shape) < 0.25] = np.nan
    y = (np.nan_to_num(X[:, 1]) - np.nan_to_num(X[:, 4])
         + 0.4 * rng.normal(size=400) > 0).astype(int)
    model = train(Dataset.from_arrays(X, y), HyperParams(n_rounds=25, max_depth=3))
    explainer = TreeShapExplainer(model, X[:200])
    explanations = explainer.explain_matrix(X)
    assert explanations.local_accuracy_gaps().max() <= 1e-9
