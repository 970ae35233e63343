import itertools
import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from IdeologyProject.stats import bootstrap_mean_diff_ci, mann_whitney, mean_with_ci, welch_test


def _brute_force_p(x, y) -> float:
    ranks = scipy_stats.rankdata(np.concatenate([x, y]))
    n1 = len(x)
    expected = n1 * (len(ranks) + 1) / 2.0
    observed = abs(ranks[:n1].sum() - expected)
    subsets = list(itertools.combinations(range(len(ranks)), n1))
    hits = sum(abs(ranks[list(subset)].sum() - expected) >= observed - 1e-9 for subset in subsets)
    return hits / len(subsets)


@pytest.mark.parametrize("seed", range(12))
def test_exact_p_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 5, size=int(rng.integers(2, 6))) / 4.0
    y = rng.integers(0, 5, size=int(rng.integers(2, 7))) / 4.0
    if np.all(np.concatenate([x, y]) == x[0]):
        pytest.skip("all values tied")
    result = mann_whitney(x, y)
    assert result.method == "exact"
    assert result.p_value == pytest.approx(_brute_force_p(x, y), abs=1e-12)
    assert result.u1 + result.u2 == len(x) * len(y)


def test_exact_p_without_ties_matches_scipy():
    x = [0.1, 0.4, 0.35, 0.8]
    y = [0.2, 0.9, 0.95, 0.7, 0.85]
    expected = scipy_stats.mannwhitneyu(x, y, alternative="two-sided", method="exact").pvalue
    assert mann_whitney(x, y).p_value == pytest.approx(expected, abs=1e-12)


def test_large_samples_use_normal_approximation():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 5, size=40) / 4.0
    y = rng.integers(0, 5, size=35) / 4.0
    result = mann_whitney(x, y)
    expected = scipy_stats.mannwhitneyu(x, y, alternative="two-sided", method="asymptotic").pvalue
    assert result.method == "asymptotic"
    assert result.p_value == pytest.approx(expected)


def test_all_tied_gives_p_one():
    result = mann_whitney([0.5, 0.5, 0.5], [0.5, 0.5])
    assert result.p_value == 1.0 and result.method == "degenerate"


def test_empty_group_is_rejected():
    with pytest.raises(ValueError):
        mann_whitney([], [0.5])


def test_bootstrap_is_deterministic_per_item():
    x = [0.0, 0.25, 0.5, 1.0, 0.75]
    y = [0.5, 0.5, 0.25, 0.0]
    first = bootstrap_mean_diff_ci(x, y, n_resamples=500, seed=11, item="Q1")
    assert first == bootstrap_mean_diff_ci(x, y, n_resamples=500, seed=11, item="Q1")
    assert first != bootstrap_mean_diff_ci(x, y, n_resamples=500, seed=11, item="Q2")
    assert first[0] <= np.mean(x) - np.mean(y) <= first[1]


def test_bootstrap_of_constant_groups_is_a_point():
    assert bootstrap_mean_diff_ci([1.0, 1.0], [0.25, 0.25, 0.25], n_resamples=100) == (0.75, 0.75)


def test_welch_equals_student_for_equal_variance_and_size():
    a = [1.0, 2.0, 3.0, 4.0]
    b = [2.5, 3.5, 4.5, 5.5]
    welch = welch_test(a, b)
    student = scipy_stats.ttest_ind(a, b, equal_var=True)
    assert welch.statistic == pytest.approx(student.statistic)
    assert welch.p_value == pytest.approx(student.pvalue)
    assert welch.dof == pytest.approx(6.0)


def test_welch_zero_variance_rule():
    assert welch_test([0.5, 0.5], [0.5, 0.5, 0.5]).p_value == 1.0
    different = welch_test([0.5, 0.5], [0.25, 0.25])
    assert different.p_value == 0.0 and math.isinf(different.statistic)


def test_mean_with_ci_is_symmetric():
    mean, low, high = mean_with_ci([0.0, 0.5, 1.0])
    assert mean == pytest.approx(0.5)
    assert mean - low == pytest.approx(high - mean)
    assert high - mean == pytest.approx(1.96 * 0.5 / math.sqrt(3))
