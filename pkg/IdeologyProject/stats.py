import math
import zlib
from fractions import Fraction
from typing import Literal

import numpy as np
from pydantic import BaseModel
from scipy import stats as scipy_stats

EXACT_MAX_SMALLER = 8
EXACT_MAX_TOTAL = 60


class MannWhitneyResult(BaseModel):
    u1: float
    u2: float
    p_value: float
    method: Literal["exact", "asymptotic", "degenerate"]


class WelchResult(BaseModel):
    statistic: float
    p_value: float
    dof: float


def _exact_two_sided(doubled: np.ndarray, chosen: np.ndarray) -> float:
    """P(|W - E| >= |w - E|) where W sums doubled midranks of a random subset of the chosen size.

    Exact under ties: the subset distribution is enumerated with a counting table over
    (subset size, rank sum), conditional on the observed tie pattern.
    """
    total = len(doubled)
    size = len(chosen)
    observed = int(chosen.sum())
    expected = size * (total + 1)
    max_sum = int(np.sort(doubled)[::-1][:size].sum())
    counts = np.zeros((size + 1, max_sum + 1), dtype=object)
    counts[0, 0] = 1
    for value in doubled.astype(int):
        for k in range(size, 0, -1):
            counts[k, value:] = counts[k, value:] + counts[k - 1, :max_sum + 1 - value]
    sums = np.arange(max_sum + 1)
    extreme = np.abs(sums - expected) >= abs(observed - expected)
    hits = sum(counts[size, extreme].tolist())
    return float(Fraction(int(hits), math.comb(total, size)))


def mann_whitney(x, y) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test with tie handling.

    Small samples (smaller group <= 8, at most 60 values) use the exact conditional
    distribution; larger ones the normal approximation with tie and continuity corrections.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("Mann-Whitney needs at least one value per group")
    ranks = scipy_stats.rankdata(np.concatenate([x, y]))
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    u2 = float(n1 * n2 - u1)
    if np.all(ranks == ranks[0]):
        return MannWhitneyResult(u1=u1, u2=u2, p_value=1.0, method="degenerate")

    if min(n1, n2) <= EXACT_MAX_SMALLER and n1 + n2 <= EXACT_MAX_TOTAL:
        doubled = np.rint(2 * ranks).astype(int)
        chosen = doubled[:n1] if n1 <= n2 else doubled[n1:]
        p_value = _exact_two_sided(doubled, chosen)
        return MannWhitneyResult(u1=u1, u2=u2, p_value=min(1.0, p_value), method="exact")

    result = scipy_stats.mannwhitneyu(x, y, alternative="two-sided", use_continuity=True, method="asymptotic")
    p_value = float(result.pvalue)
    if math.isnan(p_value):
        p_value = 1.0
    return MannWhitneyResult(u1=u1, u2=u2, p_value=min(1.0, max(0.0, p_value)), method="asymptotic")


def resample_generator(seed: int, item: str) -> np.random.Generator:
    """One generator per (seed, item) so results do not depend on evaluation order."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(item.encode("utf-8"))]))


def bootstrap_mean_diff_ci(x, y, n_resamples: int = 10000, seed: int = 0, item: str = "",
                           percentiles: tuple[float, float] = (2.5, 97.5)) -> tuple[float, float]:
    """Percentile bootstrap of mean(x) - mean(y); each group resampled with replacement at its own size."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = resample_generator(seed, item)
    x_means = x[rng.integers(0, len(x), size=(n_resamples, len(x)))].mean(axis=1)
    y_means = y[rng.integers(0, len(y), size=(n_resamples, len(y)))].mean(axis=1)
    low, high = np.percentile(x_means - y_means, percentiles)
    return float(low), float(high)


def welch_test(a, b) -> WelchResult:
    """Welch's two-sided t-test; two zero-variance samples give p = 1 on equal means, else 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("Welch's test needs at least two values per group")
    var_a, var_b = a.var(ddof=1), b.var(ddof=1)
    if var_a == 0 and var_b == 0:
        if a.mean() == b.mean():
            return WelchResult(statistic=0.0, p_value=1.0, dof=float(len(a) + len(b) - 2))
        return WelchResult(statistic=math.copysign(math.inf, a.mean() - b.mean()), p_value=0.0,
                           dof=float(len(a) + len(b) - 2))
    se_a, se_b = var_a / len(a), var_b / len(b)
    dof = (se_a + se_b) ** 2 / (se_a ** 2 / (len(a) - 1) + se_b ** 2 / (len(b) - 1))
    result = scipy_stats.ttest_ind(a, b, equal_var=False)
    return WelchResult(statistic=float(result.statistic), p_value=float(result.pvalue), dof=float(dof))


def mean_with_ci(values, z: float = 1.96) -> tuple[float, float, float]:
    """Mean and mean +/- z * standard error (ddof 1)."""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return mean, mean - z * se, mean + z * se
