import math

import numpy as np
import pytest

from qsdsim import resolve_model, solve_qsd_power

# closed-form two-state solution: principal root of l^2 + 3l + 1 = 0
T2_LAMBDA = (-3.0 + math.sqrt(5.0)) / 2.0
T2_NU1 = (3.0 - math.sqrt(5.0)) / 2.0


@pytest.fixture(scope="session")
def t1():
    return resolve_model("point")


@pytest.fixture(scope="session")
def t2():
    return resolve_model("two-state")


@pytest.fixture(scope="session")
def t2_oracle(t2):
    return solve_qsd_power(t2)


def full_generator_t2() -> np.ndarray:
    """Generator of the two-state chain including the absorbing state.

    Row/column order (0, 1, 2); used by the independent matrix-exponential
    oracle below.
    """
    return np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, -2.0, 1.0],
            [0.0, 1.0, -1.0],
        ]
    )


def expm_uniformized(gen: np.ndarray, t: float, tol: float = 1e-16) -> np.ndarray:
    """Matrix exponential by the uniformization series.

    e^{tQ} = sum_k e^{-Lt} (Lt)^k / k! P^k with P = I + Q/L; the series is
    truncated once the remaining Poisson tail is below tol.  Independent of
    the RK4 integrator it is used to check.
    """
    rate = max(-np.diag(gen)) or 1.0
    p = np.eye(len(gen)) + gen / rate
    lt = rate * t
    term = math.exp(-lt)
    out = term * np.eye(len(gen))
    pk = np.eye(len(gen))
    acc = term
    k = 0
    while 1.0 - acc > tol and k < 10_000:
        k += 1
        term *= lt / k
        pk = pk @ p
        out += term * pk
        acc += term
    return out


def conditional_law_t2(t: float) -> np.ndarray:
    """Exact conditioned law (states 1, 2) at time t started from state 2."""
    pt = expm_uniformized(full_generator_t2(), t)
    row = pt[2]
    alive = row[1] + row[2]
    return np.array([row[1] / alive, row[2] / alive])


def merge_bins(counts_a: dict, counts_b: dict, min_expected: float = 5.0):
    """Pool two samples of categorical counts into chi-square-safe bins.

    Categories are ordered by key; adjacent categories are merged until each
    pooled bin has at least ``min_expected`` expected counts in both samples.
    Returns two aligned count arrays.
    """
    keys = sorted(set(counts_a) | set(counts_b))
    a = np.array([counts_a.get(k, 0) for k in keys], dtype=float)
    b = np.array([counts_b.get(k, 0) for k in keys], dtype=float)
    na, nb = a.sum(), b.sum()
    bins_a, bins_b = [], []
    acc_a = acc_b = 0.0
    for va, vb in zip(a, b):
        acc_a += va
        acc_b += vb
        pooled = (acc_a + acc_b) / (na + nb)
        if pooled * na >= min_expected and pooled * nb >= min_expected:
            bins_a.append(acc_a)
            bins_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a or acc_b:
        if bins_a:
            bins_a[-1] += acc_a
            bins_b[-1] += acc_b
        else:
            bins_a.append(acc_a)
            bins_b.append(acc_b)
    return np.array(bins_a), np.array(bins_b)


def two_sample_chi2_pvalue(sample_a, sample_b) -> float:
    """Two-sample chi-square homogeneity test on categorical samples."""
    from collections import Counter
    from scipy.stats import chi2_contingency

    a, b = merge_bins(Counter(sample_a), Counter(sample_b))
    if len(a) < 2:
        return 1.0  # identical degenerate distributions
    table = np.vstack([a, b])
    return float(chi2_contingency(table)[1])


def one_sample_chi2_pvalue(sample, probs: dict) -> float:
    """Goodness-of-fit test of a categorical sample against given masses."""
    from collections import Counter
    from scipy.stats import chisquare

    counts = Counter(sample)
    keys = sorted(probs)
    obs = np.array([counts.get(k, 0) for k in keys], dtype=float)
    exp = np.array([probs[k] for k in keys], dtype=float) * obs.sum()
    keep = exp > 0
    return float(chisquare(obs[keep], exp[keep])[1])
