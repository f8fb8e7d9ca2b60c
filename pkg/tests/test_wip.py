import numpy as np
import pytest
import scipy.stats as sps

from homog.errors import ConfigError
from homog.observables import make_observable
from homog.rng import stream
from homog.wip import (
    PathEnsemble,
    drift_check,
    initial_measure_comparison,
    marginal_normality,
    sample_paths,
)


@pytest.fixture(scope="module")
def ens_doubling(doubling, cos_doubling):
    return sample_paths(doubling, cos_doubling, 10_000, 10_000, initial="mu", seed=61)


def synthetic_gaussian_ensemble(sigma: float, M: int, grid, seed: int) -> PathEnsemble:
    """Known-good sampler: exact Brownian marginals with variance sigma*t."""
    g = np.asarray(grid)
    incs = np.sqrt(np.diff(g) * sigma)
    Z = stream(seed, 0, "selftest").standard_normal((M, len(g) - 1))
    W = np.concatenate([np.zeros((M, 1)), np.cumsum(Z * incs, axis=1)], axis=1)
    return PathEnsemble(
        grid=g,
        W=W[:, :, None],
        WW=None,
        Q=None,
        provenance={"kind": "synthetic", "n": 1, "map": "none", "observable": "none"},
    )


# ---------------------------------------------------------------------------
# sample_paths
# ---------------------------------------------------------------------------


def test_zero_observable_paths(doubling):
    v = make_observable("zero", doubling)
    ens = sample_paths(doubling, v, 1000, 50, seed=1)
    assert np.all(ens.W == 0.0) and np.all(ens.WW == 0.0)


def test_paths_start_at_zero(ens_doubling):
    assert np.all(ens_doubling.W[:, 0, :] == 0.0)
    assert np.all(ens_doubling.WW[:, 0, :, :] == 0.0)


def test_levy_identity(ens_doubling):
    assert ens_doubling.levy_residual() <= 1e-10


def test_grid_validation(doubling, cos_doubling):
    with pytest.raises(ConfigError):
        sample_paths(doubling, cos_doubling, 1000, 100, grid=(0.0, 0.5))  # must end at 1
    with pytest.raises(ConfigError):
        sample_paths(doubling, cos_doubling, 1000, 100, grid=(0.1, 1.0))
    with pytest.raises(ConfigError):
        sample_paths(doubling, cos_doubling, 50, 100)  # n too small


def test_variance_matches_sigma(ens_doubling):
    w1 = ens_doubling.W[:, -1, 0]
    var = w1.var(ddof=1)
    se = np.std((w1 - w1.mean()) ** 2, ddof=1) / np.sqrt(len(w1))
    assert abs(var - 0.5) <= 3 * se


def test_time_scaling_of_covariance(ens_doubling):
    W = ens_doubling.W[:, :, 0]
    grid = ens_doubling.grid
    var1 = W[:, -1].var(ddof=1)
    for g_idx, t in enumerate(grid):
        if t not in (0.25, 0.5):
            continue
        vt = W[:, g_idx].var(ddof=1)
        se = np.std((W[:, g_idx] - W[:, g_idx].mean()) ** 2, ddof=1) / np.sqrt(W.shape[0])
        assert abs(vt - t * var1) <= 3 * se


# ---------------------------------------------------------------------------
# marginal normality
# ---------------------------------------------------------------------------


def test_normality_doubling(ens_doubling):
    rep = marginal_normality(ens_doubling, np.array([[0.5]]))
    assert rep.passed
    assert all(e.p_value > 0.01 for e in rep.entries if e.kind == "ks")


def test_normality_skips_zero_variance(doubling):
    v = make_observable("zero", doubling)
    ens = sample_paths(doubling, v, 1000, 1000, seed=3)
    rep = marginal_normality(ens, np.array([[0.0]]))
    assert rep.entries[0].kind == "skip"
    assert rep.passed


def test_normality_requires_psd(ens_doubling):
    with pytest.raises(ConfigError):
        marginal_normality(ens_doubling, np.array([[-1.0]]))


def test_normality_pvalues_uniform_on_synthetic():
    # p-values of a correct null should look uniform across replications
    ps = []
    for rep in range(200):
        ens = synthetic_gaussian_ensemble(0.7, 1000, (0.0, 1.0), seed=rep)
        r = marginal_normality(ens, np.array([[0.7]]))
        ps.append(r.entries[0].p_value)
    assert sps.kstest(ps, "uniform").pvalue > 0.05


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------


def test_drift_doubling_zero_target(ens_doubling):
    rep = drift_check(ens_doubling, np.array([[0.0]]))
    assert rep.passed


def test_drift_zero_observable_exact(doubling):
    v = make_observable("zero", doubling)
    ens = sample_paths(doubling, v, 1000, 1000, seed=3)
    rep = drift_check(ens, np.array([[0.0]]))
    assert rep.passed
    assert all(e.statistic == 0.0 for e in rep.entries)


def test_drift_mean_linear_in_t(ens_doubling):
    # regression slope of mean WW(t) over t should sit at E = 0
    grid = ens_doubling.grid[1:]
    means = ens_doubling.WW[:, 1:, 0, 0].mean(axis=0)
    ses = ens_doubling.WW[:, 1:, 0, 0].std(axis=0, ddof=1) / np.sqrt(ens_doubling.M)
    slope = np.polyfit(grid, means, 1)[0]
    assert abs(slope) <= 3 * np.max(ses) / (grid.max() - grid.min())


def test_drift_lsv_against_martingale_estimate(lsv25, linear_lsv):
    from homog.stats import martingale_coeffs

    est = martingale_coeffs(lsv25, linear_lsv, bins=512)
    ens = sample_paths(lsv25, linear_lsv, 20_000, 4000, seed=62)
    rep = drift_check(ens, est.e)
    last = [e for e in rep.entries if "t=1" in e.name][-1]
    assert last.passed


# ---------------------------------------------------------------------------
# initial-measure comparison
# ---------------------------------------------------------------------------


def test_initial_comparison_doubling_identical_law(doubling, cos_doubling):
    # Lebesgue IS the invariant measure for doubling
    a = sample_paths(doubling, cos_doubling, 5000, 4000, initial="mu", seed=63)
    b = sample_paths(doubling, cos_doubling, 5000, 4000, initial="lebesgue", seed=64)
    rep = initial_measure_comparison(a, b)
    assert rep.passed


def test_initial_comparison_lsv(lsv25, linear_lsv):
    a = sample_paths(lsv25, linear_lsv, 20_000, 3000, initial="mu", seed=65)
    b = sample_paths(lsv25, linear_lsv, 20_000, 3000, initial="lebesgue", seed=66)
    rep = initial_measure_comparison(a, b)
    ks_entries = [e for e in rep.entries if e.kind == "ks2"]
    assert all(e.p_value > 0.01 for e in ks_entries)


def test_initial_comparison_rejects_mismatched_n(doubling, cos_doubling):
    a = sample_paths(doubling, cos_doubling, 1000, 1000, seed=1)
    b = sample_paths(doubling, cos_doubling, 2000, 1000, seed=1)
    with pytest.raises(ConfigError):
        initial_measure_comparison(a, b)


def test_report_serialises(ens_doubling):
    rep = drift_check(ens_doubling, np.array([[0.0]]))
    d = rep.to_dict()
    assert isinstance(d["tests"], list) and d["tests"]
    assert set(d) == {"passed", "significance", "meta", "tests"}
