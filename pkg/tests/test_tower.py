import mpmath
import numpy as np
import pytest
import scipy.stats as sps

from homog import _kernels as _k
from homog.dynamics import MapSpec, Observable, to_point, to_state
from homog.errors import ConfigError, ConvergenceError
from homog.observables import make_observable
from homog.rng import initial_uniforms
from homog.tower import (
    build_induced,
    e_from_chi,
    hypothesis_diagnostics,
    induce_observable,
    induced_phi,
    lsv_xi_chain,
    martingale_decompose,
    return_time,
    sigma_from_m,
    ulam_P,
)


@pytest.fixture(scope="module")
def model_lsv(lsv25):
    return ulam_P(build_induced(lsv25), 1024)


@pytest.fixture(scope="module")
def model_doubling(doubling):
    return ulam_P(build_induced(doubling), 256)


def const_observable(value: float) -> Observable:
    # 1 - cos(1 + 0 x) is constant; shift the centre to hit `value`
    raw = 1.0 - np.cos(1.0)
    return Observable(
        name="const",
        dim=1,
        center=(raw - value,),
        sup_norm=raw,
        holder_seminorm=0.0,
        eta=1.0,
        oid=5,
        param=0.0,
    )


# ---------------------------------------------------------------------------
# induced scheme
# ---------------------------------------------------------------------------


def test_build_induced_doubling_trivial(doubling):
    sch = build_induced(doubling)
    assert sch.y_lo == 0.0 and sch.y_hi == 1.0
    assert list(sch.taus) == [1, 1]
    assert sch.tail_mass == 0.0


def test_build_induced_lsv_first_cylinder(lsv25):
    sch = build_induced(lsv25)
    assert sch.taus[0] == 1
    assert sch.lefts[0] == 0.75 and sch.rights[0] == 1.0
    # cylinders tile Y from the right, ordered by tau
    assert np.all(sch.rights[1:] == sch.lefts[:-1])


def test_build_induced_rejects_quadratic(quad2):
    with pytest.raises(ConfigError):
        build_induced(quad2)


def test_build_induced_rejects_tiny_cap(lsv25):
    # a cap of 1 leaves more than half of Y uncovered
    with pytest.raises(ConfigError):
        build_induced(MapSpec(kind="lsv", gamma=0.45, p=2.0), tau_cap=1)


def test_scheme_verify_endpoints(lsv25):
    rep = build_induced(lsv25).verify(tol=1e-9)
    assert rep["checked"] >= 10
    assert rep["max_endpoint_error"] <= 1e-9
    assert rep["coverage_gap"] <= 1e-12


def test_xi_chain_is_backward_orbit(lsv25):
    xi = lsv_xi_chain(0.25, 50)
    g = lambda x: x * (1.0 + (2.0 * x) ** 0.25)
    back = np.array([g(x) for x in xi[1:]])
    np.testing.assert_allclose(back, xi[:-1], rtol=1e-13)
    assert np.all(np.diff(xi) < 0)


def test_cylinder_masses_match_monte_carlo_tails(lsv25):
    sch = build_induced(lsv25)
    y0 = initial_uniforms(3, 10_000_000, "init", 0.5, 1.0)
    taus = _k.first_return_times(lsv25.map_id, lsv25.map_param, y0, 200, 0.5)
    lengths = sch.rights - sch.lefts
    for k in (1, 2, 3, 5, 10, 20):
        p_mc = np.mean(taus == k)
        p_leb = 2.0 * lengths[k - 1]  # Lebesgue fraction of Y
        se = np.sqrt(p_leb * (1 - p_leb) / len(y0))
        assert abs(p_mc - p_leb) <= 5 * se + 1e-9
    # tail decays monotonically
    tail = np.array([np.mean(taus > k) for k in (5, 10, 20, 40, 80)])
    assert np.all(np.diff(tail) < 0)


# ---------------------------------------------------------------------------
# return times and induced observables
# ---------------------------------------------------------------------------


def test_return_time_examples(lsv25, doubling):
    assert return_time(lsv25, 0.8) == (1, False)
    assert return_time(lsv25, 0.7) == (2, False)
    assert return_time(doubling, 0.6) == (1, False)


def test_return_time_second_step_oracle():
    # high-precision check that T^2(0.7) lands in Y while T(0.7) does not
    with mpmath.workdps(40):
        g = mpmath.mpf("0.25")
        x1 = 2 * mpmath.mpf(0.7) - 1
        x2 = x1 * (1 + 2**g * x1**g)
        assert x1 < mpmath.mpf("0.5")
        assert x2 > mpmath.mpf("0.5")


def test_return_time_cap_flag(lsv25):
    rt = return_time(lsv25, 0.5 + 1e-12, tau_cap=3)
    assert rt.capped and rt.steps == 3


def test_return_time_outside_Y(lsv25):
    with pytest.raises(ConfigError):
        return_time(lsv25, 0.3)


def test_induce_observable_constant(lsv25):
    v = const_observable(0.7)
    y = 0.7  # tau = 2
    acc, capped = induce_observable(lsv25, v, y)
    assert not capped
    assert acc[0] == pytest.approx(2 * 0.7, rel=1e-12)


def test_induce_observable_doubling_cos(doubling, cos_doubling):
    acc, _ = induce_observable(doubling, cos_doubling, 0.6)
    assert acc[0] == pytest.approx(np.cos(1.2 * np.pi), abs=1e-12)


def test_induce_observable_lsv_two_steps(lsv25, linear_lsv):
    y = 0.7
    x1 = 2 * y - 1
    expected = linear_lsv(y)[0] + linear_lsv(x1)[0]
    acc, _ = induce_observable(lsv25, linear_lsv, y)
    assert acc[0] == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# discretised operator
# ---------------------------------------------------------------------------


def test_model_invariants(model_lsv, model_doubling):
    for tm in (model_lsv, model_doubling):
        assert tm.p_one_residual <= 1e-8
        assert tm.adjoint_residual <= 1e-8
        assert tm.tau_bar >= 1.0
        assert abs(tm.muY.sum() - 1.0) < 1e-12


def test_doubling_rows_average_preimage_bins(model_doubling):
    P = model_doubling.P.toarray()
    bins = model_doubling.bins
    for j in (0, 17, 100, bins - 1):
        row = P[j]
        nz = np.nonzero(row)[0]
        assert set(nz) == {j // 2, j // 2 + bins // 2}
        np.testing.assert_allclose(row[nz], 0.5, atol=1e-12)


def test_doubling_P_action_on_polynomials(model_doubling):
    # transfer operator of 2x mod 1: (Pv)(x) = (v(x/2) + v(x/2 + 1/2)) / 2,
    # reproduced on binned polynomials up to the O(w) bin quantisation
    tm = model_doubling
    x = tm.centers
    w = 1.0 / tm.bins
    for poly in (lambda t: t, lambda t: t**2 - t, lambda t: t**3):
        v = poly(x)
        expected = 0.5 * (poly(x / 2) + poly(x / 2 + 0.5))
        got = tm.P @ v
        assert np.max(np.abs(got - expected)) < w


def test_muY_matches_monte_carlo_first_returns(lsv25, model_lsv):
    y0 = initial_uniforms(5, 200_000, "init", 0.5, 1.0)
    ys = _k.induced_map_iterate(lsv25.map_id, lsv25.map_param, y0, 0.5, 50, 100_000)
    cdf_vals = np.concatenate([[0.0], np.cumsum(model_lsv.muY)])
    stat = sps.ks_1samp(ys, lambda x: np.interp(x, model_lsv.edges, cdf_vals)).statistic
    assert stat <= 0.02


def test_cylinder_mass_telescoping(model_lsv):
    total = float(np.sum(model_lsv.cylinder_masses * model_lsv.taus))
    assert abs(total - model_lsv.tau_bar) <= 1e-6 * model_lsv.tau_bar


def test_zeta_ratios_bounded(model_lsv):
    ratios = model_lsv.zeta_ratios
    assert np.all(np.isfinite(ratios[model_lsv.cylinder_masses > 1e-13]))
    assert np.nanmax(ratios) < 50.0


def test_ulam_P_rejects_tiny_bins(lsv25):
    with pytest.raises(ConfigError):
        ulam_P(build_induced(lsv25), 8)


# ---------------------------------------------------------------------------
# martingale decomposition
# ---------------------------------------------------------------------------


def test_decompose_doubling_cos(model_doubling, cos_doubling):
    phi = induced_phi(model_doubling, cos_doubling)
    dec = martingale_decompose(model_doubling, phi)
    assert np.max(np.abs(dec.chi_prime)) <= 1e-6
    np.testing.assert_allclose(dec.m_prime_fine, phi, atol=1e-12)
    assert dec.residual_kernel <= 1e-6 * dec.phi_norm


def test_decompose_zero_observable(model_doubling, doubling):
    v = make_observable("zero", doubling)
    phi = induced_phi(model_doubling, v)
    dec = martingale_decompose(model_doubling, phi)
    assert dec.phi_norm == 0.0
    assert np.all(dec.chi_prime == 0.0) and np.all(dec.m_prime_fine == 0.0)


def test_decompose_lsv_linear(model_lsv, linear_lsv):
    phi = induced_phi(model_lsv, linear_lsv)
    dec = martingale_decompose(model_lsv, phi, K=200)
    assert dec.residual_kernel <= 1e-6 * dec.phi_norm
    assert dec.identity_residual <= max(1e-8, dec.residual_series)


def test_decompose_mean_precondition(model_lsv, linear_lsv):
    phi = induced_phi(model_lsv, linear_lsv) + 0.1
    with pytest.raises(ConfigError):
        martingale_decompose(model_lsv, phi)


def test_decompose_K_cap_raises(model_lsv, linear_lsv):
    phi = induced_phi(model_lsv, linear_lsv)
    with pytest.raises(ConvergenceError):
        martingale_decompose(model_lsv, phi, K=2, series_tol=1e-9)


def test_decompose_shape_guard(model_lsv):
    with pytest.raises(ConfigError):
        martingale_decompose(model_lsv, np.zeros((3, 5, 1)))


# ---------------------------------------------------------------------------
# coefficients from the tower
# ---------------------------------------------------------------------------


def test_sigma_doubling_cos_exact(model_doubling, cos_doubling):
    phi = induced_phi(model_doubling, cos_doubling)
    dec = martingale_decompose(model_doubling, phi)
    sigma = sigma_from_m(model_doubling, dec)
    assert sigma[0, 0] == pytest.approx(0.5, abs=1e-9)
    e = e_from_chi(model_doubling, dec, cos_doubling)
    assert abs(e[0, 0]) <= 1e-9


def test_sigma_zero(model_doubling, doubling):
    v = make_observable("zero", doubling)
    dec = martingale_decompose(model_doubling, induced_phi(model_doubling, v))
    assert np.all(sigma_from_m(model_doubling, dec) == 0.0)
    assert np.all(e_from_chi(model_doubling, dec, v) == 0.0)


def test_sigma_vec3_psd(model_doubling, doubling):
    v = make_observable("vec3", doubling)
    dec = martingale_decompose(model_doubling, induced_phi(model_doubling, v))
    sigma = sigma_from_m(model_doubling, dec)
    assert sigma.shape == (3, 3)
    np.testing.assert_allclose(sigma, sigma.T, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(sigma)) >= -1e-10


# ---------------------------------------------------------------------------
# hypothesis diagnostics
# ---------------------------------------------------------------------------


def test_diagnostics_doubling(model_doubling, cos_doubling):
    dec = martingale_decompose(model_doubling, induced_phi(model_doubling, cos_doubling))
    rep = hypothesis_diagnostics(
        model_doubling, dec, n_grid=(100, 10_000), q_grid=(2.0,), samples=400, seed=1
    )
    # |m'|^2 <= ~1, so the tail functional at q=2 vanishes
    assert rep.tail_values[0] == 0.0
    assert rep.dev_z[-1] <= 3.0


def test_diagnostics_lsv_tail_decays(model_lsv, linear_lsv):
    dec = martingale_decompose(model_lsv, induced_phi(model_lsv, linear_lsv))
    rep = hypothesis_diagnostics(
        model_lsv, dec, n_grid=(1000,), q_grid=(1.0, 10.0, 100.0, 1000.0), samples=300, seed=2
    )
    assert np.all(np.diff(rep.tail_values) <= 1e-15)
    # measured ratio at q=1e3 is ~1.4e-2 of the |m'|^2 mass and decreasing
    assert rep.tail_values[-1] <= 2e-2 * rep.m2_mass
    d = rep.to_dict()
    assert d["birkhoff_deviation"][0]["n"] == 1000
