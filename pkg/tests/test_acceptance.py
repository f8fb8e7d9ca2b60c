"""Acceptance suite.

Each test prints one PASS/FAIL line for its criterion.  Heavy ensembles
are computed once and shared across criteria through module-level caches
(the Lebesgue-robustness criterion reuses the mu-ensembles of the moment
and path criteria).  Statistical criteria that the design runs over three
seeds pass when at least two seeds pass.
"""

import time

import numpy as np
import pytest
import scipy.stats as sps

from homog.dynamics import MapSpec, lsv_family
from homog.observables import make_observable
from homog.stats import (
    consensus,
    direct_coeffs,
    green_kubo,
    martingale_coeffs,
    moment_table,
    pair_identity_residual,
    scaling_exponent,
    ensemble_sums,
)
from homog.wip import sample_paths

SEEDS = (1301, 1302, 1303)

_moment_cache: dict = {}
_wip_cache: dict = {}
_consensus_cache: dict = {}


def _report(num: int, ok: bool, detail: str, elapsed: float, budget: float) -> bool:
    status = "PASS" if ok and elapsed <= budget else "FAIL"
    print(
        f"\nACCEPTANCE {num:2d} [{status}] {detail} (elapsed {elapsed:.0f}s / budget {budget:.0f}s)"
    )
    return ok and elapsed <= budget


@pytest.fixture(scope="module")
def lsv(lsv25):
    return lsv25


@pytest.fixture(scope="module")
def v_lsv(linear_lsv):
    return linear_lsv


def lsv_consensus(lsv, v_lsv):
    if "lsv" not in _consensus_cache:
        ests = [
            direct_coeffs(lsv, v_lsv, 10_000, 10_000, seed=1399),
            green_kubo(lsv, v_lsv, 1000, 10_000_000, seed=1398),
            martingale_coeffs(lsv, v_lsv, bins=2048),
        ]
        _consensus_cache["lsv"] = consensus(ests)
    return _consensus_cache["lsv"]


def moments_for(lsv, v_lsv, seed, initial):
    key = (seed, initial)
    if key not in _moment_cache:
        _moment_cache[key] = moment_table(
            lsv,
            v_lsv,
            [1000, 10_000, 100_000, 1_000_000],
            [2.0],
            10_000,
            initial=initial,
            seed=seed,
        )
    return _moment_cache[key]


def wip_for(lsv, v_lsv, seed, initial):
    key = (seed, initial)
    if key not in _wip_cache:
        _wip_cache[key] = sample_paths(
            lsv, v_lsv, 100_000, 10_000, initial=initial, seed=seed
        )
    return _wip_cache[key]


def test_criterion_1_pair_identity(lsv, doubling, quad2):
    """S_n (x) S_n - SS_n - SS_n^T - Q_n vanishes on 1000 mixed orbits."""
    t0 = time.time()
    worst = 0.0
    count = 0
    cases = [
        (lsv, "linear"),
        (lsv, "vec3"),
        (doubling, "cos"),
        (doubling, "vec3"),
        (quad2, "cos"),
        (MapSpec(kind="lsv", gamma=0.1, p=3.0), "cos"),
        (MapSpec(kind="lsv", gamma=0.4, p=2.2), "linear"),
        (quad2, "vec3"),
    ]
    for i, (spec, name) in enumerate(cases):
        v = make_observable(name, spec)
        S, SS, Q, _, _ = ensemble_sums(
            spec, v, np.array([500, 1500]), 125, "lebesgue", 1400 + i, 0
        )
        worst = max(worst, pair_identity_residual(S, SS, Q))
        count += S.shape[0]
    ok = worst <= 1e-10 and count >= 1000
    assert _report(
        1, ok, f"pair identity on {count} orbits, worst residual {worst:.2e} <= 1e-10",
        time.time() - t0, 60,
    )


def test_criterion_2_doubling_oracle(doubling, cos_doubling):
    """Sigma = 1/2, E = 0 from all three estimators within 3 stderr."""
    t0 = time.time()
    ests = [
        direct_coeffs(doubling, cos_doubling, 10_000, 10_000, seed=1420),
        green_kubo(doubling, cos_doubling, 64, 10_000_000, seed=1421),
        martingale_coeffs(doubling, cos_doubling, bins=4096),
    ]
    lines = []
    ok = True
    for est in ests:
        ds = abs(est.sigma[0, 0] - 0.5)
        de = abs(est.e[0, 0])
        good = ds <= 3 * est.sigma_stderr[0, 0] + 1e-12 and de <= 3 * est.e_stderr[0, 0] + 1e-12
        ok &= good
        lines.append(f"{est.method}: |Sigma-0.5|={ds:.2e}, |E|={de:.2e}")
    assert _report(2, ok, "; ".join(lines), time.time() - t0, 300)


def test_criterion_3_martingale_decomposition(lsv, v_lsv):
    """Decomposition identity and kernel property at bins=4096."""
    from homog.tower import build_induced, induced_phi, martingale_decompose, ulam_P

    t0 = time.time()
    model = ulam_P(build_induced(lsv), 4096)
    phi = induced_phi(model, v_lsv)
    dec = martingale_decompose(model, phi, K=200)
    tol = 1e-6 * dec.phi_norm
    ok = dec.identity_residual <= tol and dec.residual_kernel <= tol
    assert _report(
        3,
        ok,
        f"identity {dec.identity_residual:.2e}, |P m'| {dec.residual_kernel:.2e}"
        f" <= 1e-6 |phi'| = {tol:.2e} (K={dec.K})",
        time.time() - t0,
        120,
    )


def test_criterion_4_moment_scaling(lsv, v_lsv):
    """Fitted moment exponents over n in 1e3..1e6, 3 seeds, 2 must pass."""
    t0 = time.time()
    passes = 0
    details = []
    for seed in SEEDS:
        fits = scaling_exponent(moments_for(lsv, v_lsv, seed, "mu"))
        s = fits[("S_max", 2.0)].slope
        ss = fits[("SS_max", 2.0)].slope
        good = 0.45 <= s <= 0.55 and 0.9 <= ss <= 1.1
        passes += good
        details.append(f"seed {seed}: S {s:.3f}, SS {ss:.3f}{'' if good else ' (fail)'}")
    ok = passes >= 2
    assert _report(4, ok, "; ".join(details), time.time() - t0, 1800)


def test_criterion_5_iterated_wip(lsv, v_lsv):
    """KS normality of W(1), cov and mean Levy area against consensus."""
    t0 = time.time()
    cons = lsv_consensus(lsv, v_lsv)
    sig, sig_se = cons.sigma[0, 0], cons.sigma_stderr[0, 0]
    e_t, e_se = cons.e[0, 0], cons.e_stderr[0, 0]
    passes = 0
    details = []
    for seed in SEEDS:
        ens = wip_for(lsv, v_lsv, seed, "mu")
        w1 = ens.W[:, -1, 0]
        p_ks = sps.kstest(w1, "norm", args=(0.0, np.sqrt(sig))).pvalue
        var = w1.var(ddof=1)
        var_se = np.std((w1 - w1.mean()) ** 2, ddof=1) / np.sqrt(len(w1))
        cov_ok = abs(var - sig) <= 3 * (var_se + sig_se)
        a1 = ens.WW[:, -1, 0, 0]
        mean_se = a1.std(ddof=1) / np.sqrt(len(a1))
        drift_ok = abs(a1.mean() - e_t) <= 3 * (mean_se + e_se)
        good = p_ks > 0.01 and cov_ok and drift_ok
        passes += good
        details.append(
            f"seed {seed}: KS p={p_ks:.3f}, |var-Sigma|={abs(var - sig):.4f},"
            f" |WW-E|={abs(a1.mean() - e_t):.4f}{'' if good else ' (fail)'}"
        )
    ok = passes >= 2
    assert _report(5, ok, "; ".join(details), time.time() - t0, 1800)


def test_criterion_6_lebesgue_robustness(lsv, v_lsv):
    """Criteria 4-5 statistics agree between mu and Lebesgue starts."""
    t0 = time.time()
    passes = 0
    details = []
    for seed in SEEDS:
        mu_t = moments_for(lsv, v_lsv, seed, "mu")
        leb_t = moments_for(lsv, v_lsv, seed + 50, "lebesgue")
        moments_ok = True
        for stat in ("S", "S_max", "SS", "SS_max"):
            for n in (1000, 10_000, 100_000, 1_000_000):
                a = mu_t.value(n, 2.0, stat)
                b = leb_t.value(n, 2.0, stat)
                if abs(a.value - b.value) > 3 * (a.stderr + b.stderr):
                    moments_ok = False
        ens_mu = wip_for(lsv, v_lsv, seed, "mu")
        ens_leb = wip_for(lsv, v_lsv, seed + 50, "lebesgue")
        wa, wb = ens_mu.W[:, -1, 0], ens_leb.W[:, -1, 0]
        va = (wa - wa.mean()) ** 2
        vb = (wb - wb.mean()) ** 2
        se = np.hypot(va.std(ddof=1), vb.std(ddof=1)) / np.sqrt(len(wa))
        cov_ok = abs(va.mean() - vb.mean()) <= 3 * se
        aa, ab = ens_mu.WW[:, -1, 0, 0], ens_leb.WW[:, -1, 0, 0]
        se = np.hypot(aa.std(ddof=1), ab.std(ddof=1)) / np.sqrt(len(aa))
        drift_ok = abs(aa.mean() - ab.mean()) <= 3 * se
        good = moments_ok and cov_ok and drift_ok
        passes += good
        details.append(
            f"seed {seed}: moments {'ok' if moments_ok else 'FAIL'},"
            f" cov {'ok' if cov_ok else 'FAIL'}, drift {'ok' if drift_ok else 'FAIL'}"
        )
    ok = passes >= 2
    assert _report(6, ok, "; ".join(details), time.time() - t0, 1800)


def test_criterion_7_homogenization_additive(doubling, cos_doubling):
    """Fast-slow additive case against the Euler-Maruyama OU reference."""
    from homog.fastslow import SDESpec, euler_maruyama, homogenization_compare, make_fastslow, simulate_fastslow

    t0 = time.time()
    fs = make_fastslow("neg_x", "obs", cos_doubling, doubling, xi=0.0)
    sde = SDESpec(
        drift="neg_x", sigma=np.array([[np.sqrt(0.5)]]), xi=np.array([0.0]), h=1e-3,
        note="additive-noise limit: no stochastic-integral correction needed",
    )
    passes = 0
    details = []
    for seed in SEEDS:
        fast = simulate_fastslow(fs, doubling, 100_000, 10_000, seed=seed)
        ref = euler_maruyama(sde, 1.0, 10_000, seed=seed + 10)
        a = fast.W[:, -1, 0]
        b = ref.W[:, -1, 0]
        p_ks = sps.ks_2samp(a, b).pvalue
        va = (a - a.mean()) ** 2
        vb = (b - b.mean()) ** 2
        se = np.hypot(va.std(ddof=1) / np.sqrt(len(a)), vb.std(ddof=1) / np.sqrt(len(b)))
        var_ok = abs(va.mean() - vb.mean()) <= 3 * se
        good = p_ks > 0.01 and var_ok
        passes += good
        details.append(
            f"seed {seed}: KS p={p_ks:.3f}, var {va.mean():.4f} vs {vb.mean():.4f}"
            f"{'' if good else ' (fail)'}"
        )
    ok = passes >= 2
    assert _report(7, ok, "; ".join(details), time.time() - t0, 900)


def test_criterion_8_semiflow_coefficients(doubling):
    """Lap LLN, flow covariance and Levy-area drift against the targets."""
    from homog.semiflow import flow_wip_check, make_suspension

    t0 = time.time()
    susp = make_suspension(doubling, "affine", alpha=0.5)
    rep = flow_wip_check(susp, "xcos", 400.0, 10_000, seed=1431, lap_t=1000.0)
    entries = {e.name: e for e in rep.entries}
    lap = entries["lap_lln_t=1000"]
    cov = entries["flow_cov_W1"]
    drift = entries["flow_drift_WW1"]
    ok = lap.passed and cov.passed and drift.passed
    assert _report(
        8,
        ok,
        f"h_bar={susp.h_bar:.3f}; lap z={lap.statistic:.2f}; cov z={cov.statistic:.2f}"
        f" (target {rep.meta['cov_target']:.4f}); drift z={drift.statistic:.2f}"
        f" (target {rep.meta['drift_target']:.4f}, E'={rep.meta['e_prime']:.4f})",
        time.time() - t0,
        1200,
    )


def test_criterion_9_family_continuity():
    """gamma_n = 0.25 + 0.1/n: coefficients drift to the limit values."""
    t0 = time.time()
    fam = lsv_family(0.25, 0.1, p=3.0)
    limit = fam.member(None)
    v_lim = make_observable("linear", limit)
    ref = direct_coeffs(limit, v_lim, 10_000, 10_000, seed=1440)
    rows = []
    for n in (1, 10, 100):
        spec = fam.member(n)
        v = make_observable("linear", spec)
        est = direct_coeffs(spec, v, 10_000, 10_000, seed=1441)
        rows.append((n, est))
    n100 = rows[-1][1]
    sig_ok = abs(n100.sigma[0, 0] - ref.sigma[0, 0]) <= 3 * (
        n100.sigma_stderr[0, 0] + ref.sigma_stderr[0, 0]
    )
    e_ok = abs(n100.e[0, 0] - ref.e[0, 0]) <= 3 * (n100.e_stderr[0, 0] + ref.e_stderr[0, 0])
    trend = " -> ".join(
        f"n={n}: Sigma {est.sigma[0, 0]:.4f}, E {est.e[0, 0]:.4f}" for n, est in rows
    )
    ok = sig_ok and e_ok
    assert _report(
        9, ok,
        f"{trend}; limit Sigma {ref.sigma[0, 0]:.4f}, E {ref.e[0, 0]:.4f};"
        f" n=100 within bars: Sigma {sig_ok}, E {e_ok}",
        time.time() - t0, 600,
    )
