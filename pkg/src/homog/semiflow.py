"""Suspension semiflows over the base maps.

A state is (x, u) with 0 <= u < h(x); the flow moves u at unit speed and
rolls over through (x, h(x)) ~ (Tx, 0).  Continuous-time iterated
integrals are accumulated by left-endpoint quadrature with a step well
below the roof infimum, and the flow-level coefficient targets are the
base-map (Sigma, E) for the fibre-integrated observable, rescaled by the
mean roof, plus the fibre correction term E'.

Roof presets: ``const1`` (h = 1) and ``affine`` (h = 1 + alpha x).
Fibre observables: ``xcos`` v(x, u) = cos(2 pi x), ``usin`` v = sin(u),
``one`` v = 1.  The coefficient machinery needs the induced observable
int_0^h (v - c) du to live in the compiled observable registry, which
restricts affine roofs to fibres whose raw induced average vanishes; the
shipped presets cover that (doubling base with xcos) and all const-roof
combinations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.stats as sps

from . import _kernels as _k
from .dynamics import MapSpec, Observable, apply_map, to_state
from .errors import ConfigError
from .observables import induced_flow_observable, invariant_average
from .rng import initial_uniforms, stream
from .stats import CoefficientEstimate, consensus, green_kubo, martingale_coeffs
from .wip import TestEntry, TestReport

_ROOFS = {"const1": 0, "affine": 1}
_FIBERS = {"xcos": 0, "usin": 1, "one": 2}

_GL32_NODES, _GL32_WEIGHTS = np.polynomial.legendre.leggauss(32)
_GL16_NODES, _GL16_WEIGHTS = np.polynomial.legendre.leggauss(16)


class FlowState(NamedTuple):
    x: float
    u: float


@dataclass(frozen=True)
class SuspensionSpec:
    """Base map plus roof function, with the mean roof precomputed."""

    base: MapSpec
    roof: str
    alpha: float
    h_bar: float
    inf_roof: float
    sup_roof: float
    c0_floor: float = 0.05

    @property
    def roof_id(self) -> int:
        return _ROOFS[self.roof]


def make_suspension(
    base: MapSpec, roof: str = "const1", alpha: float = 0.0, c0_floor: float = 0.05
) -> SuspensionSpec:
    if roof not in _ROOFS:
        raise ConfigError(f"unknown roof preset {roof!r}; choose from {sorted(_ROOFS)}")
    lo, hi = base.domain
    if roof == "const1":
        inf_h, sup_h, h_bar = 1.0, 1.0, 1.0
    else:
        vals = 1.0 + alpha * np.array([lo, hi])
        inf_h, sup_h = float(vals.min()), float(vals.max())
        h_bar = float(invariant_average(base, lambda x: 1.0 + alpha * x)[0])
    if inf_h < c0_floor:
        raise ConfigError(f"roof infimum {inf_h} below the configured floor {c0_floor}")
    return SuspensionSpec(
        base=base, roof=roof, alpha=alpha, h_bar=h_bar, inf_roof=inf_h, sup_roof=sup_h,
        c0_floor=c0_floor,
    )


def roof_value(susp: SuspensionSpec, x) -> np.ndarray | float:
    if susp.roof == "const1":
        return np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else 1.0
    return 1.0 + susp.alpha * np.asarray(x, dtype=float) if np.ndim(x) else 1.0 + susp.alpha * x


def fiber_value(name: str, x, u) -> np.ndarray | float:
    if name == "xcos":
        return np.cos(2.0 * np.pi * np.asarray(x, dtype=float))
    if name == "usin":
        return np.sin(np.asarray(u, dtype=float))
    if name == "one":
        return np.ones_like(np.asarray(u, dtype=float))
    if name == "ulin":
        # quadrature-only fibre (not in the compiled ensemble registry)
        return np.asarray(u, dtype=float)
    raise ConfigError(f"unknown fibre observable {name!r}; choose from {sorted(_FIBERS)}")


def check_state(susp: SuspensionSpec, state: FlowState) -> FlowState:
    h = roof_value(susp, state.x)
    if not 0.0 <= state.u < h:
        raise ConfigError(f"flow state u={state.u} outside [0, h(x)={h})")
    return state


def lap_number(susp: SuspensionSpec, state: FlowState, t: float) -> int:
    """max{n >= 0 : sum_{j<n} h(T^j x) <= u + t}, computed exactly."""
    if t < 0:
        raise ConfigError("t must be >= 0")
    check_state(susp, state)
    x = state.x
    budget = state.u + t
    n = 0
    while True:
        h = roof_value(susp, x)
        if h <= budget:
            budget -= h
            x = apply_map(susp.base, x)
            n += 1
        else:
            return n


def flow(susp: SuspensionSpec, state: FlowState, t: float) -> FlowState:
    """Advance the suspension flow by time t >= 0."""
    if t < 0:
        raise ConfigError("t must be >= 0")
    check_state(susp, state)
    x = state.x
    u = state.u + t
    while True:
        h = roof_value(susp, x)
        if u < h:
            return FlowState(x, u)
        u -= h
        x = apply_map(susp.base, x)


def induce_v(susp: SuspensionSpec, fiber: str, x: float, order: int = 16) -> float:
    """Fibre integral int_0^{h(x)} v(x, u) du by Gauss-Legendre quadrature."""
    h = roof_value(susp, x)
    nodes = 0.5 * h * (_GL16_NODES + 1.0) if order == 16 else 0.5 * h * (np.polynomial.legendre.leggauss(order)[0] + 1.0)
    weights = 0.5 * h * (_GL16_WEIGHTS if order == 16 else np.polynomial.legendre.leggauss(order)[1])
    return float(np.sum(weights * fiber_value(fiber, x, nodes)))


def _fiber_center(susp: SuspensionSpec, fiber: str) -> float:
    """c = int v d mu_Omega = (1/h_bar) int (fibre integral of v) d mu."""
    if fiber == "one":
        return 1.0
    if fiber == "xcos":
        raw = lambda x: (1.0 + (susp.alpha if susp.roof == "affine" else 0.0) * x) * np.cos(
            2.0 * np.pi * x
        )
    else:  # usin
        a = susp.alpha if susp.roof == "affine" else 0.0
        raw = lambda x: 1.0 - np.cos(1.0 + a * x)
    return float(invariant_average(susp.base, raw)[0]) / susp.h_bar


def induced_base_observable(susp: SuspensionSpec, fiber: str) -> Observable:
    """The base observable x -> int_0^{h(x)} (v(x,u) - c) du, centred.

    Requires c = 0 for affine roofs with nonconstant fibre integral, since
    the compiled registry represents int v du - const only.
    """
    if fiber not in _FIBERS:
        raise ConfigError(f"unknown fibre observable {fiber!r}")
    c0 = _fiber_center(susp, fiber)
    alpha = susp.alpha if susp.roof == "affine" else 0.0
    if fiber == "one":
        # induced observable is h(x) - c0 h(x) = 0 after centring on const roofs
        if susp.roof == "const1":
            return induced_flow_observable(f"flow_{fiber}", susp.base, 0, 0.0)
        raise ConfigError("fibre 'one' over a nonconstant roof has no registry form")
    if fiber == "xcos":
        oid, param = (2, 0.0) if susp.roof == "const1" else (4, alpha)
    else:
        oid, param = (5, alpha)
    if susp.roof == "affine" and abs(c0) > 1e-10:
        raise ConfigError(
            "induced observable for an affine roof needs a vanishing fibre mean;"
            f" got c={c0:.3e} for fibre {fiber!r} over base {susp.base.kind!r}"
        )
    return induced_flow_observable(f"flow_{fiber}_{susp.roof}", susp.base, oid, param)


def flow_iterated_integrals(
    susp: SuspensionSpec,
    fiber: str,
    state: FlowState,
    t1: float,
    dt: float,
    center: float = 0.0,
):
    """Trajectories (t_k, S_{t_k}, SS_{t_k}) by streaming quadrature."""
    if dt > susp.inf_roof / 10.0:
        raise ConfigError(f"dt={dt} too coarse: need dt <= inf h / 10 = {susp.inf_roof / 10}")
    check_state(susp, state)
    nsteps = int(round(t1 / dt))
    S, SS = _k.flow_traj(
        susp.base.map_id,
        susp.base.map_param,
        susp.roof_id,
        susp.alpha,
        _FIBERS[fiber],
        0.0,
        center,
        float(to_state(susp.base, state.x)),
        state.u,
        nsteps,
        dt,
    )
    times = dt * np.arange(nsteps + 1)
    return times, S, SS


# ---------------------------------------------------------------------------
# Flow-level coefficient targets
# ---------------------------------------------------------------------------


@dataclass
class FlowTargets:
    """Predicted flow-level covariance and Levy-area drift."""

    cov: np.ndarray
    drift: np.ndarray
    e_prime: float
    cov_stderr: np.ndarray
    drift_stderr: np.ndarray
    base: CoefficientEstimate
    meta: dict = field(default_factory=dict)


def _h_of(susp: SuspensionSpec, x: np.ndarray) -> np.ndarray:
    a = susp.alpha if susp.roof == "affine" else 0.0
    return 1.0 + a * x


def _H_closed(susp: SuspensionSpec, fiber: str, c0: float, x: np.ndarray, u: np.ndarray):
    """H(x, u) = int_0^u (v - c0) ds for the preset fibres (closed forms)."""
    if fiber == "xcos":
        return u * (np.cos(2.0 * np.pi * x) - c0)
    if fiber == "usin":
        return (1.0 - np.cos(u)) - c0 * u
    return (1.0 - c0) * u


def e_prime_quadrature(susp: SuspensionSpec, fiber: str, c0: float | None = None) -> float:
    """E' = int_Omega H (x) v d mu by fibre quadrature against the product
    measure (outer: invariant average on the base; inner: Gauss-Legendre)."""
    if c0 is None:
        c0 = _fiber_center(susp, fiber)

    def integrand(x):
        x = np.asarray(x, dtype=float)
        h = _h_of(susp, x)
        nodes = 0.5 * h[:, None] * (_GL32_NODES[None, :] + 1.0)
        weights = 0.5 * h[:, None] * _GL32_WEIGHTS[None, :]
        H = _H_closed(susp, fiber, c0, x[:, None], nodes)
        v = fiber_value(fiber, x[:, None] * np.ones_like(nodes), nodes) - c0
        return np.sum(weights * H * v, axis=1)

    return float(invariant_average(susp.base, integrand)[0]) / susp.h_bar


def flow_coeffs(
    susp: SuspensionSpec,
    fiber: str,
    base_coeffs: CoefficientEstimate | None = None,
    orbit_len: int = 10_000_000,
    n_max: int = 1000,
    seed: int = 0,
) -> FlowTargets:
    """cov = Sigma / h_bar and drift = E / h_bar + E' for the flow WIP.

    Base coefficients for the induced observable default to the consensus
    of the martingale and Green-Kubo estimators.
    """
    c0 = _fiber_center(susp, fiber)
    if base_coeffs is None:
        v = induced_base_observable(susp, fiber)
        if v.oid == 0:
            z = np.zeros((1, 1))
            base_coeffs = CoefficientEstimate(z, z.copy(), "analytic", z.copy(), z.copy())
        else:
            base_coeffs = consensus(
                [
                    martingale_coeffs(susp.base, v, bins=2048),
                    green_kubo(susp.base, v, n_max, orbit_len, seed=seed),
                ]
            )
    ep = e_prime_quadrature(susp, fiber, c0)
    hb = susp.h_bar
    return FlowTargets(
        cov=base_coeffs.sigma / hb,
        drift=base_coeffs.e / hb + ep,
        e_prime=ep,
        cov_stderr=base_coeffs.sigma_stderr / hb,
        drift_stderr=base_coeffs.e_stderr / hb,
        base=base_coeffs,
        meta={"h_bar": hb, "fiber": fiber, "roof": susp.roof, "alpha": susp.alpha, "c0": c0},
    )


# ---------------------------------------------------------------------------
# Flow ensembles and checks
# ---------------------------------------------------------------------------


def sample_flow_states(
    susp: SuspensionSpec, M: int, seed: int, burnin: int = 1000, strip: int = 24
):
    """Draws from mu_Omega: x roof-length biased over mu, u uniform in the fibre.

    Per-sample rejection against h(x)/sup h, with each sample consuming
    its own stream so results are independent of scheduling.
    """
    lo, hi = susp.base.domain
    pool = initial_uniforms(seed, M * strip, "init", lo, hi)
    if susp.base.kind != "doubling" and burnin > 0:
        pool = _k.iterate_ensemble(susp.base.map_id, susp.base.map_param, pool, burnin)
    pool = pool.reshape(M, strip)
    xs = np.empty(M)
    us = np.empty(M)
    for m in range(M):
        g = stream(seed, m, "fiber")
        x = pool[m, -1]
        for j in range(strip):
            if g.random() * susp.sup_roof <= roof_value(susp, pool[m, j]):
                x = pool[m, j]
                break
        xs[m] = x
        us[m] = g.random() * roof_value(susp, x)
    return xs, us


def lap_number_lln(
    susp: SuspensionSpec, t: float, M: int, seed: int = 0
) -> tuple[float, float, float]:
    """(mean of N(t)/t, stderr, target 1/h_bar) over M flow states."""
    xs, us = sample_flow_states(susp, M, seed)
    xs = np.asarray(to_state(susp.base, xs))
    N = _k.lap_counts(susp.base.map_id, susp.base.map_param, susp.roof_id, susp.alpha, xs, us, t)
    vals = N / t
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(M)), 1.0 / susp.h_bar


def lap_deviation_scaling(
    susp: SuspensionSpec, t1_grid, M: int, seed: int = 0, n_boot: int = 200
):
    """Fit of log E[sup_{t<=t1} |N(t) - t/h_bar|] against log t1."""
    t1_grid = np.asarray(sorted(float(t) for t in t1_grid))
    xs, us = sample_flow_states(susp, M, seed)
    xs = np.asarray(to_state(susp.base, xs))
    sups = np.empty((M, len(t1_grid)))
    for i, t1 in enumerate(t1_grid):
        sups[:, i] = _k.lap_sup_dev(
            susp.base.map_id, susp.base.map_param, susp.roof_id, susp.alpha, xs, us, t1, susp.h_bar
        )
    means = sups.mean(axis=0)
    slope = float(np.polyfit(np.log(t1_grid), np.log(means), 1)[0])
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        idx = stream(seed, b, "bootstrap").integers(0, M, size=M)
        slopes[b] = float(np.polyfit(np.log(t1_grid), np.log(sups[idx].mean(axis=0)), 1)[0])
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return slope, float(lo), float(hi), means


def flow_sup_moment(
    susp: SuspensionSpec, fiber: str, t1_grid, M: int, seed: int = 0, dt: float | None = None
) -> np.ndarray:
    """L2 norms of sup_{t<=t1} |S_t| on a t1 grid (one streamed pass)."""
    t1_grid = np.asarray(sorted(float(t) for t in t1_grid))
    if dt is None:
        dt = susp.inf_roof / 50.0
    c0 = _fiber_center(susp, fiber)
    xs, us = sample_flow_states(susp, M, seed)
    xs = np.asarray(to_state(susp.base, xs))
    snapsteps = np.round(t1_grid / dt).astype(np.int64)
    _, _, smax = _k.flow_ensemble(
        susp.base.map_id, susp.base.map_param, susp.roof_id, susp.alpha,
        _FIBERS[fiber], 0.0, c0, xs, us, dt, snapsteps,
    )
    return np.sqrt(np.mean(smax**2, axis=0))


def flow_wip_check(
    susp: SuspensionSpec,
    fiber: str,
    t1: float,
    M: int,
    seed: int = 0,
    grid=(0.0, 0.25, 0.5, 0.75, 1.0),
    dt: float | None = None,
    targets: FlowTargets | None = None,
    significance: float = 0.01,
    z_max: float = 3.0,
    lap_t: float = 1000.0,
) -> TestReport:
    """Continuous-time analogue of the map-level WIP checks.

    W(t) = S_{t t1} / sqrt(t1) is tested against covariance Sigma / h_bar,
    the mean scaled Levy area against (E / h_bar + E') t, and the lap
    numbers against the 1/h_bar law of large numbers.
    """
    if M < 1000:
        raise ConfigError("need at least 1000 flow paths")
    if dt is None:
        dt = susp.inf_roof / 50.0
    if dt > susp.inf_roof / 10.0:
        raise ConfigError(f"dt={dt} too coarse: need dt <= inf h / 10")
    if targets is None:
        targets = flow_coeffs(susp, fiber, seed=seed)
    c0 = targets.meta.get("c0", _fiber_center(susp, fiber))
    g = np.asarray(sorted(float(t) for t in grid))
    steps = int(round(t1 / dt))
    snapsteps = np.floor(steps * g).astype(np.int64)
    xs, us = sample_flow_states(susp, M, seed)
    xs = np.asarray(to_state(susp.base, xs))
    S, SS, _ = _k.flow_ensemble(
        susp.base.map_id, susp.base.map_param, susp.roof_id, susp.alpha,
        _FIBERS[fiber], 0.0, c0, xs, us, dt, snapsteps,
    )
    W = S / np.sqrt(t1)
    WW = SS / t1
    gi = len(g) - 1
    entries = []
    cov_target = float(targets.cov[0, 0])
    cov_se_t = float(targets.cov_stderr[0, 0])
    w1 = W[:, gi]
    var_est = float(np.var(w1, ddof=1))
    se_est = float(np.std((w1 - w1.mean()) ** 2, ddof=1) / np.sqrt(M))
    se = float(np.hypot(se_est, cov_se_t))
    z = (var_est - cov_target) / se if se > 0 else 0.0
    entries.append(
        TestEntry(
            name="flow_cov_W1",
            kind="z",
            statistic=float(z),
            p_value=float(2.0 * sps.norm.sf(abs(z))),
            passed=bool(abs(z) <= z_max),
            note=f"var={var_est:.6g} target={cov_target:.6g} se={se:.3g}",
        )
    )
    res = sps.kstest(w1, "norm", args=(0.0, np.sqrt(max(cov_target, 1e-300))))
    entries.append(
        TestEntry(
            name="flow_normal_W1",
            kind="ks",
            statistic=float(res.statistic),
            p_value=float(res.pvalue),
            passed=bool(res.pvalue > significance),
        )
    )
    drift_target = float(targets.drift[0, 0])
    drift_se_t = float(targets.drift_stderr[0, 0])
    a1 = WW[:, gi]
    mean_est = float(a1.mean())
    se = float(np.hypot(a1.std(ddof=1) / np.sqrt(M), drift_se_t))
    z = (mean_est - drift_target) / se if se > 0 else 0.0
    entries.append(
        TestEntry(
            name="flow_drift_WW1",
            kind="z",
            statistic=float(z),
            p_value=float(2.0 * sps.norm.sf(abs(z))),
            passed=bool(abs(z) <= z_max),
            note=f"mean={mean_est:.6g} target={drift_target:.6g} se={se:.3g}",
        )
    )
    lap_mean, lap_se, lap_target = lap_number_lln(susp, lap_t, M, seed=seed)
    z = (lap_mean - lap_target) / lap_se if lap_se > 0 else 0.0
    entries.append(
        TestEntry(
            name=f"lap_lln_t={lap_t:g}",
            kind="z",
            statistic=float(z),
            p_value=float(2.0 * sps.norm.sf(abs(z))),
            passed=bool(abs(z) <= z_max),
            note=f"mean N/t={lap_mean:.6g} target={lap_target:.6g} se={lap_se:.3g}",
        )
    )
    return TestReport(
        entries=entries,
        significance=significance,
        meta={
            "t1": t1,
            "dt": dt,
            "M": M,
            "fiber": fiber,
            "roof": susp.roof,
            "alpha": susp.alpha,
            "h_bar": susp.h_bar,
            "c0": c0,
            "cov_target": cov_target,
            "drift_target": drift_target,
            "e_prime": targets.e_prime,
            "seed": seed,
        },
    )
