"""Streaming iterated Birkhoff sums, moment tables, and coefficient estimators.

The streaming state is (S, SS, Q): the ordinary sum, the strictly ordered
pair sum, and the diagonal quadratic sum.  They satisfy the exact algebraic
pair identity S (x) S = SS + SS^T + Q, which doubles as a cheap integrity
check on every orbit the package ever generates.

Sigma and E are estimated three ways: directly from ensembles of S_n and
SS_n, from truncated autocorrelation (Green-Kubo) sums along one long
orbit, and through the martingale decomposition on the induced map.  The
estimators are independent enough that their mutual agreement is used as
an acceptance gate.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from . import tower as _tower
from .dynamics import MapSpec, Observable, to_state
from .errors import ConfigError
from .rng import initial_uniforms, stream


class IteratedStats:
    """Streaming accumulator for (n, S, SS, Q); O(d^2) memory."""

    __slots__ = ("n", "S", "SS", "Q")

    def __init__(self, dim: int):
        self.n = 0
        self.S = np.zeros(dim)
        self.SS = np.zeros((dim, dim))
        self.Q = np.zeros((dim, dim))

    def update(self, v) -> "IteratedStats":
        v = np.asarray(v, dtype=float)
        self.SS += np.outer(self.S, v)
        self.Q += np.outer(v, v)
        self.S += v
        self.n += 1
        return self

    def update_many(self, values: np.ndarray) -> "IteratedStats":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.size == 0:
            return self
        cum = np.cumsum(values, axis=0)
        prev = np.vstack([np.zeros(values.shape[1]), cum[:-1]])
        self.SS += np.outer(self.S, cum[-1]) + np.einsum("kd,ke->de", prev, values)
        self.Q += np.einsum("kd,ke->de", values, values)
        self.S += cum[-1]
        self.n += values.shape[0]
        return self

    def merge(self, other: "IteratedStats") -> "IteratedStats":
        """Concatenate with the stats of a sequence that follows this one."""
        self.SS = self.SS + other.SS + np.outer(self.S, other.S)
        self.Q = self.Q + other.Q
        self.S = self.S + other.S
        self.n += other.n
        return self

    def pair_residual(self) -> float:
        """Relative size of S (x) S - SS - SS^T - Q (0 up to roundoff)."""
        lhs = np.outer(self.S, self.S)
        res = lhs - self.SS - self.SS.T - self.Q
        scale = max(float(np.max(np.abs(lhs))), 1.0)
        return float(np.max(np.abs(res))) / scale


def iterated_sums_stream(values, dim: int | None = None) -> IteratedStats:
    """One-pass iterated sums of a sequence of vectors (or scalars)."""
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    acc = IteratedStats(arr.shape[1] if dim is None else dim)
    return acc.update_many(arr) if arr.size else acc


def pair_identity_residual(S: np.ndarray, SS: np.ndarray, Q: np.ndarray) -> float:
    lhs = np.einsum("...p,...q->...pq", S, S)
    res = lhs - SS - np.swapaxes(SS, -1, -2) - Q
    scale = max(float(np.max(np.abs(lhs))), 1.0)
    return float(np.max(np.abs(res))) / scale


# ---------------------------------------------------------------------------
# Shared ensemble driver
# ---------------------------------------------------------------------------


def ensemble_sums(
    spec: MapSpec,
    v: Observable,
    snaps: np.ndarray,
    M: int,
    initial: str,
    seed: int,
    burnin: int,
):
    """Per-sample (S, SS, Q) snapshots plus running-max norms.

    Starts are per-sample uniform draws; initial="mu" burns them in,
    initial="lebesgue" uses them raw.
    """
    if initial not in ("mu", "lebesgue"):
        raise ConfigError(f"initial measure must be 'mu' or 'lebesgue', got {initial!r}")
    lo, hi = spec.domain
    x0 = to_state(spec, initial_uniforms(seed, M, "init", lo, hi))
    burn = burnin if initial == "mu" else 0
    snaps = np.asarray(snaps, dtype=np.int64)
    if snaps.size == 0 or np.any(snaps < 0) or np.any(np.diff(snaps) < 0):
        raise ConfigError("snapshot steps must be a nondecreasing, nonnegative sequence")
    c = v.center_array
    if v.dim == 1:
        S, SS, Q, mS, mSS = _k.ensemble_stats_1d(
            spec.map_id, spec.map_param, v.oid, v.param, c[0], x0, burn, snaps
        )
        return S[..., None], SS[..., None, None], Q[..., None, None], np.abs(mS), np.abs(mSS)
    S, SS, Q, mS, mSS = _k.ensemble_stats_nd(
        spec.map_id, spec.map_param, v.oid, v.param, c, x0, burn, snaps, v.dim
    )
    return S, SS, Q, mS, mSS


# ---------------------------------------------------------------------------
# Moment tables and scaling exponents
# ---------------------------------------------------------------------------

_STATS = ("S", "S_max", "SS", "SS_max")


@dataclass
class MomentRow:
    n: int
    q: float
    stat: str
    value: float
    stderr: float
    samples: int


@dataclass
class MomentTable:
    """Monte Carlo moments of |S_n|, |SS_n| and their running maxima."""

    rows: list[MomentRow]
    n_grid: np.ndarray
    q_grid: np.ndarray
    samples: int
    meta: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)  # stat -> (M, len(n_grid)) norms

    def value(self, n: int, q: float, stat: str) -> MomentRow:
        for r in self.rows:
            if r.n == n and r.q == q and r.stat == stat:
                return r
        raise KeyError((n, q, stat))


def _check_q_guards(q_grid, spec: MapSpec, override: bool):
    # the moment guarantees are tied to the L^p order of the return time;
    # doubling (tau = 1) and the Collet-Eckmann preset (exponential tails)
    # admit every q, so only the intermittent family is restricted
    if spec.kind != "lsv":
        return set()
    p = spec.p
    bad = []
    for q in q_grid:
        if q > 2.0 * (p - 1.0) + 1e-12:
            bad.append(("S", q, 2.0 * (p - 1.0)))
        if q > (p - 1.0) + 1e-12:
            bad.append(("SS", q, p - 1.0))
    if bad:
        msg = "; ".join(f"{s} moment q={q} exceeds guaranteed range q<={lim}" for s, q, lim in bad)
        if not override:
            raise ConfigError(msg + " (set the override flag to compute anyway)")
        warnings.warn(msg + " -- computing anyway, interpret with care", stacklevel=3)
    return {q for s, q, _ in bad if s == "SS"}


def moment_table(
    spec: MapSpec,
    v: Observable,
    n_grid,
    q_grid,
    M: int,
    initial: str = "mu",
    seed: int = 0,
    burnin: int = 1000,
    override: bool = False,
) -> MomentTable:
    """Monte Carlo moment table over M independent orbits.

    Rows cover the endpoint statistics |S_n|, |SS_n| and the running
    maxima max_{k<=n}; moments above the guaranteed exponent range are
    rejected unless ``override`` is set.
    """
    if M < 100:
        raise ConfigError(f"M={M} refused: fewer than 100 samples makes stderr meaningless")
    n_grid = np.asarray(sorted(int(n) for n in n_grid), dtype=np.int64)
    if np.any(n_grid < 1):
        raise ConfigError("n values must be >= 1")
    q_grid = np.asarray(sorted(float(q) for q in q_grid))
    _check_q_guards(q_grid, spec, override)
    S, SS, Q, mS, mSS = ensemble_sums(spec, v, n_grid, M, initial, seed, burnin)
    norms = {
        "S": np.linalg.norm(S, axis=2),
        "SS": np.linalg.norm(SS.reshape(M, len(n_grid), -1), axis=2),
        "S_max": mS,
        "SS_max": mSS,
    }
    rows = []
    for stat in _STATS:
        X = norms[stat]
        for g, n in enumerate(n_grid):
            for q in q_grid:
                xq = X[:, g] ** q
                rows.append(
                    MomentRow(
                        n=int(n),
                        q=float(q),
                        stat=stat,
                        value=float(np.mean(xq)),
                        stderr=float(np.std(xq, ddof=1) / np.sqrt(M)),
                        samples=M,
                    )
                )
    return MomentTable(
        rows=rows,
        n_grid=n_grid,
        q_grid=q_grid,
        samples=M,
        meta={
            "map": spec.kind,
            "gamma": spec.gamma,
            "p": spec.p,
            "observable": v.name,
            "initial": initial,
            "seed": seed,
            "burnin": burnin,
        },
        raw=norms,
    )


@dataclass
class ScalingFit:
    stat: str
    q: float
    slope: float
    ci_lo: float
    ci_hi: float


def _fit_slope(n_grid: np.ndarray, moments: np.ndarray, q: float) -> float:
    return float(np.polyfit(np.log(n_grid), np.log(moments) / q, 1)[0])


def scaling_exponent(
    table: MomentTable,
    stats=("S_max", "SS_max"),
    n_boot: int = 200,
    seed: int = 0,
) -> dict:
    """Least-squares slope of log moment^(1/q) against log n per statistic.

    Bootstrap CIs resample orbits when the per-sample norms are available
    (tables freshly computed in this process); otherwise the CI comes from
    propagating the tabulated standard errors.
    """
    n_grid = table.n_grid
    if len(np.unique(n_grid)) < 4:
        raise ConfigError("need at least 4 distinct n values for a scaling fit")
    if n_grid.max() < 100 * n_grid.min():
        raise ConfigError("n grid must span at least two decades")
    out = {}
    for stat in stats:
        for q in table.q_grid:
            vals = np.array([table.value(int(n), float(q), stat).value for n in n_grid])
            if np.any(vals <= 0.0):
                raise ConfigError(f"degenerate (zero) moments for stat={stat}, q={q}")
            slope = _fit_slope(n_grid, vals, q)
            if stat in table.raw:
                X = table.raw[stat]
                M = X.shape[0]
                slopes = np.empty(n_boot)
                for b in range(n_boot):
                    idx = stream(seed, b, "bootstrap").integers(0, M, size=M)
                    mom = np.mean(X[idx] ** q, axis=0)
                    mom = np.maximum(mom, 1e-300)
                    slopes[b] = _fit_slope(n_grid, mom, q)
                lo, hi = np.percentile(slopes, [2.5, 97.5])
            else:
                ses = np.array([table.value(int(n), float(q), stat).stderr for n in n_grid])
                dlog = ses / vals / q
                A = np.vstack([np.log(n_grid), np.ones_like(n_grid, dtype=float)]).T
                cov = np.linalg.inv(A.T @ A)
                se = float(np.sqrt(cov[0, 0] * np.mean(dlog**2) * len(n_grid)))
                lo, hi = slope - 1.96 * se, slope + 1.96 * se
            out[(stat, float(q))] = ScalingFit(stat, float(q), slope, float(lo), float(hi))
    return out


# ---------------------------------------------------------------------------
# Coefficient estimators
# ---------------------------------------------------------------------------


@dataclass
class CoefficientEstimate:
    """(Sigma, E) with per-entry standard errors and a method tag."""

    sigma: np.ndarray
    e: np.ndarray
    method: str
    sigma_stderr: np.ndarray
    e_stderr: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        self.e = np.atleast_2d(np.asarray(self.e, dtype=float))
        scale = float(np.max(np.abs(self.sigma)))
        tol = 1e-8 * max(scale, 1e-300)
        if float(np.max(np.abs(self.sigma - self.sigma.T))) > tol:
            raise ConfigError(f"sigma estimate not symmetric (method={self.method})")
        self.sigma = 0.5 * (self.sigma + self.sigma.T)
        if scale > 0 and float(np.min(np.linalg.eigvalsh(self.sigma))) < -tol:
            raise ConfigError(f"sigma estimate not PSD (method={self.method})")


def green_kubo(
    spec: MapSpec,
    v: Observable,
    n_max: int,
    orbit_len: int,
    seed: int = 0,
    batches: int = 100,
    burnin: int = 1000,
) -> CoefficientEstimate:
    """Autocorrelation-sum estimators along one long mu-sampled orbit.

    Sigma = C_0 + sum_{k>=1} (C_k + C_k^T), E = sum_{k>=1} C_k, truncated
    hard at n_max; standard errors from ``batches`` batch means.
    """
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    if n_max >= orbit_len / 100:
        raise ConfigError(
            f"n_max={n_max} too close to orbit_len={orbit_len}; need orbit_len >= 100 n_max"
        )
    lo, hi = spec.domain
    x0 = to_state(spec, float(initial_uniforms(seed, 1, "init", lo, hi)[0]))
    vals = _k.orbit_obs(
        spec.map_id, spec.map_param, v.oid, v.param, v.center_array, x0, burnin, orbit_len, v.dim
    )
    C = _k.gk_batch(vals, n_max, batches)  # (batches, n_max+1, d, d)
    tails = C[:, 1:, :, :]
    sigma_b = C[:, 0, :, :] + tails.sum(axis=1) + np.swapaxes(tails.sum(axis=1), 1, 2)
    e_b = tails.sum(axis=1)
    sigma = sigma_b.mean(axis=0)
    e = e_b.mean(axis=0)
    return CoefficientEstimate(
        sigma=sigma,
        e=e,
        method="green_kubo",
        sigma_stderr=sigma_b.std(axis=0, ddof=1) / np.sqrt(batches),
        e_stderr=e_b.std(axis=0, ddof=1) / np.sqrt(batches),
        meta={"n_max": n_max, "orbit_len": orbit_len, "seed": seed, "batches": batches},
    )


def direct_coeffs(
    spec: MapSpec,
    v: Observable,
    n: int,
    M: int,
    seed: int = 0,
    initial: str = "mu",
    burnin: int = 1000,
) -> CoefficientEstimate:
    """(1/n) ensemble means of S_n (x) S_n and SS_n over M orbits."""
    if M < 1000:
        raise ConfigError(f"M={M} too small for the direct estimator (need >= 1000)")
    S, SS, _, _, _ = ensemble_sums(spec, v, np.array([n]), M, initial, seed, burnin)
    A = np.einsum("mp,mq->mpq", S[:, 0, :], S[:, 0, :]) / n
    B = SS[:, 0, :, :] / n
    return CoefficientEstimate(
        sigma=A.mean(axis=0),
        e=B.mean(axis=0),
        method="direct",
        sigma_stderr=A.std(axis=0, ddof=1) / np.sqrt(M),
        e_stderr=B.std(axis=0, ddof=1) / np.sqrt(M),
        meta={"n": n, "M": M, "seed": seed, "initial": initial},
    )


@functools.lru_cache(maxsize=8)
def _tower_decomposition(spec: MapSpec, v: Observable, bins: int, tau_cap, K: int):
    scheme = _tower.build_induced(spec, tau_cap)
    model = _tower.ulam_P(scheme, bins)
    phi = _tower.induced_phi(model, v)
    decomp = _tower.martingale_decompose(model, phi, K=K)
    return model, decomp


def martingale_coeffs(
    spec: MapSpec,
    v: Observable,
    bins: int = 4096,
    tau_cap: int | None = None,
    K: int = 1000,
) -> CoefficientEstimate:
    """Sigma and E through the martingale decomposition on the induced map.

    The quoted uncertainty is a discretisation proxy: the entrywise change
    when the bin count is halved.
    """
    model, decomp = _tower_decomposition(spec, v, bins, tau_cap, K)
    sigma = _tower.sigma_from_m(model, decomp)
    e = _tower.e_from_chi(model, decomp, v)
    model2, decomp2 = _tower_decomposition(spec, v, max(bins // 2, 16), tau_cap, K)
    sigma2 = _tower.sigma_from_m(model2, decomp2)
    e2 = _tower.e_from_chi(model2, decomp2, v)
    floor = 1e-9 * max(float(np.max(np.abs(sigma))), 1e-6)
    return CoefficientEstimate(
        sigma=sigma,
        e=e,
        method="martingale",
        sigma_stderr=np.maximum(np.abs(sigma - sigma2), floor),
        e_stderr=np.maximum(np.abs(e - e2), floor),
        meta={
            "bins": bins,
            "tau_cap": model.scheme.tau_cap,
            "K": decomp.K,
            "residual_kernel": decomp.residual_kernel,
            "residual_series": decomp.residual_series,
        },
    )


def consensus(estimates: list[CoefficientEstimate]) -> CoefficientEstimate:
    """Inverse-variance weighted combination of coefficient estimates.

    The combined stderr is widened to half the spread across methods when
    the methods disagree beyond their nominal errors.
    """
    if not estimates:
        raise ConfigError("no estimates to combine")

    def combine(values, errors):
        values = np.stack(values)
        errors = np.stack(errors)
        scale = max(float(np.max(np.abs(values))), 1e-12)
        w = 1.0 / (errors**2 + (1e-6 * scale) ** 2)
        mean = (w * values).sum(axis=0) / w.sum(axis=0)
        se = np.sqrt(1.0 / w.sum(axis=0))
        spread = values.max(axis=0) - values.min(axis=0)
        return mean, np.maximum(se, 0.5 * spread / max(len(estimates) - 1, 1))

    sigma, sigma_se = combine([e.sigma for e in estimates], [e.sigma_stderr for e in estimates])
    e_val, e_se = combine([e.e for e in estimates], [e.e_stderr for e in estimates])
    return CoefficientEstimate(
        sigma=sigma,
        e=e_val,
        method="consensus",
        sigma_stderr=sigma_se,
        e_stderr=e_se,
        meta={"methods": [e.method for e in estimates]},
    )


def time_average(
    spec: MapSpec,
    v: Observable,
    n: int,
    seed: int = 0,
    burnin: int = 1000,
    batches: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-orbit time average of the centred observable with batch-mean
    standard errors."""
    lo, hi = spec.domain
    x0 = to_state(spec, float(initial_uniforms(seed, 1, "init", lo, hi)[0]))
    vals = _k.orbit_obs(
        spec.map_id, spec.map_param, v.oid, v.param, v.center_array, x0, burnin, n, v.dim
    )
    usable = (n // batches) * batches
    bm = vals[:usable].reshape(batches, -1, v.dim).mean(axis=1)
    return bm.mean(axis=0), bm.std(axis=0, ddof=1) / np.sqrt(batches)
