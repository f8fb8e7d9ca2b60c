"""Fast-slow systems driven by the interval maps, and an SDE comparator.

The slow recursion is x' = x + a(x)/n + b(x, y)/sqrt(n) with y iterated by
the fast map.  Drift and noise come from a small named registry (no
runtime expression parsing); the noise is centred in y for each x on a
64-point grid, with the offset interpolated linearly.  Since observables
arrive already centred by a deterministic invariant-measure integrator,
the measured offsets are zero to integrator precision; they are kept and
reported rather than assumed away.

The additive case a = 0, b = v(y) shares its code path with the map-path
ensembles, so those slow paths coincide bit for bit with xi + W_n.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats as sps

from . import _kernels as _k
from .dynamics import MapSpec, Observable, to_state
from .errors import ConfigError
from .observables import invariant_average
from .rng import initial_uniforms, stream
from .wip import DEFAULT_GRID, PathEnsemble, TestEntry, TestReport, _validate_grid, sample_paths

_DRIFTS = {"zero": 0, "neg_x": 1}
_NOISES = {"zero": 0, "obs": 1, "prod": 2}


@dataclass
class FastSlowSpec:
    """Slow-equation coefficients over a fast map, with centring data."""

    drift: str
    noise: str
    obs: Observable
    xi: float
    grid: np.ndarray
    offsets: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 1


def make_fastslow(
    drift: str,
    noise: str,
    obs: Observable,
    spec: MapSpec,
    xi: float = 0.0,
    grid_points: int = 64,
    span: tuple[float, float] = (-2.0, 2.0),
) -> FastSlowSpec:
    """Assemble a fast-slow spec; centring offsets are deterministic.

    For the registry noises b(x, y) = f(x) v(y), the y-mean at each grid x
    is f(x) * int v d mu, evaluated with the same invariant-measure
    integrator that centred v (hence ~0, but recorded).
    """
    if drift not in _DRIFTS:
        raise ConfigError(f"unknown drift preset {drift!r}; choose from {sorted(_DRIFTS)}")
    if noise not in _NOISES:
        raise ConfigError(f"unknown noise preset {noise!r}; choose from {sorted(_NOISES)}")
    if obs.dim != 1:
        raise ConfigError("fast-slow registry noises are scalar; need a 1-d observable")
    grid = np.linspace(span[0], span[1], grid_points)
    residual = float(invariant_average(spec, lambda y: obs(y)[:, 0])[0])
    if noise == "zero":
        offsets = np.zeros(grid_points)
    elif noise == "obs":
        offsets = np.full(grid_points, residual)
    else:  # prod: b(x, y) = x v(y)
        offsets = grid * residual
    return FastSlowSpec(
        drift=drift,
        noise=noise,
        obs=obs,
        xi=float(xi),
        grid=grid,
        offsets=offsets,
        meta={"centering_residual": residual, "map": spec.kind, "gamma": spec.gamma},
    )


def noise_values(fs: FastSlowSpec, x: float, y: np.ndarray) -> np.ndarray:
    """Centred noise b(x, y) on an array of fast states (for validation)."""
    v = fs.obs(y)[:, 0]
    off = float(np.interp(x, fs.grid, fs.offsets))
    if fs.noise == "zero":
        return np.zeros_like(v)
    if fs.noise == "obs":
        return v - off
    return x * v - off


def simulate_fastslow(
    fs: FastSlowSpec,
    spec: MapSpec,
    n: int,
    M: int,
    initial: str = "mu",
    seed: int = 0,
    grid=DEFAULT_GRID,
    burnin: int = 1000,
) -> PathEnsemble:
    """M slow paths x_hat_n on the grid, each driven by its own fast orbit.

    Paths that overflow |x| > 1e12 are excluded; the count is reported in
    the provenance.
    """
    if n < 100:
        raise ConfigError(f"n={n} too small for fast-slow paths (need >= 100)")
    g = _validate_grid(grid)
    if fs.drift == "zero" and fs.noise == "obs":
        # additive case: x_hat(t) = xi + W_n(t), same compiled path as wip
        ens = sample_paths(spec, fs.obs, n, M, grid=g, initial=initial, seed=seed, burnin=burnin)
        X = fs.xi + ens.W[:, :, 0]
        prov = dict(ens.provenance)
        prov.update({"kind": "fastslow", "drift": fs.drift, "noise": fs.noise,
                     "xi": fs.xi, "diverged": 0, "shared_path": True})
        return PathEnsemble(grid=g, W=X[:, :, None], WW=None, Q=None, provenance=prov)
    if initial not in ("mu", "lebesgue"):
        raise ConfigError(f"initial measure must be 'mu' or 'lebesgue', got {initial!r}")
    lo, hi = spec.domain
    y0 = np.asarray(to_state(spec, initial_uniforms(seed, M, "init", lo, hi)))
    if initial == "mu" and burnin > 0:
        y0 = _k.iterate_ensemble(spec.map_id, spec.map_param, y0, burnin)
    snaps = np.floor(n * g).astype(np.int64)
    X, flags = _k.fastslow_paths(
        spec.map_id,
        spec.map_param,
        _DRIFTS[fs.drift],
        _NOISES[fs.noise],
        fs.obs.oid,
        fs.obs.param,
        fs.obs.center_array[0],
        fs.grid[0],
        fs.grid[-1],
        fs.offsets,
        fs.xi,
        y0,
        n,
        snaps,
    )
    keep = flags == 0
    diverged = int(M - keep.sum())
    if diverged == M:
        raise ConfigError("every fast-slow path diverged; check the coefficients")
    return PathEnsemble(
        grid=g,
        W=X[keep][:, :, None],
        WW=None,
        Q=None,
        provenance={
            "kind": "fastslow",
            "map": spec.kind,
            "gamma": spec.gamma,
            "observable": fs.obs.name,
            "drift": fs.drift,
            "noise": fs.noise,
            "xi": fs.xi,
            "n": n,
            "M": M,
            "seed": seed,
            "initial": initial,
            "diverged": diverged,
            "shared_path": False,
        },
    )


# ---------------------------------------------------------------------------
# Reference SDE integrator
# ---------------------------------------------------------------------------


@dataclass
class SDESpec:
    """Limiting SDE dX = a(X) dt + sigma dW in the Ito convention.

    The diffusion factor is constant; sigma sigma^T is the target
    covariance.  ``note`` records where any drift correction came from
    (user-supplied; this package derives none).
    """

    drift: str
    sigma: np.ndarray
    xi: np.ndarray
    h: float
    note: str = ""

    def __post_init__(self):
        if self.drift not in _DRIFTS:
            raise ConfigError(f"unknown SDE drift preset {self.drift!r}")
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if self.sigma.shape[0] != self.xi.shape[0]:
            raise ConfigError("sigma rows must match the state dimension")
        cov = self.sigma @ self.sigma.T
        if float(np.min(np.linalg.eigvalsh(cov))) < -1e-12 * max(float(np.max(np.abs(cov))), 1e-300):
            raise ConfigError("sigma sigma^T is not PSD")


def _drift_fn(name: str):
    if name == "zero":
        return lambda x: np.zeros_like(x)
    return lambda x: -x


def euler_maruyama(
    sde: SDESpec, t1: float, M: int, seed: int = 0, grid=DEFAULT_GRID
) -> PathEnsemble:
    """Euler-Maruyama paths with per-path Gaussian increment streams."""
    if sde.h > 1e-2:
        raise ConfigError(f"step h={sde.h} too coarse (need h <= 1e-2)")
    g = _validate_grid(grid)
    steps = int(round(t1 / sde.h))
    if steps < 1:
        raise ConfigError("t1 shorter than one step")
    h = t1 / steps
    d = sde.xi.shape[0]
    e = sde.sigma.shape[1]
    Z = np.empty((M, steps, e))
    for m in range(M):
        Z[m] = stream(seed, m, "em").standard_normal((steps, e))
    a = _drift_fn(sde.drift)
    X = np.tile(sde.xi, (M, 1))
    alive = np.ones(M, dtype=bool)
    snaps = np.floor(steps * g).astype(np.int64)
    out = np.zeros((M, len(g), d))
    out[:, snaps == 0, :] = X[:, None, :]
    sq = np.sqrt(h)
    sigT = sde.sigma.T
    for k in range(1, steps + 1):
        X[alive] = X[alive] + h * a(X[alive]) + sq * (Z[alive, k - 1, :] @ sigT)
        newly = np.abs(X).max(axis=1) > 1e12
        alive &= ~newly
        hit = snaps == k
        if hit.any():
            out[:, hit, :] = X[:, None, :]
    keep = alive
    diverged = int(M - keep.sum())
    if diverged == M:
        raise ConfigError("every SDE path diverged; check the coefficients")
    return PathEnsemble(
        grid=g,
        W=out[keep],
        WW=None,
        Q=None,
        provenance={
            "kind": "sde_paths",
            "drift": sde.drift,
            "sigma": sde.sigma.tolist(),
            "xi": sde.xi.tolist(),
            "h": h,
            "t1": t1,
            "M": M,
            "seed": seed,
            "diverged": diverged,
            "note": sde.note,
        },
    )


def homogenization_compare(
    fast_ens: PathEnsemble,
    sde_ens: PathEnsemble,
    significance: float = 0.01,
    z_max: float = 3.0,
) -> TestReport:
    """Two-sample KS on the endpoint plus mean/variance checks on the grid."""
    if fast_ens.dim != sde_ens.dim:
        raise ConfigError(
            f"dimension mismatch: fast ensemble d={fast_ens.dim}, SDE d={sde_ens.dim}"
        )
    if fast_ens.grid.shape != sde_ens.grid.shape or np.any(fast_ens.grid != sde_ens.grid):
        raise ConfigError("ensembles disagree on the time grid")
    d = fast_ens.dim
    entries = []
    gi = len(fast_ens.grid) - 1
    for i in range(d):
        res = sps.ks_2samp(fast_ens.W[:, gi, i], sde_ens.W[:, gi, i])
        entries.append(
            TestEntry(
                name=f"ks2_X1_comp{i}",
                kind="ks2",
                statistic=float(res.statistic),
                p_value=float(res.pvalue),
                passed=bool(res.pvalue > significance),
            )
        )
    for g_idx, t in enumerate(fast_ens.grid):
        if t <= 0.0:
            continue
        for i in range(d):
            a = fast_ens.W[:, g_idx, i]
            b = sde_ens.W[:, g_idx, i]
            se = np.hypot(a.std(ddof=1) / np.sqrt(len(a)), b.std(ddof=1) / np.sqrt(len(b)))
            z = (a.mean() - b.mean()) / se if se > 0 else 0.0
            entries.append(
                TestEntry(
                    name=f"mean_X(t={t:g})_comp{i}",
                    kind="z",
                    statistic=float(z),
                    p_value=float(2.0 * sps.norm.sf(abs(z))),
                    passed=bool(abs(z) <= z_max),
                )
            )
            va = (a - a.mean()) ** 2
            vb = (b - b.mean()) ** 2
            se = np.hypot(va.std(ddof=1) / np.sqrt(len(va)), vb.std(ddof=1) / np.sqrt(len(vb)))
            z = (va.mean() - vb.mean()) / se if se > 0 else 0.0
            entries.append(
                TestEntry(
                    name=f"var_X(t={t:g})_comp{i}",
                    kind="z",
                    statistic=float(z),
                    p_value=float(2.0 * sps.norm.sf(abs(z))),
                    passed=bool(abs(z) <= z_max),
                )
            )
    return TestReport(
        entries=entries,
        significance=significance,
        meta={"fast": fast_ens.provenance, "sde": sde_ens.provenance},
    )
