"""Path ensembles (W_n, WW_n) and distributional checks against the limit.

W_n(t) collects n^{-1/2} S_{[nt]} and WW_n(t) = n^{-1} SS_{[nt]} along
independent orbits.  The limit has Brownian marginals with covariance
Sigma and mean Levy area E t, and that is exactly what is tested:
marginal normality (KS), covariance, and the linear drift of the mean
area.  Path-space topology is out of scope by design; no finite statistic
is sensitive to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats as sps

from .dynamics import MapSpec, Observable
from .errors import ConfigError
from .stats import ensemble_sums

DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass
class TestEntry:
    name: str
    kind: str  # "ks", "z", "ks2", "skip", "info"
    statistic: float
    p_value: float | None
    passed: bool
    note: str = ""


@dataclass
class TestReport:
    """Bundle of statistical test outcomes with an overall verdict."""

    entries: list[TestEntry]
    significance: float
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries if e.kind != "info")

    def to_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "significance": self.significance,
            "meta": {k: _json_safe(v) for k, v in self.meta.items()},
            "tests": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "statistic": None if e.statistic is None else float(e.statistic),
                    "p_value": None if e.p_value is None else float(e.p_value),
                    "passed": bool(e.passed),
                    "note": e.note,
                }
                for e in self.entries
            ],
        }


def _json_safe(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (tuple, list)):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    return v


@dataclass
class PathEnsemble:
    """M paths of (W, WW) on a fixed time grid, with provenance.

    Q stores the raw diagonal quadratic sum, so the per-path discrete
    Levy identity reads WW + WW^T = W (x) W - Q/n.  Fast-slow ensembles
    reuse the container with WW and Q absent.
    """

    grid: np.ndarray
    W: np.ndarray  # (M, G, d)
    WW: np.ndarray | None  # (M, G, d, d)
    Q: np.ndarray | None  # (M, G, d, d), unscaled
    provenance: dict

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[2]

    def levy_residual(self) -> float:
        """Max relative residual of the per-path Levy identity."""
        if self.WW is None or self.Q is None:
            raise ConfigError("ensemble stores no iterated part")
        n = self.provenance["n"]
        lhs = self.WW + np.swapaxes(self.WW, -1, -2)
        rhs = np.einsum("mgp,mgq->mgpq", self.W, self.W) - self.Q / n
        scale = max(float(np.max(np.abs(rhs))), 1.0)
        return float(np.max(np.abs(lhs - rhs))) / scale

    def compatible_with(self, other: "PathEnsemble", keys=("map", "gamma", "observable", "n")) -> None:
        if self.grid.shape != other.grid.shape or np.any(self.grid != other.grid):
            raise ConfigError("ensembles disagree on the time grid")
        for k in keys:
            if self.provenance.get(k) != other.provenance.get(k):
                raise ConfigError(
                    f"ensemble provenance mismatch on {k!r}: "
                    f"{self.provenance.get(k)} vs {other.provenance.get(k)}"
                )


def _validate_grid(grid) -> np.ndarray:
    g = np.asarray(sorted(float(t) for t in grid))
    if g[0] != 0.0 or g[-1] != 1.0 or len(g) < 2 or np.any(np.diff(g) <= 0):
        raise ConfigError("grid must be strictly increasing from 0 to 1")
    return g


def sample_paths(
    spec: MapSpec,
    v: Observable,
    n: int,
    M: int,
    grid=DEFAULT_GRID,
    initial: str = "mu",
    seed: int = 0,
    burnin: int = 1000,
) -> PathEnsemble:
    """Ensemble of (W_n, WW_n) snapshots; one streamed orbit per path."""
    if n < 100:
        raise ConfigError(f"n={n} too small for path ensembles (need >= 100)")
    g = _validate_grid(grid)
    snaps = np.floor(n * g).astype(np.int64)
    S, SS, Q, _, _ = ensemble_sums(spec, v, snaps, M, initial, seed, burnin)
    rn = np.sqrt(float(n))
    return PathEnsemble(
        grid=g,
        W=S / rn,
        WW=SS / n,
        Q=Q,
        provenance={
            "kind": "map_paths",
            "map": spec.kind,
            "gamma": spec.gamma,
            "a_quad": spec.a_quad,
            "p": spec.p,
            "observable": v.name,
            "n": n,
            "M": M,
            "seed": seed,
            "initial": initial,
            "burnin": burnin,
        },
    )


def marginal_normality(
    ensemble: PathEnsemble, sigma: np.ndarray, significance: float = 0.01
) -> TestReport:
    """KS tests of the W(t) marginals against centred normals.

    Component i at time t is compared with N(0, t Sigma_ii); components
    with vanishing variance are skipped with a note.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if ensemble.M < 1000:
        raise ConfigError("need at least 1000 paths for marginal tests")
    if float(np.min(np.linalg.eigvalsh(0.5 * (sigma + sigma.T)))) < -1e-8 * max(
        float(np.max(np.abs(sigma))), 1e-300
    ):
        raise ConfigError("target covariance is not PSD")
    entries = []
    for i in range(ensemble.dim):
        sd = float(np.sqrt(max(sigma[i, i], 0.0)))
        if sd == 0.0:
            entries.append(
                TestEntry(
                    name=f"normal_W1_comp{i}",
                    kind="skip",
                    statistic=0.0,
                    p_value=None,
                    passed=True,
                    note="component skipped: zero target variance",
                )
            )
            continue
        for g_idx, t in enumerate(ensemble.grid):
            if t <= 0.0:
                continue
            res = sps.kstest(ensemble.W[:, g_idx, i], "norm", args=(0.0, sd * np.sqrt(t)))
            entries.append(
                TestEntry(
                    name=f"normal_W(t={t:g})_comp{i}",
                    kind="ks",
                    statistic=float(res.statistic),
                    p_value=float(res.pvalue),
                    passed=bool(res.pvalue > significance),
                )
            )
    return TestReport(
        entries=entries,
        significance=significance,
        meta={"target_sigma": sigma, "provenance": ensemble.provenance},
    )


def drift_check(ensemble: PathEnsemble, e: np.ndarray, z_max: float = 3.0) -> TestReport:
    """Componentwise z-test of mean WW(t) against t E at every grid time."""
    if ensemble.WW is None:
        raise ConfigError("ensemble stores no iterated part")
    if ensemble.M < 1000:
        raise ConfigError("need at least 1000 paths for drift tests")
    e = np.atleast_2d(np.asarray(e, dtype=float))
    d = ensemble.dim
    entries = []
    M = ensemble.M
    for g_idx, t in enumerate(ensemble.grid):
        if t <= 0.0:
            continue
        mean = ensemble.WW[:, g_idx].mean(axis=0)
        se = ensemble.WW[:, g_idx].std(axis=0, ddof=1) / np.sqrt(M)
        for i in range(d):
            for j in range(d):
                diff = mean[i, j] - t * e[i, j]
                if se[i, j] == 0.0:
                    z = 0.0 if diff == 0.0 else np.inf
                else:
                    z = diff / se[i, j]
                entries.append(
                    TestEntry(
                        name=f"drift_WW(t={t:g})_{i}{j}",
                        kind="z",
                        statistic=float(z),
                        p_value=float(2.0 * sps.norm.sf(abs(z))),
                        passed=bool(abs(z) <= z_max),
                        note=f"mean={mean[i, j]:.6g} target={t * e[i, j]:.6g} se={se[i, j]:.3g}",
                    )
                )
    return TestReport(entries=entries, significance=0.01, meta={"target_e": e, "z_max": z_max})


def initial_measure_comparison(
    ens_mu: PathEnsemble,
    ens_leb: PathEnsemble,
    significance: float = 0.01,
    z_max: float = 3.0,
) -> TestReport:
    """Two-sample KS on W(1) components and mean/cov comparison of WW(1)."""
    ens_mu.compatible_with(ens_leb)
    d = ens_mu.dim
    entries = []
    gi = len(ens_mu.grid) - 1
    for i in range(d):
        res = sps.ks_2samp(ens_mu.W[:, gi, i], ens_leb.W[:, gi, i])
        entries.append(
            TestEntry(
                name=f"ks2_W1_comp{i}",
                kind="ks2",
                statistic=float(res.statistic),
                p_value=float(res.pvalue),
                passed=bool(res.pvalue > significance),
            )
        )
    # covariance of W(1)
    for i in range(d):
        for j in range(i, d):
            a = ens_mu.W[:, gi, i] * ens_mu.W[:, gi, j]
            b = ens_leb.W[:, gi, i] * ens_leb.W[:, gi, j]
            se = np.hypot(a.std(ddof=1) / np.sqrt(len(a)), b.std(ddof=1) / np.sqrt(len(b)))
            z = (a.mean() - b.mean()) / se if se > 0 else 0.0
            entries.append(
                TestEntry(
                    name=f"cov_W1_{i}{j}",
                    kind="z",
                    statistic=float(z),
                    p_value=float(2.0 * sps.norm.sf(abs(z))),
                    passed=bool(abs(z) <= z_max),
                )
            )
    if ens_mu.WW is not None and ens_leb.WW is not None:
        for i in range(d):
            for j in range(d):
                a = ens_mu.WW[:, gi, i, j]
                b = ens_leb.WW[:, gi, i, j]
                se = np.hypot(a.std(ddof=1) / np.sqrt(len(a)), b.std(ddof=1) / np.sqrt(len(b)))
                z = (a.mean() - b.mean()) / se if se > 0 else 0.0
                entries.append(
                    TestEntry(
                        name=f"mean_WW1_{i}{j}",
                        kind="z",
                        statistic=float(z),
                        p_value=float(2.0 * sps.norm.sf(abs(z))),
                        passed=bool(abs(z) <= z_max),
                    )
                )
    return TestReport(
        entries=entries,
        significance=significance,
        meta={"mu": ens_mu.provenance, "lebesgue": ens_leb.provenance},
    )
