"""Interval map families, observables, and invariant-measure utilities.

Three map families are built in:

* ``lsv`` -- the intermittent interval map with a neutral fixed point at 0,
  left branch x (1 + (2x)^gamma) on [0, 1/2] (the branch point 1/2 is
  assigned to the left branch, so T(1/2) = 1) and right branch 2x - 1.
  The admissible parameter range is 0 < gamma < 1/2 with moment order
  2 <= p < 1/gamma.
* ``doubling`` -- 2x mod 1, the uniformly expanding reference case whose
  invariant measure is Lebesgue.
* ``quadratic`` -- 1 - a x^2 on [-1, 1].  The statistical machinery ships
  the a = 2 member, whose invariant density has the closed arcsine form.

All orbit iteration funnels through the compiled kernels in ``_kernels``;
the scalar Python entry points here use the same branch formulas.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as _k
from .errors import ConfigError, ConvergenceError, DomainError

_DOMAINS = {"lsv": (0.0, 1.0), "doubling": (0.0, 1.0), "quadratic": (-1.0, 1.0)}
_MAP_IDS = {"lsv": 0, "doubling": 1, "quadratic": 2}


@dataclass(frozen=True)
class MapSpec:
    """A nonuniformly expanding interval map with its regularity metadata.

    gamma is the intermittency strength (lsv only), p the moment order of
    the return time, eta the Holder exponent of the observable class.
    c1 and beta are the distortion/expansion constants; they are carried
    as metadata and never used computationally.
    """

    kind: str
    gamma: float = 0.25
    a_quad: float = 2.0
    p: float = 2.0
    eta: float = 1.0
    c1: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        if self.kind not in _MAP_IDS:
            raise ConfigError(f"unknown map kind {self.kind!r}; choose from {sorted(_MAP_IDS)}")
        if not self.p >= 2.0:
            raise ConfigError(f"moment order p={self.p} must be >= 2")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"Holder exponent eta={self.eta} must lie in (0, 1]")
        if self.kind == "lsv":
            if not 0.0 < self.gamma < 0.5:
                raise ConfigError(
                    f"lsv requires 0 < gamma < 1/2, got gamma={self.gamma}"
                    " (gamma >= 1/2 is the superdiffusive regime and is rejected)"
                )
            if not self.p < 1.0 / self.gamma:
                raise ConfigError(
                    f"lsv requires p < 1/gamma: p={self.p}, 1/gamma={1.0 / self.gamma:.4f}"
                )
        if self.kind == "quadratic" and not 0.0 <= self.a_quad <= 2.0:
            raise ConfigError(f"quadratic parameter a={self.a_quad} must lie in [0, 2]")

    @property
    def domain(self) -> tuple[float, float]:
        return _DOMAINS[self.kind]

    @property
    def map_id(self) -> int:
        return _MAP_IDS[self.kind]

    @property
    def map_param(self) -> float:
        if self.kind == "lsv":
            return self.gamma
        if self.kind == "quadratic":
            return self.a_quad
        return 0.0


def lsv_left_branch(gamma: float, x: float) -> float:
    """Raw left-branch formula x (1 + (2x)^gamma), no parameter validation."""
    return x * (1.0 + (2.0 * x) ** gamma)


def to_state(spec: MapSpec, x):
    """Interval point(s) -> kernel state(s).

    The compiled kernels iterate the doubling map exactly on the integer
    lattice z/p (see `_kernels`); other maps use the point itself.  The
    lattice embedding avoids the float64 mantissa depletion of 2x mod 1,
    at the price of snapping starts to the lattice (spacing ~ 9e-16).
    Zero is clamped to 1 to avoid the measure-zero absorbing state.
    """
    if spec.kind != "doubling":
        return np.asarray(x, dtype=float) if np.ndim(x) else float(x)
    z = np.floor(np.asarray(x, dtype=float) * _k.DOUBLING_MOD)
    z = np.clip(z, 1.0, _k.DOUBLING_MOD - 1.0)
    return z if np.ndim(x) else float(z)


def to_point(spec: MapSpec, z):
    """Kernel state(s) -> interval point(s)."""
    if spec.kind != "doubling":
        return z
    return np.asarray(z, dtype=float) * _k.DOUBLING_INV if np.ndim(z) else float(z) * _k.DOUBLING_INV


def apply_map(spec: MapSpec, x: float) -> float:
    """One step of T; raises DomainError off the domain."""
    lo, hi = spec.domain
    if not lo <= x <= hi:
        raise DomainError(f"x={x} outside domain [{lo}, {hi}] of {spec.kind}")
    if spec.kind == "lsv":
        if x <= 0.5:
            return lsv_left_branch(spec.gamma, x)
        return 2.0 * x - 1.0
    if spec.kind == "doubling":
        y = 2.0 * x
        return y - 1.0 if y >= 1.0 else y
    return 1.0 - spec.a_quad * x * x


def orbit_fold(spec: MapSpec, x0: float, n: int, fold: Callable, state):
    """Feed x0, Tx0, ..., T^{n-1}x0 to ``fold`` in order; O(1) memory.

    ``fold(state, x) -> state`` is an arbitrary accumulator.
    """
    if n < 0:
        raise ConfigError(f"orbit length n={n} must be >= 0")
    x = float(x0)
    for _ in range(n):
        state = fold(state, x)
        x = apply_map(spec, x)
    return state


def orbit(spec: MapSpec, x0: float, n: int) -> np.ndarray:
    """The first n orbit points as an array (compiled fast path).

    The doubling map iterates the branch formulas directly here (its
    short-orbit arithmetic is exact); long-orbit statistics should go
    through the ensemble kernels, which use the lattice embedding.
    """
    if n < 0:
        raise ConfigError(f"orbit length n={n} must be >= 0")
    lo, hi = spec.domain
    if not lo <= x0 <= hi:
        raise DomainError(f"x0={x0} outside domain [{lo}, {hi}] of {spec.kind}")
    if n == 0:
        return np.empty(0)
    if spec.kind == "doubling":
        out = np.empty(n)
        x = float(x0)
        for k in range(n):
            out[k] = x
            x = apply_map(spec, x)
        return out
    return _k.orbit_points(spec.map_id, spec.map_param, float(x0), n)


def sample_invariant(spec: MapSpec, count: int, burnin: int, seed: int) -> np.ndarray:
    """Approximate draws from the invariant measure via burn-in.

    Each of the ``count`` points starts from its own uniform draw on the
    domain and is advanced ``burnin`` steps.
    """
    if count < 1:
        raise ConfigError(f"count={count} must be >= 1")
    if burnin < 0:
        raise ConfigError(f"burnin={burnin} must be >= 0")
    lo, hi = spec.domain
    from .rng import initial_uniforms

    x0 = initial_uniforms(seed, count, "init", lo, hi)
    if burnin == 0:
        return x0
    out = _k.iterate_ensemble(spec.map_id, spec.map_param, to_state(spec, x0), burnin)
    return np.asarray(to_point(spec, out))


# ---------------------------------------------------------------------------
# Ulam discretisation of the transfer operator on the full domain
# ---------------------------------------------------------------------------


def lsv_left_inverse(gamma: float, y) -> np.ndarray:
    """Inverse of the left branch on [0, 1]: solve x (1 + (2x)^gamma) = y.

    Newton iteration; the branch is smooth, increasing and convex, so a
    handful of steps reaches machine precision for the whole array.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = y / (1.0 + (2.0 * y) ** gamma)
    for _ in range(60):
        t = (2.0 * x) ** gamma
        f = x * (1.0 + t) - y
        fp = 1.0 + (1.0 + gamma) * t
        dx = f / fp
        x = np.maximum(x - dx, 0.0)
        if np.max(np.abs(dx)) < 1e-16:
            break
    return np.clip(x, 0.0, 0.5)


def _branch_inverses(spec: MapSpec):
    """Per-branch (lo, hi, inverse) triples; inverses map [m_lo, m_hi] -> branch."""
    if spec.kind == "lsv":
        g = spec.gamma
        return [
            (0.0, 0.5, lambda y: lsv_left_inverse(g, y)),
            (0.5, 1.0, lambda y: 0.5 * (np.asarray(y, float) + 1.0)),
        ]
    if spec.kind == "doubling":
        return [
            (0.0, 0.5, lambda y: 0.5 * np.asarray(y, float)),
            (0.5, 1.0, lambda y: 0.5 * (np.asarray(y, float) + 1.0)),
        ]
    a = spec.a_quad
    if a == 0.0:
        raise ConfigError("quadratic map with a=0 is not expanding; no Ulam operator")

    def inv_pos(y):
        return np.sqrt(np.maximum((1.0 - np.asarray(y, float)) / a, 0.0))

    return [
        (-1.0, 0.0, lambda y: -inv_pos(y)),
        (0.0, 1.0, inv_pos),
    ]


def _scatter_intervals(starts, ends, lo, w, nbins, rows, cols, vals, col_index):
    """Distribute interval Lebesgue mass onto uniform bins (COO triplets)."""
    for j in range(starts.shape[0]):
        a = starts[j]
        b = ends[j]
        if b < a:
            a, b = b, a
        if b - a <= 0.0:
            continue
        i0 = min(max(int((a - lo) / w), 0), nbins - 1)
        i1 = min(max(int((b - lo) / w), 0), nbins - 1)
        if i0 == i1:
            rows.append(i0)
            cols.append(col_index[j])
            vals.append(b - a)
            continue
        rows.append(i0)
        cols.append(col_index[j])
        vals.append(lo + (i0 + 1) * w - a)
        for i in range(i0 + 1, i1):
            rows.append(i)
            cols.append(col_index[j])
            vals.append(w)
        rows.append(i1)
        cols.append(col_index[j])
        vals.append(b - (lo + i1 * w))


def ulam_matrix(spec: MapSpec, bins: int) -> sp.csr_matrix:
    """Row-stochastic Ulam matrix K[i, j] = Leb(bin_i ∩ T^{-1} bin_j) / w.

    Assembled from exact branch-inverse images of the bin edges, so row
    sums are 1 to machine precision.
    """
    if bins < 2:
        raise ConfigError(f"bins={bins} must be >= 2")
    lo, hi = spec.domain
    w = (hi - lo) / bins
    edges = lo + w * np.arange(bins + 1)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    cols_idx = np.arange(bins)
    for b_lo, b_hi, inv in _branch_inverses(spec):
        pre = np.clip(inv(edges), b_lo, b_hi)
        _scatter_intervals(pre[:-1], pre[1:], lo, w, bins, rows, cols, vals, cols_idx)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(bins, bins)).tocsr()
    K = K.multiply(1.0 / w).tocsr()
    # renormalise rows (guards the few bins whose preimage mass is split
    # across a branch endpoint at floating precision)
    s = np.asarray(K.sum(axis=1)).ravel()
    s[s == 0.0] = 1.0
    return sp.diags(1.0 / s) @ K


def stationary_distribution(
    K: sp.csr_matrix,
    tol: float = 1e-12,
    max_iter: int = 200_000,
    method: str = "auto",
) -> np.ndarray:
    """Probability vector with pi K = pi, residual below tol in l1.

    ``auto`` first tries a shift-invert eigensolve (fast for the nearly
    degenerate spectra of intermittent chains) and polishes with power
    iteration; ``power`` iterates from uniform.  Raises ConvergenceError
    carrying the final residual if the cap is hit.
    """
    n = K.shape[0]
    KT = K.T.tocsc()
    pi = np.full(n, 1.0 / n)
    if method == "auto":
        try:
            if n <= 512:
                vals, vecs = np.linalg.eig(KT.toarray())
                i = int(np.argmin(np.abs(vals - 1.0)))
                v = np.real(vecs[:, i])
            else:
                _, vecs = spla.eigs(KT, k=1, sigma=1.0 + 1e-9, which="LM")
                v = np.real(vecs[:, 0])
            if v.sum() < 0:
                v = -v
            v = np.clip(v, 0.0, None)
            if v.sum() > 0:
                pi = v / v.sum()
        except Exception:
            pass  # fall through to power iteration
    residual = float(np.abs(pi @ K - pi).sum())
    it = 0
    while residual > tol and it < max_iter:
        steps = min(50, max_iter - it)
        for _ in range(steps):
            pi = pi @ K
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        it += steps
        residual = float(np.abs(pi @ K - pi).sum())
    if residual > tol:
        raise ConvergenceError(
            f"stationary distribution not converged after {it} iterations", residual
        )
    return pi


@functools.lru_cache(maxsize=16)
def _ulam_cached(spec: MapSpec, bins: int, tol: float, max_iter: int, method: str):
    K = ulam_matrix(spec, bins)
    pi = stationary_distribution(K, tol=tol, max_iter=max_iter, method=method)
    lo, hi = spec.domain
    w = (hi - lo) / bins
    return pi / w


def invariant_density_ulam(
    spec: MapSpec,
    bins: int,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    method: str = "auto",
) -> np.ndarray:
    """Piecewise-constant invariant density on ``bins`` equal cells.

    Nonnegative, sums to 1 against the bin widths, and is a fixed point
    of the discretised Markov operator to ``tol`` in l1.
    """
    if bins < 2:
        raise ConfigError(f"bins={bins} must be >= 2")
    return _ulam_cached(spec, bins, tol, max_iter, method).copy()


def ulam_bin_edges(spec: MapSpec, bins: int) -> np.ndarray:
    lo, hi = spec.domain
    return lo + (hi - lo) / bins * np.arange(bins + 1)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

# name -> (kernel id, dimension, parameter)
_OBS_PRESETS = {
    "zero": (0, 1, 0.0),
    "linear": (1, 1, 0.0),
    "cos": (2, 1, 0.0),
    "vec3": (3, 3, 0.0),
}


def observable_preset_names() -> list[str]:
    return sorted(_OBS_PRESETS)


def raw_observable_values(oid: int, param: float, x: np.ndarray) -> np.ndarray:
    """Uncentred observable values, shape (len(x), d)."""
    x = np.asarray(x, dtype=float)
    if oid == 0:
        return np.zeros((x.size, 1))
    if oid == 1:
        return x.reshape(-1, 1).copy()
    if oid == 2:
        return np.cos(2.0 * np.pi * x).reshape(-1, 1)
    if oid == 3:
        return np.stack([x, np.cos(2.0 * np.pi * x), x * x], axis=1)
    if oid == 4:
        return ((1.0 + param * x) * np.cos(2.0 * np.pi * x)).reshape(-1, 1)
    if oid == 5:
        return (1.0 - np.cos(1.0 + param * x)).reshape(-1, 1)
    raise ConfigError(f"unknown observable id {oid}")


@dataclass(frozen=True)
class Observable:
    """A centred vector observable with estimated Holder data."""

    name: str
    dim: int
    center: tuple
    sup_norm: float
    holder_seminorm: float
    eta: float
    oid: int
    param: float = 0.0

    def raw(self, x) -> np.ndarray:
        return raw_observable_values(self.oid, self.param, np.atleast_1d(x))

    def __call__(self, x) -> np.ndarray:
        """Centred values, shape (d,) for scalar input, (n, d) for arrays."""
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        out = self.raw(xa) - np.asarray(self.center)
        return out[0] if np.isscalar(x) or np.ndim(x) == 0 else out

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)


def holder_data(oid: int, param: float, domain, eta: float, npts: int = 4096):
    """Grid estimates of |v|_inf and |v|_eta (adjacent-difference ratios)."""
    lo, hi = domain
    x = np.linspace(lo, hi, npts + 1)
    v = raw_observable_values(oid, param, x)
    sup = float(np.max(np.abs(v)))
    dv = np.abs(np.diff(v, axis=0)).max(axis=1)
    dx = (hi - lo) / npts
    semi = float(np.max(dv) / dx**eta)
    return sup, semi


def observable_from_values(
    name: str, spec: MapSpec, oid: int, param: float, center: np.ndarray
) -> Observable:
    sup, semi = holder_data(oid, param, spec.domain, spec.eta)
    d = raw_observable_values(oid, param, np.array([spec.domain[0]])).shape[1]
    return Observable(
        name=name,
        dim=d,
        center=tuple(float(c) for c in np.atleast_1d(center)),
        sup_norm=sup,
        holder_seminorm=semi,
        eta=spec.eta,
        oid=oid,
        param=param,
    )


def preset_ids(name: str) -> tuple[int, int, float]:
    try:
        return _OBS_PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown observable preset {name!r}; choose from {observable_preset_names()}"
        )


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MapFamily:
    """A parameter schedule n -> MapSpec with a designated limit member."""

    rule: Callable[[int], MapSpec] = field(compare=False)
    limit: MapSpec

    def member(self, n) -> MapSpec:
        if n is None or n == np.inf:
            return self.limit
        if n < 1:
            raise ConfigError(f"family index n={n} must be >= 1")
        return self.rule(int(n))

    def check_convergence(self, indices: Iterable[int]) -> None:
        """Verify the parameters approach the limit along the given indices."""
        idx = sorted(set(int(i) for i in indices))
        if not idx:
            return
        gaps = [abs(self.member(i).gamma - self.limit.gamma) for i in idx]
        for a, b in zip(gaps, gaps[1:]):
            if b > a + 1e-15:
                raise ConfigError(
                    f"family parameters do not converge monotonically on {idx}: gaps {gaps}"
                )


def lsv_family(gamma_inf: float, coeff: float, p: float = 3.0, eta: float = 1.0) -> MapFamily:
    """The schedule gamma_n = gamma_inf + coeff / n of intermittent maps.

    The moment order of each member is lowered below 1/gamma_n when the
    requested p would violate the admissibility constraint.
    """

    def rule(n: int) -> MapSpec:
        g = gamma_inf + coeff / n
        pn = min(p, 0.995 / g) if g > 0 else p
        if pn < 2.0:
            raise ConfigError(f"family member n={n} has gamma={g}, admitting no p >= 2")
        return MapSpec(kind="lsv", gamma=g, p=pn, eta=eta)

    return MapFamily(rule=rule, limit=MapSpec(kind="lsv", gamma=gamma_inf, p=p, eta=eta))
