"""First-return scheme over Y, discretised transfer operator, and the
martingale-coboundary decomposition.

The induced map F = T^tau on Y is uniformly expanding, so everything on Y
converges geometrically; heavy lifting against the neutral fixed point is
confined to the cylinder geometry below.

Discretisation layout.  Y is cut into equal bins; each cylinder a (where
tau is constant) is cut into cells ``cell(a, j) = F|_a^{-1}(bin_j)``.  Fine
functions live on cells, coarse functions on bins.  With

    P  : fine -> coarse   (exact conditional average under mu_Y)
    U  : coarse -> fine   (composition with F; exact, since F maps
                           cell(a, j) into bin_j by construction)
    R  : coarse -> fine   (exact restriction, cell averages)

one gets P U = identity exactly, so the kernel property of the martingale
part holds to the truncation tail of the series rather than to the bin
width.  The coarse transfer matrix is P_c = P R.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from . import _kernels as _k
from .dynamics import (
    MapSpec,
    Observable,
    apply_map,
    lsv_left_inverse,
    stationary_distribution,
    to_state,
)
from .errors import ConfigError, ConvergenceError

_DEFAULT_TAIL = 1e-9


# ---------------------------------------------------------------------------
# Induced scheme
# ---------------------------------------------------------------------------


class ReturnTime(NamedTuple):
    steps: int
    capped: bool


@dataclass(frozen=True)
class InducedScheme:
    """First-return cylinders over Y, ordered by increasing return time."""

    spec: MapSpec
    y_lo: float
    y_hi: float
    lefts: np.ndarray
    rights: np.ndarray
    taus: np.ndarray
    tau_cap: int
    tail_mass: float  # Lebesgue-fraction estimate of mu_Y(tau > tau_cap)

    @property
    def n_cylinders(self) -> int:
        return len(self.taus)

    def _branch_image(self, a: int, y: float) -> float:
        """F|_a(y) through the cylinder's own branch composition.

        The pointwise branch convention at 1/2 cannot be used here: the
        backward-constructed endpoints pass exactly through the branch
        point, where a one-ulp rounding flips the branch.
        """
        if self.spec.kind == "doubling":
            return 2.0 * y - (1.0 if self.lefts[a] >= 0.5 else 0.0)
        from .dynamics import lsv_left_branch

        x = 2.0 * y - 1.0
        for _ in range(int(self.taus[a]) - 1):
            x = lsv_left_branch(self.spec.gamma, x)
        return x

    def verify(self, tol: float = 1e-9) -> dict:
        """Check disjointness, coverage, and endpoint images onto Y.

        Endpoint images are only checked where forward iteration is well
        conditioned: the image error of a cylinder endpoint grows like
        eps / |a|, so cylinders narrower than eps/tol are skipped (their
        boundaries come from the backward construction, which is verified
        at machine precision by construction).
        """
        lefts, rights, taus = self.lefts, self.rights, self.taus
        order = np.argsort(lefts)
        sl, sr = lefts[order], rights[order]
        gaps = sl[1:] - sr[:-1]
        if np.any(gaps < -1e-12):
            raise ConfigError("cylinders overlap")
        covered = float(np.sum(rights - lefts))
        span = self.y_hi - self.y_lo
        cover_gap = abs(span - covered - float(sl[0] - self.y_lo))
        if cover_gap > 1e-12:
            raise ConfigError(f"cylinders + tail fail to cover Y (gap {cover_gap:.2e})")
        checked = 0
        worst = 0.0
        for a, (left, right, tau) in enumerate(zip(lefts, rights, taus)):
            width = right - left
            if width < 2.3e-16 / tol:
                continue
            xl = self._branch_image(a, left)
            xr = self._branch_image(a, right)
            err = max(abs(xl - self.y_lo), abs(xr - self.y_hi))
            worst = max(worst, err)
            checked += 1
            if err > tol:
                raise ConfigError(
                    f"cylinder tau={tau} endpoint images miss Y endpoints by {err:.2e}"
                )
        return {"checked": checked, "max_endpoint_error": worst, "coverage_gap": cover_gap}


def _auto_tau_cap(spec: MapSpec, tail_target: float) -> int:
    g = spec.gamma
    cap = int(np.ceil(tail_target ** (-g) / (g * 2.0**g))) + 16
    return int(np.clip(cap, 32, 8192))


def lsv_xi_chain(gamma: float, count: int) -> np.ndarray:
    """Backward orbit of 1/2 under the left branch: xi_0 = 1/2, g(xi_k) = xi_{k-1}."""
    xi = np.empty(count)
    xi[0] = 0.5
    for k in range(1, count):
        xi[k] = float(lsv_left_inverse(gamma, xi[k - 1])[0])
    return xi


def build_induced(spec: MapSpec, tau_cap: int | None = None, tail_target: float = _DEFAULT_TAIL) -> InducedScheme:
    """First-return cylinders for the intermittent map (Y = [1/2, 1]) or the
    doubling map (Y = [0, 1], tau identically 1)."""
    if spec.kind == "doubling":
        return InducedScheme(
            spec=spec,
            y_lo=0.0,
            y_hi=1.0,
            lefts=np.array([0.0, 0.5]),
            rights=np.array([0.5, 1.0]),
            taus=np.array([1, 1], dtype=np.int64),
            tau_cap=tau_cap or 1,
            tail_mass=0.0,
        )
    if spec.kind != "lsv":
        raise ConfigError(f"no induced first-return scheme for map kind {spec.kind!r}")
    if tau_cap is None:
        tau_cap = _auto_tau_cap(spec, tail_target)
    if tau_cap < 1:
        raise ConfigError(f"tau_cap={tau_cap} must be >= 1")
    xi = lsv_xi_chain(spec.gamma, max(tau_cap, 2))
    # tau = k cylinder: 2y - 1 in [xi_{k-1}, xi_{k-2}), with xi_{-1} := 1
    lefts = np.empty(tau_cap)
    rights = np.empty(tau_cap)
    taus = np.arange(1, tau_cap + 1, dtype=np.int64)
    lefts[0], rights[0] = 0.75, 1.0
    for k in range(2, tau_cap + 1):
        lefts[k - 1] = 0.5 * (1.0 + xi[k - 1])
        rights[k - 1] = 0.5 * (1.0 + xi[k - 2])
    tail = float(xi[tau_cap - 1])  # Lebesgue fraction of Y left of the last cylinder
    if tail >= 0.5:
        raise ConfigError(
            f"tau_cap={tau_cap} retains too little of Y (tail fraction {tail:.3f})"
        )
    return InducedScheme(
        spec=spec,
        y_lo=0.5,
        y_hi=1.0,
        lefts=lefts,
        rights=rights,
        taus=taus,
        tau_cap=tau_cap,
        tail_mass=tail,
    )


def _y_interval(spec: MapSpec) -> tuple[float, float]:
    if spec.kind == "doubling":
        return 0.0, 1.0
    if spec.kind == "lsv":
        return 0.5, 1.0
    raise ConfigError(f"no reference set Y for map kind {spec.kind!r}")


def return_time(spec: MapSpec, y: float, tau_cap: int = 100_000) -> ReturnTime:
    """Smallest n >= 1 with T^n y back in Y; capped results are flagged."""
    y_lo, y_hi = _y_interval(spec)
    if not y_lo <= y <= y_hi:
        raise ConfigError(f"y={y} outside Y=[{y_lo}, {y_hi}]")
    x = y
    for n in range(1, tau_cap + 1):
        x = apply_map(spec, x)
        if x >= y_lo:
            return ReturnTime(n, False)
    return ReturnTime(tau_cap, True)


def induce_observable(
    spec: MapSpec, v: Observable, y: float, tau_cap: int = 100_000
) -> tuple[np.ndarray, bool]:
    """Block sum sum_{l < tau(y)} v(T^l y) of the centred observable."""
    rt = return_time(spec, y, tau_cap)
    acc = np.zeros(v.dim)
    x = y
    for _ in range(rt.steps):
        acc += v(x)
        x = apply_map(spec, x)
    return acc, rt.capped


# ---------------------------------------------------------------------------
# Cylinder geometry on the Y grid
# ---------------------------------------------------------------------------


def _cylinder_geometry(scheme: InducedScheme, edges: np.ndarray):
    """Backward images of the bin edges and midpoints in every cylinder.

    Returns (cell_edges, y_rep, fprime) with shapes (ncyl, nbins+1),
    (ncyl, nbins), (ncyl, nbins): cell boundaries, preimages of bin
    midpoints, and dF/dy at those preimages.
    """
    spec = scheme.spec
    nbins = len(edges) - 1
    mids = 0.5 * (edges[:-1] + edges[1:])
    pts = np.concatenate([edges, mids])  # solve each ladder level once
    ncyl = scheme.n_cylinders
    cell_edges = np.empty((ncyl, nbins + 1))
    y_rep = np.empty((ncyl, nbins))
    fprime = np.empty((ncyl, nbins))
    if spec.kind == "doubling":
        for a in range(ncyl):
            lo = scheme.lefts[a]
            cell_edges[a] = lo + 0.5 * edges
            y_rep[a] = lo + 0.5 * mids
            fprime[a] = 2.0
        return cell_edges, y_rep, fprime
    g = spec.gamma

    def gprime(x):
        return 1.0 + (1.0 + g) * (2.0 * x) ** g

    z = pts.copy()  # ladder level 0: the points themselves (in Y)
    deriv = np.full(pts.shape, 2.0)  # dF/dy accumulates through y -> 2y-1
    for a in range(ncyl):
        assert scheme.taus[a] == a + 1
        y_all = 0.5 * (1.0 + z)
        cell_edges[a] = y_all[: nbins + 1]
        y_rep[a] = y_all[nbins + 1 :]
        fprime[a] = deriv[nbins + 1 :]
        if a + 1 < ncyl:
            z = lsv_left_inverse(g, z)
            deriv = deriv * gprime(z)
    return cell_edges, y_rep, fprime


def _cell_bin_split(cell_edges_a: np.ndarray, y_lo: float, w: float, nbins: int):
    """Split each cell across the (at most two) bins it overlaps.

    Returns index/weight arrays (iA, wA, iB, wB); weights are Lebesgue
    lengths.  Cells are narrower than a bin because F is expanding.
    """
    e0 = cell_edges_a[:-1]
    e1 = cell_edges_a[1:]
    i0 = np.clip(((e0 - y_lo) / w).astype(np.int64), 0, nbins - 1)
    i1 = np.clip(((e1 - y_lo) / w).astype(np.int64), 0, nbins - 1)
    if np.any(i1 - i0 > 1):
        raise ConfigError("cell spans more than two bins; induced map not expanding?")
    boundary = y_lo + w * i1
    straddle = i1 > i0
    wA = np.where(straddle, boundary - e0, e1 - e0)
    wB = np.where(straddle, e1 - boundary, 0.0)
    return i0, np.maximum(wA, 0.0), i1, np.maximum(wB, 0.0)


# ---------------------------------------------------------------------------
# Tower model
# ---------------------------------------------------------------------------


@dataclass
class TowerModel:
    """Induced scheme plus its discretised operator data on Y.

    muY holds bin masses (sums to 1), P the coarse transfer matrix with
    P 1 = 1 exactly, tau_bar the mean return time.  m_cell/y_rep and the
    (iA, wA, iB, wB) split arrays carry the fine-cell structure used by
    the decomposition.
    """

    scheme: InducedScheme
    bins: int
    edges: np.ndarray
    muY: np.ndarray
    P: sp.csr_matrix
    tau_bar: float
    tail_muY: float
    zeta_ratios: np.ndarray
    taus: np.ndarray
    m_cell: np.ndarray
    y_rep: np.ndarray
    iA: np.ndarray
    wA: np.ndarray
    iB: np.ndarray
    wB: np.ndarray
    p_one_residual: float
    adjoint_residual: float

    @property
    def spec(self) -> MapSpec:
        return self.scheme.spec

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def cylinder_masses(self) -> np.ndarray:
        return self.m_cell.sum(axis=1)

    def apply_P_fine(self, f: np.ndarray) -> np.ndarray:
        """P f for a fine function f (ncyl, bins, d) -> (bins, d)."""
        num = np.einsum("aj,aj...->j...", self.m_cell, f)
        den = np.where(self.muY > 0.0, self.muY, 1.0)
        return num / den[:, None]

    def restrict(self, w: np.ndarray) -> np.ndarray:
        """R w: exact cell averages of a coarse function (bins, d)."""
        num = self.wA[..., None] * w[self.iA] + self.wB[..., None] * w[self.iB]
        den = np.where(self.m_cell > 0.0, self.m_cell, 1.0)
        return num / den[..., None]

    def compose(self, w: np.ndarray) -> np.ndarray:
        """U w = w o F on fine cells: cell (a, j) lands in bin j."""
        ncyl = self.m_cell.shape[0]
        return np.broadcast_to(w[None, :, :], (ncyl,) + w.shape)

    def bin_average_fine(self, f: np.ndarray) -> np.ndarray:
        """Spatial bin averages of a fine function (adjoint of R)."""
        d = f.shape[-1]
        out = np.zeros((self.bins, d))
        np.add.at(out, self.iA.ravel(), (self.wA[..., None] * f).reshape(-1, d))
        np.add.at(out, self.iB.ravel(), (self.wB[..., None] * f).reshape(-1, d))
        den = np.where(self.muY > 0.0, self.muY, 1.0)
        return out / den[:, None]


def ulam_P(scheme: InducedScheme, bins: int, tol: float = 1e-12, max_iter: int = 200_000) -> TowerModel:
    """Discretise mu_Y and the transfer operator of F on ``bins`` equal cells.

    The invariant bin masses come from the exact-intersection Ulam chain of
    F; cell masses integrate the resulting piecewise-constant density, so
    constants are fixed exactly and the adjoint fixes muY up to the
    retained-tail defect.
    """
    if bins < 16:
        raise ConfigError(f"bins={bins} must be >= 16")
    y_lo, y_hi = scheme.y_lo, scheme.y_hi
    w = (y_hi - y_lo) / bins
    edges = y_lo + w * np.arange(bins + 1)
    cell_edges, y_rep, fprime = _cylinder_geometry(scheme, edges)
    ncyl = scheme.n_cylinders

    iA = np.empty((ncyl, bins), dtype=np.int64)
    iB = np.empty((ncyl, bins), dtype=np.int64)
    lenA = np.empty((ncyl, bins))
    lenB = np.empty((ncyl, bins))
    for a in range(ncyl):
        iA[a], lenA[a], iB[a], lenB[a] = _cell_bin_split(cell_edges[a], y_lo, w, bins)

    # invariant bin masses of the first-return Ulam chain
    rows = np.concatenate([iA.ravel(), iB.ravel()])
    cols = np.concatenate([np.tile(np.arange(bins), ncyl)] * 2)
    vals = np.concatenate([lenA.ravel(), lenB.ravel()]) / w
    K = sp.coo_matrix((vals, (rows, cols)), shape=(bins, bins)).tocsr()
    s = np.asarray(K.sum(axis=1)).ravel()
    s[s == 0.0] = 1.0
    K = sp.diags(1.0 / s) @ K
    pi = stationary_distribution(K, tol=tol, max_iter=max_iter)

    # cell masses under the piecewise-constant density pi/w
    wA = lenA * pi[iA] / w
    wB = lenB * pi[iB] / w
    m_cell = wA + wB
    total = float(m_cell.sum())
    tail_muY = max(0.0, 1.0 - total)
    wA /= total
    wB /= total
    m_cell = wA + wB
    m_bin = np.einsum("aj->j", m_cell)

    # coarse transfer matrix P_c[j, i] = sum_a overlap_h(a, j, i) / m_bin[j]
    Jidx = np.tile(np.arange(bins), ncyl)
    m_bin_safe = np.where(m_bin > 0.0, m_bin, 1.0)
    prow = np.concatenate([Jidx, Jidx])
    pcol = np.concatenate([iA.ravel(), iB.ravel()])
    pval = np.concatenate([wA.ravel(), wB.ravel()]) / np.concatenate([m_bin_safe[Jidx]] * 2)
    P = sp.coo_matrix((pval, (prow, pcol)), shape=(bins, bins)).tocsr()

    p_one = float(np.max(np.abs(P @ np.ones(bins) - 1.0)))
    adj = float(np.sum(np.abs(m_bin @ P - m_bin)))
    if p_one > 1e-8:
        raise ConvergenceError("transfer matrix does not fix constants", p_one)
    if adj > 1e-8:
        raise ConvergenceError("muY is not adjoint-invariant", adj)

    taus = scheme.taus.astype(np.int64)
    tau_bar = float(np.einsum("a,aj->", taus.astype(float), m_cell))
    if tau_bar < 1.0 - 1e-9:
        raise ConvergenceError("mean return time below 1", tau_bar)

    h_pc = pi / w
    h_at_rep = h_pc[np.clip(((y_rep - y_lo) / w).astype(np.int64), 0, bins - 1)]
    h_at_img = h_pc[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = h_at_rep / (h_at_img * fprime)
    masses = m_cell.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta_ratios = np.nanmax(zeta, axis=1) / np.where(masses > 0, masses, np.nan)

    return TowerModel(
        scheme=scheme,
        bins=bins,
        edges=edges,
        muY=m_bin,
        P=P,
        tau_bar=tau_bar,
        tail_muY=tail_muY,
        zeta_ratios=zeta_ratios,
        taus=taus,
        m_cell=m_cell,
        y_rep=y_rep,
        iA=iA,
        wA=wA,
        iB=iB,
        wB=wB,
        p_one_residual=p_one,
        adjoint_residual=adj,
    )


# ---------------------------------------------------------------------------
# Martingale-coboundary decomposition
# ---------------------------------------------------------------------------


@dataclass
class MartingaleDecomposition:
    """chi' (coarse), m' (fine, plus a bin-averaged view) and residuals.

    The identity phi' = m' + chi' o F - chi' holds by construction; the
    kernel residual |P m'|_inf equals the truncation tail of the series
    chi' = sum_k P^k phi'.
    """

    chi_prime: np.ndarray
    m_prime: np.ndarray
    m_prime_fine: np.ndarray
    phi_fine: np.ndarray
    K: int
    residual_kernel: float
    residual_series: float
    identity_residual: float
    phi_norm: float


def induced_phi(tower: TowerModel, v: Observable) -> np.ndarray:
    """Fine induced observable phi'[a, j] = sum_{l < tau(a)} v(T^l y_rep[a, j]),
    re-centred to mean zero under the discretised mu_Y."""
    spec = tower.spec
    c = v.center_array
    y_states = np.asarray(to_state(spec, tower.y_rep))
    phi = _k.induced_block_sums(
        spec.map_id, spec.map_param, v.oid, v.param, c, y_states, tower.taus, v.dim
    )
    mean = np.einsum("aj,ajd->d", tower.m_cell, phi)
    return phi - mean


def martingale_decompose(
    tower: TowerModel,
    phi_fine: np.ndarray,
    K: int = 1000,
    series_rtol: float = 1e-10,
    series_tol: float = 1e-6,
) -> MartingaleDecomposition:
    """chi' = sum_{k=1}^K P^k phi', m' = phi' - chi' o F + chi'.

    The series is summed adaptively: it stops once the next term falls
    below series_rtol * |phi'|_inf, and raises ConvergenceError if K terms
    leave the tail above series_tol * |phi'|_inf.
    """
    if phi_fine.ndim != 3 or phi_fine.shape[:2] != tower.m_cell.shape:
        raise ConfigError("phi must be a fine function of shape (ncyl, bins, d)")
    phi_norm = float(np.max(np.abs(phi_fine)))
    if phi_norm == 0.0:
        d = phi_fine.shape[2]
        zeros_c = np.zeros((tower.bins, d))
        return MartingaleDecomposition(
            chi_prime=zeros_c,
            m_prime=zeros_c.copy(),
            m_prime_fine=np.zeros_like(phi_fine),
            phi_fine=phi_fine,
            K=0,
            residual_kernel=0.0,
            residual_series=0.0,
            identity_residual=0.0,
            phi_norm=0.0,
        )
    mean = np.einsum("aj,ajd->d", tower.m_cell, phi_fine)
    if np.max(np.abs(mean)) > 1e-8 * max(phi_norm, 1.0):
        raise ConfigError(
            f"phi is not mean-zero under muY (|mean| = {np.max(np.abs(mean)):.2e})"
        )
    term = tower.apply_P_fine(phi_fine)  # P phi'
    chi = term.copy()
    used = 1
    tail = float("inf")
    while used < K:
        term = tower.P @ term
        tail = float(np.max(np.abs(term)))
        if tail <= series_rtol * phi_norm:
            chi += term
            used += 1
            break
        chi += term
        used += 1
    else:
        tail = float(np.max(np.abs(tower.P @ term)))
    if tail > series_tol * phi_norm:
        raise ConvergenceError(
            f"martingale series not decayed after K={used} terms; increase K", tail
        )
    u_chi = tower.compose(chi)
    r_chi = tower.restrict(chi)
    m_fine = phi_fine - u_chi + r_chi
    p_m = tower.apply_P_fine(m_fine)
    residual_kernel = float(np.max(np.abs(p_m)))
    identity = phi_fine - m_fine - u_chi + r_chi
    identity_residual = float(np.max(np.abs(identity)))
    return MartingaleDecomposition(
        chi_prime=chi,
        m_prime=tower.bin_average_fine(m_fine),
        m_prime_fine=m_fine,
        phi_fine=phi_fine,
        K=used,
        residual_kernel=residual_kernel,
        residual_series=tail,
        identity_residual=identity_residual,
        phi_norm=phi_norm,
    )


def sigma_from_m(tower: TowerModel, decomp: MartingaleDecomposition) -> np.ndarray:
    """Diffusion matrix (1/tau_bar) int m' (x) m' d mu_Y; symmetric PSD."""
    m = decomp.m_prime_fine
    sigma = np.einsum("aj,ajp,ajq->pq", tower.m_cell, m, m) / tower.tau_bar
    sigma = 0.5 * (sigma + sigma.T)
    scale = float(np.max(np.abs(sigma)))
    if scale > 0 and float(np.min(np.linalg.eigvalsh(sigma))) < -1e-8 * scale:
        raise ConvergenceError("sigma estimate is not PSD")
    return sigma


def e_from_chi(tower: TowerModel, decomp: MartingaleDecomposition, v: Observable) -> np.ndarray:
    """Drift matrix (1/tau_bar) int_Y sum_l chi(y,l) (x) phi(y,l) d mu_Y.

    chi(y, l) = chi'(y) + sum_{k<l} phi(y, k) is streamed level by level
    per cylinder; memory stays O(bins).
    """
    spec = tower.spec
    # exact cell restriction of chi', reconstructed from the decomposition
    chi_cell = decomp.m_prime_fine - decomp.phi_fine + tower.compose(decomp.chi_prime)
    acc = _k.chi_phi_level_sums(
        spec.map_id,
        spec.map_param,
        v.oid,
        v.param,
        v.center_array,
        np.asarray(to_state(spec, tower.y_rep)),
        tower.taus,
        tower.m_cell,
        np.ascontiguousarray(chi_cell),
        v.dim,
    )
    return acc.sum(axis=0) / tower.tau_bar


# ---------------------------------------------------------------------------
# Hypothesis diagnostics
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    """Numerical checks behind the martingale limit theorem hypotheses."""

    tail_grid: np.ndarray
    tail_values: np.ndarray
    m2_mass: float
    dev_n: np.ndarray
    dev_mean: np.ndarray
    dev_stderr: np.ndarray
    dev_z: np.ndarray
    samples: int

    def to_dict(self) -> dict:
        return {
            "tail": [
                {"q": float(q), "value": float(v)}
                for q, v in zip(self.tail_grid, self.tail_values)
            ],
            "m2_mass": self.m2_mass,
            "birkhoff_deviation": [
                {
                    "n": int(n),
                    "mean_abs_dev": float(m),
                    "stderr": float(s),
                    "max_abs_z": float(z),
                }
                for n, m, s, z in zip(self.dev_n, self.dev_mean, self.dev_stderr, self.dev_z)
            ],
            "samples": self.samples,
        }


def hypothesis_diagnostics(
    tower: TowerModel,
    decomp: MartingaleDecomposition,
    n_grid=(100, 1000, 10_000),
    q_grid=(1.0, 10.0, 100.0, 1000.0),
    samples: int = 1000,
    seed: int = 0,
    burnin: int = 1000,
    sigma: np.ndarray | None = None,
) -> DiagnosticsReport:
    """Tail functional of |m'|^2 and Birkhoff deviation of UL(m (x) m).

    Diagnostics only; nothing raised on large values.
    """
    from .rng import initial_uniforms

    m = decomp.m_prime_fine
    m2 = np.einsum("ajd,ajd->aj", m, m)
    qs = np.asarray(q_grid, dtype=float)
    tails = np.array(
        [float(np.sum(tower.m_cell * m2 * (m2 > q))) for q in qs]
    )
    m2_mass = float(np.sum(tower.m_cell * m2))

    if sigma is None:
        sigma = sigma_from_m(tower, decomp)
    d = m.shape[2]
    # G = P(m' (x) m') on bins, the pulled-back level-0 value of L(m (x) m)
    den = np.where(tower.muY > 0.0, tower.muY, 1.0)
    G = np.einsum("aj,ajp,ajq->jpq", tower.m_cell, m, m) / den[:, None, None]
    G_flat = np.ascontiguousarray(G.reshape(tower.bins, d * d))
    spec = tower.spec
    lo, hi = spec.domain
    x0 = np.asarray(to_state(spec, initial_uniforms(seed, samples, "init", lo, hi)))
    ngrid = np.asarray(sorted(set(int(n) for n in n_grid)), dtype=np.int64)
    w = (tower.edges[-1] - tower.edges[0]) / tower.bins
    A = _k.ul_mm_birkhoff(
        spec.map_id, spec.map_param, x0, burnin, ngrid, G_flat, tower.edges[0], w, d * d
    )
    target = sigma.reshape(-1)
    dev_mean = np.empty(len(ngrid))
    dev_se = np.empty(len(ngrid))
    dev_z = np.empty(len(ngrid))
    for g in range(len(ngrid)):
        diff = A[:, g, :] - target[None, :]
        dev_mean[g] = float(np.mean(np.linalg.norm(diff, axis=1)))
        se = np.std(A[:, g, :], axis=0, ddof=1) / np.sqrt(samples)
        dev_se[g] = float(np.max(se))
        mean_diff = np.mean(diff, axis=0)
        dev_z[g] = float(np.max(np.abs(mean_diff) / np.where(se > 0, se, np.inf)))
    return DiagnosticsReport(
        tail_grid=qs,
        tail_values=tails,
        m2_mass=m2_mass,
        dev_n=ngrid,
        dev_mean=dev_mean,
        dev_stderr=dev_se,
        dev_z=dev_z,
        samples=samples,
    )


# ---------------------------------------------------------------------------
# High-accuracy invariant averages for the intermittent map
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def _linear_density_model(spec: MapSpec, bins: int, tail_target: float):
    """Nodal invariant density of F on Y by hat-function collocation.

    Piecewise-linear collocation converges at O(w^2) on the (smooth)
    induced density, which is what centering integrals need; the bin-mass
    Ulam vector is kept separately for the operator algebra.
    """
    scheme = build_induced(spec, tail_target=tail_target)
    y_lo, y_hi = scheme.y_lo, scheme.y_hi
    w = (y_hi - y_lo) / bins
    edges = y_lo + w * np.arange(bins + 1)
    cell_edges, y_rep, fprime_mid = _cylinder_geometry(scheme, edges)
    ncyl = scheme.n_cylinders

    # collocation matrix at the nodes: A[k, :] = sum_a hat(.)(y_a(node_k)) / F'(y_a(node_k))
    nodes = edges
    nn = bins + 1
    rows = []
    cols = []
    vals = []
    g = spec.gamma

    def gprime(x):
        return 1.0 + (1.0 + g) * (2.0 * x) ** g

    if spec.kind == "lsv":
        z = nodes.copy()
        deriv = np.full(nn, 2.0)
        for a in range(ncyl):
            ya = 0.5 * (1.0 + z)
            t = np.clip((ya - y_lo) / w, 0.0, bins - 1e-12)
            j0 = t.astype(np.int64)
            fr = t - j0
            k_idx = np.arange(nn)
            rows.extend([k_idx, k_idx])
            cols.extend([j0, np.minimum(j0 + 1, bins)])
            inv_d = 1.0 / deriv
            vals.extend([(1.0 - fr) * inv_d, fr * inv_d])
            if a + 1 < ncyl:
                z = lsv_left_inverse(g, z)
                deriv = deriv * gprime(z)
    else:
        for a in range(ncyl):
            lo = scheme.lefts[a]
            ya = lo + 0.5 * nodes
            t = np.clip((ya - y_lo) / w, 0.0, bins - 1e-12)
            j0 = t.astype(np.int64)
            fr = t - j0
            k_idx = np.arange(nn)
            rows.extend([k_idx, k_idx])
            cols.extend([j0, np.minimum(j0 + 1, bins)])
            vals.extend([(1.0 - fr) * 0.5, fr * 0.5])
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nn, nn),
    ).tocsr()
    h = np.ones(nn)
    for it in range(5000):
        h_new = A @ h
        h_new /= np.trapezoid(h_new, nodes)
        delta = float(np.max(np.abs(h_new - h)))
        h = h_new
        if delta < 1e-13:
            break
    else:
        raise ConvergenceError("linear-collocation density did not converge", delta)

    # cell masses via exact trapezoid of the piecewise-linear density
    def h_at(y):
        t = np.clip((y - y_lo) / w, 0.0, bins - 1e-12)
        j0 = t.astype(np.int64)
        fr = t - j0
        return h[j0] * (1.0 - fr) + h[np.minimum(j0 + 1, bins)] * fr

    hA = h_at(cell_edges[:, :-1])
    hB = h_at(cell_edges[:, 1:])
    widths = np.diff(cell_edges, axis=1)
    m_cell = 0.5 * (hA + hB) * widths
    m_cell /= m_cell.sum()
    taus = scheme.taus.astype(np.int64)
    tau_bar = float(np.einsum("a,aj->", taus.astype(float), m_cell))
    return scheme, y_rep, taus, m_cell, tau_bar


def invariant_average_obs(
    spec: MapSpec,
    oid: int,
    param: float,
    bins: int = 2048,
    tail_target: float = 1e-6,
) -> np.ndarray:
    """int v d mu for a kernel-registered observable, via the induced side.

    Valid for lsv and doubling; the doubling case reduces to the exact
    Lebesgue average of the bin-midpoint values.
    """
    scheme, y_rep, taus, m_cell, tau_bar = _linear_density_model(spec, bins, tail_target)
    d = {0: 1, 1: 1, 2: 1, 3: 3, 4: 1, 5: 1}[oid]
    block = _k.induced_block_sums(
        spec.map_id, spec.map_param, oid, param, np.zeros(d), np.asarray(to_state(spec, y_rep)),
        taus, d,
    )
    return np.einsum("aj,ajd->d", m_cell, block) / tau_bar
