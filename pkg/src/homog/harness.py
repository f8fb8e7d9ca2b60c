"""Command-line harness: configuration, dispatch, and run manifests.

Subcommands: orbit, density, tower, decompose, coeffs, moments, wip,
fastslow, semiflow.  A JSON config file may supply any long-option value;
explicit command-line flags win.  Every run writes its outputs and then a
manifest (config echo, code version, wall time, per-file checksums) as the
final, atomic step: a missing manifest means the run did not complete.

Exit codes: 0 success, 2 configuration error, 3 numerical-convergence
error, 4 statistical-gate failure.  The worker count (numba threads) is
taken from HOMOG_WORKERS when set, else --workers; per-sample RNG streams
make outputs byte-identical across worker counts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, io
from . import _kernels as _k
from .dynamics import MapSpec, invariant_density_ulam, orbit, ulam_bin_edges
from .errors import ConfigError, ConvergenceError
from .observables import make_observable
from .stats import (
    consensus,
    direct_coeffs,
    green_kubo,
    martingale_coeffs,
    moment_table,
    scaling_exponent,
)

_DEFAULTS = {
    "map": "lsv",
    "gamma": 0.25,
    "a_quad": 2.0,
    "p": 3.0,
    "eta": 1.0,
    "obs": "linear",
    "n": "10000",
    "q": "2",
    "samples": 10000,
    "seed": 0,
    "initial": "mu",
    "out": "homog_out",
    "workers": 1,
    "burnin": 1000,
    "bins": 4096,
    "tau_cap": 0,
    "kmax": 1000,
    "nmax": 1000,
    "orbit_len": 10_000_000,
    "x0": 0.2,
    "grid": "0,0.25,0.5,0.75,1",
    "drift": "neg_x",
    "noise": "obs",
    "xi": 0.0,
    "sde_drift": "neg_x",
    "sde_sigma": 0.7071067811865476,
    "step": 0.001,
    "roof": "affine",
    "alpha": 0.5,
    "fiber": "xcos",
    "t1": 400.0,
    "lap_t": 1000.0,
    "significance": 0.01,
    "allow_q_override": False,
    "methods": "direct,green_kubo,martingale",
    "ulam_max_iter": 200_000,
    "ulam_method": "auto",
}

_SUBCOMMANDS = (
    "orbit",
    "density",
    "tower",
    "decompose",
    "coeffs",
    "moments",
    "wip",
    "fastslow",
    "semiflow",
)


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name)

    def spec(self) -> MapSpec:
        return MapSpec(
            kind=self.values["map"],
            gamma=float(self.values["gamma"]),
            a_quad=float(self.values["a_quad"]),
            p=float(self.values["p"]),
            eta=float(self.values["eta"]),
        )

    def validate(self) -> None:
        v = self.values
        seed = int(v["seed"])
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed={seed} must fit in 64 bits")
        for key in ("samples", "workers", "bins", "kmax", "nmax", "orbit_len", "burnin"):
            if int(v[key]) < (0 if key == "burnin" else 1):
                raise ConfigError(f"{key}={v[key]} must be positive")
        self.spec()  # map-parameter validation

    def n_list(self) -> list[int]:
        return [int(float(tok)) for tok in str(self.values["n"]).split(",") if tok]

    def q_list(self) -> list[float]:
        return [float(tok) for tok in str(self.values["q"]).split(",") if tok]

    def grid_list(self) -> list[float]:
        return [float(tok) for tok in str(self.values["grid"]).split(",") if tok]


@dataclass
class RunManifest:
    config: dict
    version: str
    wall_time: float
    files: dict

    def to_dict(self) -> dict:
        return asdict(self)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="homog", description=__doc__)
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--map", type=str, default=None, choices=["lsv", "doubling", "quadratic"])
        p.add_argument("--gamma", type=str, default=None)
        p.add_argument("--a-quad", dest="a_quad", type=str, default=None)
        p.add_argument("--p", type=str, default=None)
        p.add_argument("--eta", type=str, default=None)
        p.add_argument("--obs", type=str, default=None)
        p.add_argument("--n", type=str, default=None, help="comma list, e.g. 1e3,1e4")
        p.add_argument("--q", type=str, default=None, help="comma list of moment orders")
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--initial", type=str, default=None, choices=["mu", "lebesgue"])
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--burnin", type=int, default=None)
        p.add_argument("--bins", type=int, default=None)
        p.add_argument("--tau-cap", dest="tau_cap", type=int, default=None)
        p.add_argument("--kmax", type=int, default=None)
        p.add_argument("--nmax", type=int, default=None)
        p.add_argument("--orbit-len", dest="orbit_len", type=int, default=None)
        p.add_argument("--x0", type=float, default=None)
        p.add_argument("--grid", type=str, default=None)
        p.add_argument("--drift", type=str, default=None)
        p.add_argument("--noise", type=str, default=None)
        p.add_argument("--xi", type=float, default=None)
        p.add_argument("--sde-drift", dest="sde_drift", type=str, default=None)
        p.add_argument("--sde-sigma", dest="sde_sigma", type=float, default=None)
        p.add_argument("--step", type=float, default=None, help="Euler-Maruyama step")
        p.add_argument("--roof", type=str, default=None, choices=["const1", "affine"])
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--fiber", type=str, default=None)
        p.add_argument("--t1", type=float, default=None)
        p.add_argument("--lap-t", dest="lap_t", type=float, default=None)
        p.add_argument("--significance", type=float, default=None)
        p.add_argument("--methods", type=str, default=None)
        p.add_argument("--ulam-max-iter", dest="ulam_max_iter", type=int, default=None)
        p.add_argument("--ulam-method", dest="ulam_method", type=str, default=None,
                       choices=["auto", "power"])
        p.add_argument(
            "--allow-q-override",
            dest="allow_q_override",
            action="store_true",
            default=None,
            help="compute moment orders beyond the guaranteed range",
        )
    return ap


def build_config(argv) -> ExperimentConfig:
    args = build_parser().parse_args(argv)
    values = dict(_DEFAULTS)
    if args.config:
        with open(args.config) as f:
            file_vals = json.load(f)
        unknown = set(file_vals) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        values.update(file_vals)
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    for key in ("gamma", "a_quad", "p", "eta"):
        values[key] = float(values[key])
    cfg = ExperimentConfig(subcommand=args.subcommand, values=values)
    cfg.validate()
    return cfg


def resolve_workers(cfg: ExperimentConfig) -> int:
    env = os.environ.get("HOMOG_WORKERS")
    wanted = int(env) if env else int(cfg.values["workers"])
    return _k.set_workers(wanted)


# ---------------------------------------------------------------------------
# Experiment bodies: each returns (files dict, gate_passed)
# ---------------------------------------------------------------------------


def _run_orbit(cfg, outdir):
    xs = orbit(cfg.spec(), float(cfg.x0), cfg.n_list()[0])
    io.write_orbit(outdir / "orbit.csv", xs)
    return ["orbit.csv"], True


def _run_density(cfg, outdir):
    spec = cfg.spec()
    dens = invariant_density_ulam(
        spec, int(cfg.bins), max_iter=int(cfg.ulam_max_iter), method=cfg.ulam_method
    )
    io.write_density(outdir / "density.csv", spec, ulam_bin_edges(spec, int(cfg.bins)), dens)
    return ["density.csv"], True


def _tower_model(cfg):
    from .tower import build_induced, ulam_P

    spec = cfg.spec()
    cap = int(cfg.tau_cap) or None
    scheme = build_induced(spec, cap)
    return spec, ulam_P(scheme, int(cfg.bins))


def _run_tower(cfg, outdir):
    spec, model = _tower_model(cfg)
    io.write_cylinders(outdir / "cylinders.csv", model)
    io.write_json(
        outdir / "tower.json",
        {
            "tau_bar": model.tau_bar,
            "tail_muY": model.tail_muY,
            "p_one_residual": model.p_one_residual,
            "adjoint_residual": model.adjoint_residual,
            "zeta_ratio_max": float(np.nanmax(model.zeta_ratios)),
            "bins": model.bins,
            "tau_cap": model.scheme.tau_cap,
            "n_cylinders": model.scheme.n_cylinders,
        },
    )
    return ["cylinders.csv", "tower.json"], True


def _run_decompose(cfg, outdir):
    from .tower import hypothesis_diagnostics, induced_phi, martingale_decompose

    spec, model = _tower_model(cfg)
    v = make_observable(cfg.obs, spec)
    phi = induced_phi(model, v)
    decomp = martingale_decompose(model, phi, K=int(cfg.kmax))
    io.write_chi_m(outdir / "chi_m.csv", model, decomp)
    est = martingale_coeffs(spec, v, bins=int(cfg.bins), tau_cap=int(cfg.tau_cap) or None)
    io.write_coeffs(outdir / "coeffs.csv", [est])
    diag = hypothesis_diagnostics(model, decomp, samples=min(int(cfg.samples), 2000), seed=int(cfg.seed))
    io.write_diagnostics(outdir / "diagnostics.csv", diag)
    io.write_json(
        outdir / "decompose.json",
        {
            "K": decomp.K,
            "residual_kernel": decomp.residual_kernel,
            "residual_series": decomp.residual_series,
            "identity_residual": decomp.identity_residual,
            "phi_norm": decomp.phi_norm,
            "diagnostics": diag.to_dict(),
        },
    )
    return ["chi_m.csv", "coeffs.csv", "diagnostics.csv", "decompose.json"], True


def _estimates(cfg, spec, v):
    methods = [m.strip() for m in str(cfg.methods).split(",") if m.strip()]
    out = []
    n = cfg.n_list()[0]
    for m in methods:
        if m == "direct":
            out.append(direct_coeffs(spec, v, n, int(cfg.samples), seed=int(cfg.seed),
                                      initial=cfg.initial, burnin=int(cfg.burnin)))
        elif m == "green_kubo":
            out.append(green_kubo(spec, v, int(cfg.nmax), int(cfg.orbit_len), seed=int(cfg.seed)))
        elif m == "martingale":
            out.append(martingale_coeffs(spec, v, bins=int(cfg.bins), tau_cap=int(cfg.tau_cap) or None))
        else:
            raise ConfigError(f"unknown estimator method {m!r}")
    return out


def _run_coeffs(cfg, outdir):
    spec = cfg.spec()
    v = make_observable(cfg.obs, spec)
    ests = _estimates(cfg, spec, v)
    combined = consensus(ests)
    io.write_coeffs(outdir / "coeffs.csv", ests + [combined])
    io.write_json(
        outdir / "coeffs.json",
        {
            "sigma": combined.sigma.tolist(),
            "sigma_stderr": combined.sigma_stderr.tolist(),
            "e": combined.e.tolist(),
            "e_stderr": combined.e_stderr.tolist(),
            "methods": [e.method for e in ests],
        },
    )
    return ["coeffs.csv", "coeffs.json"], True


def _run_moments(cfg, outdir):
    spec = cfg.spec()
    v = make_observable(cfg.obs, spec)
    table = moment_table(
        spec,
        v,
        cfg.n_list(),
        cfg.q_list(),
        int(cfg.samples),
        initial=cfg.initial,
        seed=int(cfg.seed),
        burnin=int(cfg.burnin),
        override=bool(cfg.allow_q_override),
    )
    io.write_moments(outdir / "moments.csv", table)
    fits = scaling_exponent(table)
    io.write_json(
        outdir / "scaling.json",
        {
            f"{stat}:q={q:g}": {"slope": f.slope, "ci": [f.ci_lo, f.ci_hi]}
            for (stat, q), f in fits.items()
        },
    )
    dens_bins = min(int(cfg.bins), 4096)
    dens = invariant_density_ulam(spec, dens_bins, max_iter=int(cfg.ulam_max_iter))
    io.write_density(outdir / "density.csv", spec, ulam_bin_edges(spec, dens_bins), dens)
    return ["moments.csv", "scaling.json", "density.csv"], True


def _run_wip(cfg, outdir):
    from .wip import drift_check, marginal_normality, sample_paths

    spec = cfg.spec()
    v = make_observable(cfg.obs, spec)
    ests = _estimates(cfg, spec, v)
    combined = consensus(ests)
    n = cfg.n_list()[-1]
    ens = sample_paths(
        spec, v, n, int(cfg.samples), grid=cfg.grid_list(), initial=cfg.initial,
        seed=int(cfg.seed), burnin=int(cfg.burnin),
    )
    io.write_ensemble(outdir / "ensemble.csv", ens)
    io.write_coeffs(outdir / "coeffs.csv", ests + [combined])
    rep_n = marginal_normality(ens, combined.sigma, significance=float(cfg.significance))
    rep_d = drift_check(ens, combined.e)
    report = {
        "normality": rep_n.to_dict(),
        "drift": rep_d.to_dict(),
        "levy_residual": ens.levy_residual(),
        "sigma_consensus": combined.sigma.tolist(),
        "e_consensus": combined.e.tolist(),
    }
    io.write_json(outdir / "report.json", report)
    return ["ensemble.csv", "coeffs.csv", "report.json"], rep_n.passed and rep_d.passed


def _run_fastslow(cfg, outdir):
    from .fastslow import SDESpec, euler_maruyama, homogenization_compare, make_fastslow, simulate_fastslow

    spec = cfg.spec()
    v = make_observable(cfg.obs, spec)
    fs = make_fastslow(cfg.drift, cfg.noise, v, spec, xi=float(cfg.xi))
    n = cfg.n_list()[-1]
    fast = simulate_fastslow(
        fs, spec, n, int(cfg.samples), initial=cfg.initial, seed=int(cfg.seed),
        grid=cfg.grid_list(), burnin=int(cfg.burnin),
    )
    sde = SDESpec(
        drift=cfg.sde_drift,
        sigma=np.array([[float(cfg.sde_sigma)]]),
        xi=np.array([float(cfg.xi)]),
        h=float(cfg.step),
        note="user-configured comparison SDE",
    )
    ref = euler_maruyama(sde, 1.0, int(cfg.samples), seed=int(cfg.seed), grid=cfg.grid_list())
    io.write_ensemble(outdir / "fast_ensemble.csv", fast)
    io.write_ensemble(outdir / "sde_ensemble.csv", ref)
    report = homogenization_compare(fast, ref, significance=float(cfg.significance))
    io.write_json(outdir / "report.json", report.to_dict())
    return ["fast_ensemble.csv", "sde_ensemble.csv", "report.json"], report.passed


def _run_semiflow(cfg, outdir):
    from .semiflow import (
        FlowState,
        flow_iterated_integrals,
        flow_wip_check,
        make_suspension,
        sample_flow_states,
    )

    spec = cfg.spec()
    susp = make_suspension(spec, cfg.roof, float(cfg.alpha))
    report = flow_wip_check(
        susp, cfg.fiber, float(cfg.t1), int(cfg.samples), seed=int(cfg.seed),
        significance=float(cfg.significance), lap_t=float(cfg.lap_t),
    )
    xs, us = sample_flow_states(susp, 1, int(cfg.seed))
    times, S, SS = flow_iterated_integrals(
        susp, cfg.fiber, FlowState(xs[0], us[0]), min(float(cfg.t1), 100.0),
        susp.inf_roof / 50.0, center=report.meta.get("c0", 0.0),
    )
    io.write_flow_traj(outdir / "flow_traj.csv", times, S, SS)
    io.write_json(outdir / "report.json", report.to_dict())
    return ["flow_traj.csv", "report.json"], report.passed


_RUNNERS = {
    "orbit": _run_orbit,
    "density": _run_density,
    "tower": _run_tower,
    "decompose": _run_decompose,
    "coeffs": _run_coeffs,
    "moments": _run_moments,
    "wip": _run_wip,
    "fastslow": _run_fastslow,
    "semiflow": _run_semiflow,
}


def run(cfg: ExperimentConfig) -> tuple[RunManifest, bool]:
    """Execute one experiment; manifest written last as a completion marker."""
    t0 = time.time()
    resolve_workers(cfg)
    outdir = Path(cfg.values["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    names, gate_ok = _RUNNERS[cfg.subcommand](cfg, outdir)
    files = {name: io.sha256_file(outdir / name) for name in names}
    manifest = RunManifest(
        config={"subcommand": cfg.subcommand, **cfg.values},
        version=__version__,
        wall_time=time.time() - t0,
        files=files,
    )
    io.atomic_write_json(outdir / "manifest.json", manifest.to_dict())
    return manifest, gate_ok


def main(argv=None) -> int:
    try:
        cfg = build_config(argv if argv is not None else sys.argv[1:])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        manifest, gate_ok = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"out": cfg.values["out"], "files": sorted(manifest.files)}, indent=2))
    if not gate_ok:
        print("statistical gate failed", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
