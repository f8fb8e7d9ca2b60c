"""CSV/JSON persistence for experiment outputs.

Floats are written in scientific notation with 17 significant digits so a
64-bit value survives the round trip bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError

_FMT = "%.16e"


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return _FMT % float(x)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_csv(path, required=None):
    """Columns as float arrays keyed by header name; non-numeric kept as str."""
    path = Path(path)
    with open(path, newline="") as f:
        r = csv.reader(f)
        try:
            header = next(r)
        except StopIteration:
            raise ConfigError(f"{path} is empty")
        data = list(r)
    if required:
        missing = [c for c in required if c not in header]
        if missing:
            raise ConfigError(f"{path} missing column(s) {missing}; found {header}")
    if not data:
        raise ConfigError(f"{path} has a header but no rows")
    cols = {}
    arr = np.array(data, dtype=object)
    for i, name in enumerate(header):
        col = arr[:, i]
        try:
            cols[name] = col.astype(float)
        except ValueError:
            cols[name] = col.astype(str)
    return cols


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_json(path, obj) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    write_json(tmp, obj)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Schema-specific writers
# ---------------------------------------------------------------------------


def write_moments(path, table) -> None:
    write_csv(
        path,
        ["n", "q", "stat", "value", "stderr", "M"],
        [(r.n, r.q, r.stat, r.value, r.stderr, r.samples) for r in table.rows],
    )


def write_coeffs(path, estimates) -> None:
    rows = []
    for est in estimates:
        d = est.sigma.shape[0]
        for i in range(d):
            for j in range(d):
                rows.append(
                    (est.method, "sigma", i, j, est.sigma[i, j], est.sigma_stderr[i, j])
                )
        for i in range(d):
            for j in range(d):
                rows.append((est.method, "e", i, j, est.e[i, j], est.e_stderr[i, j]))
    write_csv(path, ["method", "matrix", "i", "j", "value", "stderr"], rows)


def write_ensemble(path, ensemble) -> None:
    d = ensemble.dim
    header = ["path_id", "t"] + [f"W{i}" for i in range(d)]
    has_ww = ensemble.WW is not None
    if has_ww:
        header += [f"WW{i}{j}" for i in range(d) for j in range(d)]
    rows = []
    for m in range(ensemble.M):
        for g, t in enumerate(ensemble.grid):
            row = [m, t] + [ensemble.W[m, g, i] for i in range(d)]
            if has_ww:
                row += [ensemble.WW[m, g, i, j] for i in range(d) for j in range(d)]
            rows.append(row)
    write_csv(path, header, rows)


def write_cylinders(path, model) -> None:
    scheme = model.scheme
    masses = model.cylinder_masses
    write_csv(
        path,
        ["tau", "left", "right", "muY_mass"],
        [
            (int(scheme.taus[a]), scheme.lefts[a], scheme.rights[a], masses[a])
            for a in range(scheme.n_cylinders)
        ],
    )


def write_chi_m(path, model, decomp) -> None:
    d = decomp.chi_prime.shape[1]
    header = ["bin_center"] + [f"chi{i}" for i in range(d)] + [f"m{i}" for i in range(d)]
    centers = model.centers
    rows = []
    for j in range(model.bins):
        rows.append(
            [centers[j]]
            + [decomp.chi_prime[j, i] for i in range(d)]
            + [decomp.m_prime[j, i] for i in range(d)]
        )
    write_csv(path, header, rows)


def write_density(path, spec, edges, density) -> None:
    centers = 0.5 * (edges[:-1] + edges[1:])
    write_csv(
        path,
        ["bin_center", "density"],
        [(c, h) for c, h in zip(centers, density)],
    )


def write_diagnostics(path, report) -> None:
    rows = [("tail", q, v, 0.0) for q, v in zip(report.tail_grid, report.tail_values)]
    rows += [
        ("birkhoff_dev", n, m, s)
        for n, m, s in zip(report.dev_n, report.dev_mean, report.dev_stderr)
    ]
    write_csv(path, ["check", "param", "value", "stderr"], rows)


def write_orbit(path, xs) -> None:
    write_csv(path, ["j", "x"], [(j, x) for j, x in enumerate(xs)])


def write_flow_traj(path, times, S, SS) -> None:
    write_csv(path, ["t", "S0", "SS00"], [(t, s, q) for t, s, q in zip(times, S, SS)])
