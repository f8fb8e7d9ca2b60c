"""Render homog CSV/JSON outputs into figures.

All numbers come from the input files; nothing is recomputed here.  The
renderer is deterministic: fixed style, fixed dpi, PNG output with no
timestamps, so identical inputs yield identical bytes.

Kinds and their inputs:

    loglog_moments  moments.csv  (n, q, stat, value, stderr, M)
    qq_normal       ensemble.csv (path_id, t, W0, ...) [+ report.json
                    carrying sigma_consensus; defaults to the sample
                    variance when no report is given]
    hist_density    density.csv  (bin_center, density)
    path_ensemble   ensemble.csv (at most 50 paths plus the mean curve)
    coeff_table     coeffs.csv   (method, matrix, i, j, value, stderr)
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.special import erfinv

FIGURE_KINDS = (
    "loglog_moments",
    "qq_normal",
    "hist_density",
    "path_ensemble",
    "coeff_table",
)

_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
}


class SchemaError(ValueError):
    """An input file does not match the expected harness schema."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    xlabel: str = ""
    ylabel: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; choose from {FIGURE_KINDS}")
        if not self.inputs:
            raise SchemaError("at least one input file is required")
        for path in self.inputs:
            if not Path(path).exists():
                raise SchemaError(f"input file {path} does not exist")


def read_table(path, required):
    """CSV columns as arrays; missing columns are named in the error."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty")
        rows = list(reader)
    for col in required:
        if col not in header:
            raise SchemaError(f"{path}: missing required column {col!r} (found {header})")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    arr = np.array(rows, dtype=object)
    out = {}
    for i, name in enumerate(header):
        col = arr[:, i]
        try:
            out[name] = col.astype(float)
        except ValueError:
            out[name] = col.astype(str)
    return out


def _csv_input(spec: FigureSpec) -> str:
    for path in spec.inputs:
        if str(path).endswith(".csv"):
            return str(path)
    raise SchemaError(f"{spec.kind}: no CSV among inputs {spec.inputs}")


def _json_input(spec: FigureSpec) -> str | None:
    for path in spec.inputs:
        if str(path).endswith(".json"):
            return str(path)
    return None


# ---------------------------------------------------------------------------
# figure bodies
# ---------------------------------------------------------------------------


def _fig_loglog_moments(spec: FigureSpec, ax):
    cols = read_table(_csv_input(spec), ["n", "q", "stat", "value", "stderr", "M"])
    drawn = 0
    for stat, ref_slope, color in (("S_max", 0.5, "C0"), ("SS_max", 1.0, "C1")):
        mask = cols["stat"] == stat
        if not np.any(mask):
            continue
        q = cols["q"][mask]
        n = cols["n"][mask]
        val = cols["value"][mask] ** (1.0 / q)
        order = np.argsort(n)
        n, val = n[order], val[order]
        first = {}
        for ni, vi in zip(n, val):
            first.setdefault(ni, vi)
        n = np.array(sorted(first))
        val = np.array([first[ni] for ni in n])
        slope = np.polyfit(np.log(n), np.log(val), 1)[0]
        ax.loglog(n, val, "o-", color=color, label=f"{stat}: fitted slope {slope:.3f}")
        anchor = val[0] / n[0] ** ref_slope
        ax.loglog(n, anchor * n**ref_slope, "--", color=color, alpha=0.6,
                  label=f"reference slope {ref_slope:g}")
        drawn += 1
    if drawn == 0:
        raise SchemaError("moments table holds no S_max/SS_max rows")
    ax.set_xlabel(spec.xlabel or "n")
    ax.set_ylabel(spec.ylabel or "moment$^{1/q}$")
    ax.legend(loc="upper left")


def _w_columns(cols, path):
    names = [k for k in cols if k.startswith("W") and not k.startswith("WW")]
    if not names:
        raise SchemaError(f"{path}: missing required column 'W0'")
    return sorted(names)


def _fig_qq_normal(spec: FigureSpec, ax):
    path = _csv_input(spec)
    cols = read_table(path, ["path_id", "t"])
    wname = _w_columns(cols, path)[0]
    t = cols["t"]
    w1 = cols[wname][t == t.max()]
    var = None
    jpath = _json_input(spec)
    if jpath:
        with open(jpath) as f:
            report = json.load(f)
        sig = report.get("sigma_consensus")
        if sig is not None:
            var = float(np.asarray(sig).reshape(-1)[0])
    if var is None:
        var = float(np.var(w1, ddof=1))
    sd = np.sqrt(max(var, 1e-300))
    w_sorted = np.sort(w1)
    m = len(w_sorted)
    probs = (np.arange(1, m + 1) - 0.5) / m
    theo = sd * np.sqrt(2.0) * erfinv(2.0 * probs - 1.0)
    ax.plot(theo, w_sorted, ".", ms=2, label=f"W(1) vs N(0, {var:.4g})")
    lim = [min(theo[0], w_sorted[0]), max(theo[-1], w_sorted[-1])]
    ax.plot(lim, lim, "k--", alpha=0.6, label="identity")
    ax.set_xlabel(spec.xlabel or "normal quantiles")
    ax.set_ylabel(spec.ylabel or "empirical quantiles")
    ax.legend(loc="upper left")


def _fig_hist_density(spec: FigureSpec, ax):
    cols = read_table(_csv_input(spec), ["bin_center", "density"])
    ax.step(cols["bin_center"], cols["density"], where="mid")
    ax.set_xlabel(spec.xlabel or "x")
    ax.set_ylabel(spec.ylabel or "invariant density")


def _fig_path_ensemble(spec: FigureSpec, ax, max_paths: int = 50):
    path = _csv_input(spec)
    cols = read_table(path, ["path_id", "t"])
    wname = _w_columns(cols, path)[0]
    ids = cols["path_id"]
    t = cols["t"]
    w = cols[wname]
    shown = np.unique(ids)[:max_paths]
    for pid in shown:
        mask = ids == pid
        order = np.argsort(t[mask])
        ax.plot(t[mask][order], w[mask][order], color="C0", alpha=0.25, lw=0.7)
    grid = np.unique(t)
    mean = np.array([w[t == tg].mean() for tg in grid])
    ax.plot(grid, mean, color="C3", lw=2.0, label=f"mean over all paths ({len(shown)} shown)")
    ax.set_xlabel(spec.xlabel or "t")
    ax.set_ylabel(spec.ylabel or wname)
    ax.legend(loc="upper left")


def _fig_coeff_table(spec: FigureSpec, ax):
    cols = read_table(_csv_input(spec), ["method", "matrix", "i", "j", "value", "stderr"])
    rows = []
    for method in dict.fromkeys(cols["method"]):
        for matrix in ("sigma", "e"):
            mask = (cols["method"] == method) & (cols["matrix"] == matrix)
            for i, j, v, s in zip(
                cols["i"][mask], cols["j"][mask], cols["value"][mask], cols["stderr"][mask]
            ):
                rows.append([method, matrix, int(i), int(j), f"{v:.6g}", f"{s:.2g}"])
    if not rows:
        raise SchemaError("coefficients table is empty")
    ax.axis("off")
    table = ax.table(
        cellText=rows,
        colLabels=["method", "matrix", "i", "j", "value", "stderr"],
        loc="center",
        cellLoc="center",
    )
    table.auto_set_font_size(False)
    table.set_fontsize(8)
    table.scale(1.0, 1.2)


_BODIES = {
    "loglog_moments": _fig_loglog_moments,
    "qq_normal": _fig_qq_normal,
    "hist_density": _fig_hist_density,
    "path_ensemble": _fig_path_ensemble,
    "coeff_table": _fig_coeff_table,
}


def render(spec: FigureSpec) -> str:
    """Render one figure; returns the output path."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        try:
            _BODIES[spec.kind](spec, ax)
            out = Path(spec.output)
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out, format="png", metadata={"Software": "homog-figures"})
        finally:
            plt.close(fig)
    return str(spec.output)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="render", description=__doc__)
    ap.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    ap.add_argument("--in", dest="inputs", action="append", required=True,
                    help="input file; repeat for multiple inputs")
    ap.add_argument("--out", required=True)
    ap.add_argument("--xlabel", default="")
    ap.add_argument("--ylabel", default="")
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec(
            kind=args.kind, inputs=args.inputs, output=args.out,
            xlabel=args.xlabel, ylabel=args.ylabel,
        )
        render(spec)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
