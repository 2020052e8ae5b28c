"""The four figure kinds and their sidecar summaries.

Each renderer reads already-parsed result rows, draws one figure, and
returns the lines of its sidecar summary (every fitted or derived number
in the figure appears there).  Rendering never mutates inputs and is
deterministic for identical input bytes and spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .reader import fvalue, read_results


class EmptySelectionError(ValueError):
    """No rows matched the figure kind's statistics."""


@dataclass(frozen=True)
class PlotSpec:
    source: Path
    kind: str
    out: Path
    dpi: int = 120
    style: dict = field(default_factory=dict)


def _stat_suffix(rows, prefix):
    """Rows whose statistic is '<prefix>@<x>', keyed by float x."""
    out = {}
    for row in rows:
        stat = row["statistic"]
        if stat.startswith(prefix + "@"):
            out[float(stat.split("@", 1)[1])] = row
    return out


def _weighted_tail_fit(lambdas, hits, trials):
    """Weighted least squares of log(h/n) on lambda^2, weights n*h/(n-h)."""
    lam = np.asarray(lambdas)
    h = np.asarray(hits)
    n = np.asarray(trials, dtype=float)
    y = np.log(h / n)
    w = n * h / np.maximum(n - h, 0.5)
    A = np.column_stack([np.ones_like(lam), lam**2])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    return float(coef[1]), float(coef[0])  # slope, intercept


def _render_tailfit(rows, ax):
    p_rows = _stat_suffix(rows, "p_exceed")
    h_rows = _stat_suffix(rows, "hits_exceed")
    trials_rows = [r for r in rows if r["statistic"] == "trials"]
    if not p_rows or not h_rows or not trials_rows:
        raise EmptySelectionError("no exceedance tallies in input")
    trials = fvalue(trials_rows[0])
    lams, hits = [], []
    for lam in sorted(h_rows):
        h = fvalue(h_rows[lam])
        if 0 < h < trials:
            lams.append(lam)
            hits.append(h)
    if len(lams) < 2:
        raise EmptySelectionError("fewer than two usable tally points")
    slope, intercept = _weighted_tail_fit(lams, hits, [trials] * len(lams))

    lam_arr = np.asarray(sorted(p_rows))
    p_arr = np.asarray([fvalue(p_rows[l]) for l in lam_arr])
    ok = p_arr > 0
    ax.semilogy(lam_arr[ok] ** 2, p_arr[ok], "o", label="tallied p")
    ci_lo = np.asarray([float(p_rows[l]["ci_low"] or "nan") for l in lam_arr])
    ci_hi = np.asarray([float(p_rows[l]["ci_high"] or "nan") for l in lam_arr])
    if np.isfinite(ci_lo[ok]).all():
        ax.fill_between(lam_arr[ok] ** 2, np.maximum(ci_lo[ok], 1e-300), ci_hi[ok], alpha=0.2, label="95% Wilson")
    xs = np.linspace(min(lams) ** 2, max(lams) ** 2, 100)
    ax.semilogy(xs, np.exp(intercept + slope * xs), "-", label=f"fit slope {slope:.4f}")
    ax.set_xlabel("lambda^2")
    ax.set_ylabel("P(sup > lambda r)")
    ax.legend()
    return [
        f"kind = tailfit",
        f"points_used = {len(lams)}",
        f"lambdas_used = {lams}",
        f"trials = {trials:g}",
        f"slope = {slope!r}",
        f"intercept = {intercept!r}",
    ]


def _render_chung_scan(rows, ax):
    per = {}
    for row in rows:
        stat = row["statistic"]
        if stat in ("S_min", "S_q1", "S_median", "S_q3", "S_max", "S_runmin_median"):
            key = (row["resolution"], int(row["n"]))
            per.setdefault(key, {})[stat] = fvalue(row)
    if not per:
        raise EmptySelectionError("no scan statistics in input")
    resolutions = sorted({res for res, _ in per})
    lines = ["kind = chung-scan", f"resolutions = {resolutions}"]
    for res in resolutions:
        ns = sorted(n for r, n in per if r == res)
        med = [per[(res, n)]["S_median"] for n in ns]
        q1 = [per[(res, n)]["S_q1"] for n in ns]
        q3 = [per[(res, n)]["S_q3"] for n in ns]
        ax.plot(ns, med, "o-", label=f"median ({res})")
        ax.fill_between(ns, q1, q3, alpha=0.2)
        if all("S_runmin_median" in per[(res, n)] for n in ns):
            runmin = [per[(res, n)]["S_runmin_median"] for n in ns]
            ax.plot(ns, runmin, "--", label=f"running min ({res})")
            lines.append(f"running_min[{res}] = {runmin}")
        for n in ns:
            lines.append(f"S[{res}, n={n}] = " + ", ".join(f"{k}={per[(res, n)][k]!r}" for k in sorted(per[(res, n)])))
    ax.set_xlabel("scale index n")
    ax.set_ylabel("S_n = sup / f(r_n)")
    ax.legend()
    return lines


def _render_coupling_decay(rows, ax):
    stats = ("freq_trunc_div", "freq_Fn_fail", "freq_supD_exceed")
    series = {s: {} for s in stats}
    for row in rows:
        if row["statistic"] in stats:
            series[row["statistic"]][int(row["n"])] = (
                fvalue(row),
                float(row["ci_low"] or "nan"),
                float(row["ci_high"] or "nan"),
            )
    if not any(series.values()):
        raise EmptySelectionError("no coupling frequencies in input")
    lines = ["kind = coupling-decay"]
    for stat in stats:
        if not series[stat]:
            continue
        ns = sorted(series[stat])
        vals = np.array([series[stat][n][0] for n in ns])
        lo = np.array([series[stat][n][1] for n in ns])
        hi = np.array([series[stat][n][2] for n in ns])
        ax.errorbar(ns, vals, yerr=[vals - lo, hi - vals], fmt="o-", capsize=3, label=stat)
        lines.append(f"{stat} = " + ", ".join(f"n{n}:{series[stat][n][0]!r}" for n in ns))
        pos = [(n, v) for n, v in zip(ns, vals) if v > 0]
        if len(pos) >= 2:
            xs = np.array([n for n, _ in pos], dtype=float)
            ys = np.log([v for _, v in pos])
            coef = np.polyfit(xs, ys, 1)
            lines.append(f"{stat}_log_decay_per_n = {float(coef[0])!r}")
    ax.set_xlabel("scale index n")
    ax.set_ylabel("event frequency")
    ax.legend()
    return lines


def _render_bm_oracle(rows, ax):
    series = _stat_suffix(rows, "bm_series")
    mc = _stat_suffix(rows, "bm_mc")
    allow = _stat_suffix(rows, "bm_allowance")
    if not series:
        raise EmptySelectionError("no oracle rows in input")
    eps = sorted(series)
    sv = [fvalue(series[e]) for e in eps]
    ax.plot(eps, sv, "s-", label="reflection series")
    lines = ["kind = bm-oracle"]
    for e in eps:
        lines.append(f"series@{e:g} = {fvalue(series[e])!r}")
    if mc:
        ems = sorted(mc)
        vals = np.array([fvalue(mc[e]) for e in ems])
        lo = np.array([float(mc[e]["ci_low"]) for e in ems])
        hi = np.array([float(mc[e]["ci_high"]) for e in ems])
        ax.errorbar(ems, vals, yerr=np.vstack([vals - lo, hi - vals]), fmt="o", capsize=3, label="Monte Carlo")
        for e in ems:
            lines.append(f"mc@{e:g} = {fvalue(mc[e])!r}")
            if e in allow:
                lines.append(f"allowance@{e:g} = {fvalue(allow[e])!r}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("P(sup |B| <= epsilon)")
    ax.legend()
    return lines


FIGURE_KINDS = {
    "tailfit": _render_tailfit,
    "chung-scan": _render_chung_scan,
    "coupling-decay": _render_coupling_decay,
    "bm-oracle": _render_bm_oracle,
}


def render(spec: PlotSpec) -> Path:
    """Render one figure and its sidecar summary; returns the image path."""
    if spec.kind not in FIGURE_KINDS:
        raise ValueError(f"unknown figure kind {spec.kind!r} (choose from {sorted(FIGURE_KINDS)})")
    rows = read_results(spec.source)
    fig, ax = plt.subplots(figsize=spec.style.get("figsize", (6.0, 4.0)))
    try:
        lines = FIGURE_KINDS[spec.kind](rows, ax)
        ax.set_title(spec.style.get("title", f"{spec.kind}: {Path(spec.source).name}"))
        fig.tight_layout()
        out = Path(spec.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, dpi=spec.dpi, metadata={"Software": "chung-lab-plots"})
    finally:
        plt.close(fig)
    sidecar = out.with_name(out.name + ".txt")
    sidecar.write_text("\n".join([f"source = {spec.source}"] + lines) + "\n")
    return out
