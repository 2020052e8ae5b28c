"""Campaign orchestration: config files, subcommands, deterministic parallel
execution, CSV persistence, and checkpoint/resume.

Configuration is one INI-style file with flat key = value sections; all
quantities are dimensionless (unit circle, unit-variance noise).  Results
go to a versioned CSV whose first line carries the schema tag; the column
set is fixed and timestamps sit in a dedicated column so byte-level diffs
can exclude exactly one field.  Campaigns are split into fixed-size
replicate chunks with per-replicate seed streams, so output is identical
for any worker count, and completed chunks are checkpointed for resume.

Exit codes: 0 success, 1 failure/violation, 2 usage or config error,
3 partial results (budget exhausted).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import coupling as _coupling
from . import estimators as _est
from .domain import (
    BudgetError,
    ParabolicWindow,
    ScaleParams,
    cell_budget,
    window_grid,
)
from .kernel import heat_kernel, heat_kernel_image, heat_kernel_spectral
from .noise import SeedSpec
from .solver import affine_coefficient, constant_coefficient, sine_coefficient

SCHEMA_VERSION = "chung-lab-results-1"

CSV_COLUMNS = [
    "campaign_id",
    "subcommand",
    "config_hash",
    "seed_master",
    "replicate",
    "stream",
    "n",
    "r",
    "statistic",
    "value",
    "ci_low",
    "ci_high",
    "resolution",
    "timestamp",
]

# fixed chunk sizes keep results independent of the worker count
SMALLBALL_CHUNK = 1000
COUPLE_CHUNK = 100
CHUNG_CHUNK = 50

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARTIAL = 3

PRESETS = ("constant", "affine", "sine")


def make_coefficient(preset: str, c0: float, c1: float = 0.0):
    if preset == "constant":
        return constant_coefficient(c0)
    if preset == "affine":
        return affine_coefficient(c0, c1)
    if preset == "sine":
        return sine_coefficient(c0, c1)
    raise ValueError(f"unknown coefficient preset {preset!r} (choose from {PRESETS})")


def _spot_check_coefficient(coeff) -> None:
    """Verify the declared Lipschitz constant and bound on random pairs."""
    rng = np.random.default_rng(20260810)
    u = rng.uniform(-50.0, 50.0, size=256)
    v = rng.uniform(-50.0, 50.0, size=256)
    lhs = np.abs(coeff.eval(u) - coeff.eval(v))
    rhs = coeff.lipschitz * np.abs(u - v)
    if np.any(lhs > rhs * (1.0 + 1e-9) + 1e-12):
        raise ValueError(f"coefficient {coeff.tag} violates its declared Lipschitz constant")
    if coeff.bound is not None and np.any(np.abs(coeff.eval(u)) > coeff.bound * (1.0 + 1e-9)):
        raise ValueError(f"coefficient {coeff.tag} violates its declared bound")


@dataclass
class CampaignConfig:
    campaign_id: str
    master_seed: int
    outdir: Path
    preset: str
    c0: float
    c1: float
    scales: ScaleParams
    points_per_axis: int
    resolutions: tuple
    max_cells: int | None
    max_seconds: float
    smallball_n: int
    smallball_lambdas: tuple
    smallball_modes: tuple
    smallball_trials: int
    smallball_fit: bool
    couple_trials: int
    couple_tol: float
    couple_verify_every: int
    chung_trials: int
    bm_epsilons: tuple
    bm_paths: int
    bm_steps: int
    bm_mc: bool

    def coefficient(self):
        return make_coefficient(self.preset, self.c0, self.c1)

    def hash_fields(self) -> list[tuple[str, str]]:
        """Everything semantically meaningful, in canonical order; the output
        directory and runtime knobs (workers, resume) are excluded."""
        items = [
            ("campaign_id", self.campaign_id),
            ("master_seed", str(self.master_seed)),
            ("preset", self.preset),
            ("c0", repr(self.c0)),
            ("c1", repr(self.c1)),
            ("a", repr(self.scales.a)),
            ("n_min", str(self.scales.n_min)),
            ("n_max", str(self.scales.n_max)),
            ("epsilon", repr(self.scales.epsilon)),
            ("points_per_axis", str(self.points_per_axis)),
            ("resolutions", ",".join(map(str, self.resolutions))),
            ("max_cells", str(self.max_cells)),
            ("smallball_n", str(self.smallball_n)),
            ("smallball_lambdas", ",".join(repr(x) for x in self.smallball_lambdas)),
            ("smallball_modes", ",".join(self.smallball_modes)),
            ("smallball_trials", str(self.smallball_trials)),
            ("smallball_fit", str(self.smallball_fit)),
            ("couple_trials", str(self.couple_trials)),
            ("couple_tol", repr(self.couple_tol)),
            ("couple_verify_every", str(self.couple_verify_every)),
            ("chung_trials", str(self.chung_trials)),
            ("bm_epsilons", ",".join(repr(x) for x in self.bm_epsilons)),
            ("bm_paths", str(self.bm_paths)),
            ("bm_steps", str(self.bm_steps)),
            ("bm_mc", str(self.bm_mc)),
        ]
        return items

    @property
    def config_hash(self) -> str:
        blob = "\n".join(f"{k}={v}" for k, v in self.hash_fields())
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _floats(raw: str) -> tuple:
    return tuple(float(tok) for tok in raw.split())


def load_config(path, seed_override: int | None = None, out_override: str | None = None) -> CampaignConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")

    camp = parser["campaign"] if parser.has_section("campaign") else {}
    coef = parser["coefficient"] if parser.has_section("coefficient") else {}
    scal = parser["scales"] if parser.has_section("scales") else {}
    grid = parser["grid"] if parser.has_section("grid") else {}
    budg = parser["budget"] if parser.has_section("budget") else {}
    ball = parser["smallball"] if parser.has_section("smallball") else {}
    coup = parser["couple"] if parser.has_section("couple") else {}
    scan = parser["chung-scan"] if parser.has_section("chung-scan") else {}
    bmor = parser["bm-oracle"] if parser.has_section("bm-oracle") else {}

    scales = ScaleParams(
        a=float(scal.get("a", "2.0")),
        n_min=int(scal.get("n_min", "3")),
        n_max=int(scal.get("n_max", "6")),
        epsilon=float(scal.get("epsilon", "0.5")),
    )
    cfg = CampaignConfig(
        campaign_id=str(camp.get("id", "campaign")),
        master_seed=int(camp.get("master_seed", "1")) if seed_override is None else int(seed_override),
        outdir=Path(out_override if out_override is not None else camp.get("outdir", "out")),
        preset=str(coef.get("preset", "constant")),
        c0=float(coef.get("c0", "1.0")),
        c1=float(coef.get("c1", "0.0")),
        scales=scales,
        points_per_axis=int(grid.get("points_per_axis", "16")),
        resolutions=tuple(int(tok) for tok in grid.get("resolutions", "1 2").split()),
        max_cells=int(budg["max_cells"]) if "max_cells" in budg else None,
        max_seconds=float(budg.get("max_seconds", "0")),
        smallball_n=int(ball.get("n", "2")),
        smallball_lambdas=_floats(ball.get("lambdas", "0.5 1 1.5 2 2.5 3 3.5 4")),
        smallball_modes=tuple(ball.get("modes", "exceedance").split()),
        smallball_trials=int(ball.get("trials", "1000")),
        smallball_fit=ball.get("fit", "true").strip().lower() in ("1", "true", "yes"),
        couple_trials=int(coup.get("trials", "200")),
        couple_tol=float(coup.get("divergence_tol", "1e-9")),
        couple_verify_every=int(coup.get("verify_every", "16")),
        chung_trials=int(scan.get("trials", "100")),
        bm_epsilons=_floats(bmor.get("epsilons", "0.75 1.0")),
        bm_paths=int(bmor.get("paths", "100000")),
        bm_steps=int(bmor.get("steps", "10000")),
        bm_mc=bmor.get("mc", "false").strip().lower() in ("1", "true", "yes"),
    )
    _spot_check_coefficient(cfg.coefficient())
    for mode in cfg.smallball_modes:
        if mode not in (_est.EXCEEDANCE, _est.CONTAINMENT):
            raise ValueError(f"unknown smallball mode {mode!r}")
    return cfg


# ---------------------------------------------------------------------------
# result rows


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


@dataclass
class ResultRow:
    campaign_id: str
    subcommand: str
    config_hash: str
    seed_master: int
    replicate: int
    stream: int
    n: int | None
    r: float | None
    statistic: str
    value: float
    ci_low: float | None = None
    ci_high: float | None = None
    resolution: str = ""
    timestamp: str = field(default_factory=_utcnow)

    def astuple(self) -> tuple:
        return (
            self.campaign_id,
            self.subcommand,
            self.config_hash,
            _fmt(self.seed_master),
            _fmt(self.replicate),
            _fmt(self.stream),
            _fmt(self.n),
            _fmt(self.r),
            self.statistic,
            _fmt(self.value),
            _fmt(self.ci_low),
            _fmt(self.ci_high),
            self.resolution,
            self.timestamp,
        )

    def sort_key(self) -> tuple:
        return (
            self.subcommand,
            self.n if self.n is not None else -1,
            self.resolution,
            self.replicate,
            self.statistic,
        )


def write_rows(path, rows) -> None:
    rows = sorted(rows, key=ResultRow.sort_key)
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.astuple())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def read_rows(path) -> list[dict]:
    """Parse a results CSV back to dicts; refuses unknown schema versions."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# schema="):
        raise ValueError(f"{path}: missing schema line")
    version = text[0].split("=", 1)[1].strip()
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unknown schema version {version!r}")
    reader = csv.DictReader(io.StringIO("\n".join(text[1:])))
    return list(reader)


# ---------------------------------------------------------------------------
# checkpointing


class Checkpoint:
    """Append-only JSONL ledger of completed chunks, keyed by config hash."""

    def __init__(self, path, config_hash: str):
        self.path = Path(path)
        self.config_hash = config_hash

    def load(self) -> dict:
        done = {}
        if not self.path.exists():
            return done
        for line in self.path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("config_hash") == self.config_hash:
                done[rec["key"]] = rec["payload"]
        return done

    def add(self, key: str, payload) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps({"config_hash": self.config_hash, "key": key, "payload": payload}) + "\n")


# ---------------------------------------------------------------------------
# chunked execution (workers share nothing; chunks are pure functions of
# their descriptors, so any schedule yields identical results)


def _run_chunks(worker, descriptors, workers: int):
    """Map `worker` over chunk descriptors, preserving order."""
    if workers <= 1 or len(descriptors) <= 1:
        return [worker(d) for d in descriptors]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, descriptors))


def _smallball_chunk(d: dict) -> list:
    coeff = make_coefficient(d["preset"], d["c0"], d["c1"])
    window = ParabolicWindow(d["r"])
    grid = window_grid(window, d["ppa"], max_cells=d["max_cells"])
    seed = SeedSpec(d["master_seed"], d["rep_start"], _est.SMALLBALL_STREAM)
    sups = _est.window_sup_sample(coeff, window, d["count"], seed, grid=grid, max_cells=d["max_cells"])
    return sups.tolist()


def _couple_chunk(d: dict) -> dict:
    coeff = make_coefficient(d["preset"], d["c0"], d["c1"])
    window = ParabolicWindow(d["r"])
    grid = window_grid(window, d["ppa"], max_cells=d["max_cells"])
    seed = SeedSpec(d["master_seed"], d["rep_start"], _coupling.coupling_stream_label(d["n"]))
    block = _coupling.run_coupling_block(
        coeff,
        window,
        grid,
        d["eps"],
        seed,
        d["count"],
        tol=d["tol"],
        verify_every=d["verify_every"],
    )
    return {
        "replicates": block.replicates.tolist(),
        "tau_index": block.tau_index.tolist(),
        "fn_failed": block.fn_failed.tolist(),
        "sup_D": block.sup_D.tolist(),
        "supD_exceeds": block.supD_exceeds.tolist(),
        "diverged": block.diverged.tolist(),
        "frozen_rel_err": [None if math.isnan(x) else x for x in block.frozen_rel_err.tolist()],
        "clip_fired": block.clip_fired.tolist(),
    }


def _chung_chunk(d: dict) -> list:
    coeff = make_coefficient(d["preset"], d["c0"], d["c1"])
    window = ParabolicWindow(d["r"])
    method = "exact" if coeff.lipschitz == 0.0 else "fd"
    time_rule = "axis" if method == "exact" else "dx2"
    grid = window_grid(window, d["ppa"], d["res"], time_rule=time_rule, max_cells=d["max_cells"])
    seed = SeedSpec(d["master_seed"], d["rep_start"], _est.chung_stream_label(d["n"], d["res"]))
    sups = _est.window_sup_sample(coeff, window, d["count"], seed, grid=grid, method=method, max_cells=d["max_cells"])
    return sups.tolist()


def _chunk_ranges(total: int, size: int):
    return [(lo, min(size, total - lo)) for lo in range(0, total, size)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_kernel_check(cfg: CampaignConfig, workers: int = 1, resume: bool = False) -> int:
    """Mass, semigroup, and cross-representation identities of the kernel."""
    failures = 0
    xs = (np.arange(4096) + 0.5) / 4096

    for t in (1e-4, 1e-2, 1.0):
        mass = float(np.mean(heat_kernel(t, xs)))
        err = abs(mass - 1.0)
        ok = err < 1e-8
        failures += 0 if ok else 1
        print(f"kernel-check mass t={t:g}: err={err:.3e} {'PASS' if ok else 'FAIL'}")

    for s, t in ((1e-4, 5e-4), (0.01, 0.02), (0.05, 0.2)):
        worst = 0.0
        for x in (0.0, 0.3, 0.7713):
            conv = float(np.mean(heat_kernel(s, x - xs) * heat_kernel(t, xs)))
            worst = max(worst, abs(conv - heat_kernel(s + t, x)))
        ok = worst < 1e-8
        failures += 0 if ok else 1
        print(f"kernel-check semigroup s={s:g} t={t:g}: err={worst:.3e} {'PASS' if ok else 'FAIL'}")

    rng = np.random.default_rng(cfg.master_seed)
    ts = np.exp(rng.uniform(math.log(1e-4), math.log(1.0), size=100))
    xr = rng.uniform(0.0, 1.0, size=100)
    worst = max(abs(heat_kernel_image(t, x) - heat_kernel_spectral(t, x)) for t, x in zip(ts, xr))
    ok = worst < 1e-12
    failures += 0 if ok else 1
    print(f"kernel-check cross-representation (100 samples): err={worst:.3e} {'PASS' if ok else 'FAIL'}")

    try:
        heat_kernel(-1.0, 0.0)
        failures += 1
        print("kernel-check negative-t rejection: FAIL (no error raised)")
    except ValueError:
        print("kernel-check negative-t rejection: PASS")

    return EXIT_OK if failures == 0 else EXIT_FAIL


def cmd_smallball(cfg: CampaignConfig, workers: int = 1, resume: bool = False) -> int:
    if not cfg.smallball_lambdas:
        raise ValueError("empty lambda grid")
    r = cfg.scales.a ** (-cfg.smallball_n)
    window = ParabolicWindow(r)
    grid = window_grid(window, cfg.points_per_axis, max_cells=cfg.max_cells)
    coeff = cfg.coefficient()
    out = cfg.outdir / f"{cfg.campaign_id}_smallball.csv"
    ckpt = Checkpoint(cfg.outdir / f"{cfg.campaign_id}_smallball.ckpt.jsonl", cfg.config_hash)
    done = ckpt.load() if resume else {}

    chunks = _chunk_ranges(cfg.smallball_trials, SMALLBALL_CHUNK)
    sups_parts = {}
    todo = []
    for lo, count in chunks:
        key = f"rep{lo}"
        if key in done:
            sups_parts[lo] = done[key]
        else:
            todo.append(
                dict(
                    preset=cfg.preset,
                    c0=cfg.c0,
                    c1=cfg.c1,
                    r=r,
                    ppa=cfg.points_per_axis,
                    master_seed=cfg.master_seed,
                    rep_start=lo,
                    count=count,
                    max_cells=cfg.max_cells,
                )
            )
    results = _run_chunks(_smallball_chunk, todo, workers)
    for d, res in zip(todo, results):
        ckpt.add(f"rep{d['rep_start']}", res)
        sups_parts[d["rep_start"]] = res

    sups = np.concatenate([np.asarray(sups_parts[lo]) for lo, _ in chunks])
    rows = []
    estimates = {mode: [] for mode in cfg.smallball_modes}
    for mode in cfg.smallball_modes:
        for lam in cfg.smallball_lambdas:
            est = _est.tally_small_ball(sups, window, lam, mode, grid, coeff.tag)
            estimates[mode].append(est)
            short = "exceed" if mode == _est.EXCEEDANCE else "contain"
            rows.append(_row(cfg, "smallball", f"p_{short}@{lam:g}", est.p_hat, n=cfg.smallball_n, r=r, ci=(est.ci_low, est.ci_high)))
            rows.append(_row(cfg, "smallball", f"hits_{short}@{lam:g}", float(est.hits), n=cfg.smallball_n, r=r))
    rows.append(_row(cfg, "smallball", "trials", float(len(sups)), n=cfg.smallball_n, r=r))
    if cfg.smallball_fit and _est.EXCEEDANCE in estimates:
        try:
            fit = _est.fit_tail_exponent(estimates[_est.EXCEEDANCE])
            rows.append(_row(cfg, "smallball", "tailfit_slope", fit.slope, n=cfg.smallball_n, r=r))
            rows.append(_row(cfg, "smallball", "tailfit_intercept", fit.intercept, n=cfg.smallball_n, r=r))
        except ValueError as err:
            print(f"smallball: tail fit skipped ({err})")
    write_rows(out, rows)
    print(f"smallball: wrote {out}")
    return EXIT_OK


def cmd_tailfit(cfg: CampaignConfig, workers: int = 1, resume: bool = False, source: str | None = None) -> int:
    """Fit-only pass over an existing smallball CSV."""
    src = Path(source) if source else cfg.outdir / f"{cfg.campaign_id}_smallball.csv"
    parsed = read_rows(src)
    trials = None
    hits = {}
    meta = {}
    for rec in parsed:
        stat = rec["statistic"]
        if stat == "trials":
            trials = int(float(rec["value"]))
        elif stat.startswith("hits_exceed@"):
            lam = float(stat.split("@", 1)[1])
            hits[lam] = float(rec["value"])
            meta[lam] = rec
    if trials is None or not hits:
        print(f"tailfit: no exceedance tallies in {src}")
        return EXIT_FAIL
    sample = next(iter(meta.values()))
    window = ParabolicWindow(float(sample["r"]))
    grid = window_grid(window, cfg.points_per_axis, max_cells=cfg.max_cells)
    ests = [
        _est.SmallBallEstimate(window=window, lam=lam, mode=_est.EXCEEDANCE, trials=trials, hits=h, grid=grid, coefficient="csv")
        for lam, h in sorted(hits.items())
    ]
    fit = _est.fit_tail_exponent(ests)
    rows = [
        _row(cfg, "tailfit", "tailfit_slope", fit.slope, n=int(sample["n"]), r=float(sample["r"])),
        _row(cfg, "tailfit", "tailfit_intercept", fit.intercept, n=int(sample["n"]), r=float(sample["r"])),
        _row(cfg, "tailfit", "tailfit_goodness", fit.goodness, n=int(sample["n"]), r=float(sample["r"])),
    ]
    out = cfg.outdir / f"{cfg.campaign_id}_tailfit.csv"
    write_rows(out, rows)
    print(f"tailfit: slope={fit.slope:.6g} intercept={fit.intercept:.6g} -> {out}")
    return EXIT_OK


def cmd_couple(cfg: CampaignConfig, workers: int = 1, resume: bool = False) -> int:
    coeff = cfg.coefficient()
    if coeff.sigma0 == 0.0:
        raise ValueError("coupling campaigns need sigma(0) != 0")
    out = cfg.outdir / f"{cfg.campaign_id}_couple.csv"
    ckpt = Checkpoint(cfg.outdir / f"{cfg.campaign_id}_couple.ckpt.jsonl", cfg.config_hash)
    done = ckpt.load() if resume else {}
    start = time.monotonic()

    rows = []
    partial = False
    for n in cfg.scales.indices():
        r = cfg.scales.r(n)
        window = ParabolicWindow(r)
        try:
            window_grid(window, cfg.points_per_axis, max_cells=cfg.max_cells)
        except BudgetError as err:
            rows.append(_row(cfg, "couple", "budget_exceeded", 1.0, n=n, r=r))
            print(f"couple: n={n} skipped ({err})")
            partial = True
            continue
        if cfg.max_seconds and time.monotonic() - start > cfg.max_seconds:
            rows.append(_row(cfg, "couple", "budget_time_exceeded", 1.0, n=n, r=r))
            partial = True
            continue

        parts = {}
        todo = []
        for lo, count in _chunk_ranges(cfg.couple_trials, COUPLE_CHUNK):
            key = f"n{n}_rep{lo}"
            if key in done:
                parts[lo] = done[key]
            else:
                todo.append(
                    dict(
                        preset=cfg.preset,
                        c0=cfg.c0,
                        c1=cfg.c1,
                        r=r,
                        n=n,
                        ppa=cfg.points_per_axis,
                        eps=cfg.scales.epsilon,
                        master_seed=cfg.master_seed,
                        rep_start=lo,
                        count=count,
                        tol=cfg.couple_tol,
                        verify_every=cfg.couple_verify_every,
                        max_cells=cfg.max_cells,
                    )
                )
        results = _run_chunks(_couple_chunk, todo, workers)
        for d, res in zip(todo, results):
            ckpt.add(f"n{n}_rep{d['rep_start']}", res)
            parts[d["rep_start"]] = res

        stream = _coupling.coupling_stream_label(n)
        agg = {"diverged": 0, "fn_failed": 0, "supD_exceeds": 0}
        total = 0
        frozen_worst = 0.0
        for lo, _ in _chunk_ranges(cfg.couple_trials, COUPLE_CHUNK):
            blk = parts[lo]
            for i, rep in enumerate(blk["replicates"]):
                rows.append(_row(cfg, "couple", "sup_D", blk["sup_D"][i], n=n, r=r, replicate=int(rep), stream=stream))
                rows.append(_row(cfg, "couple", "tau_step", float(blk["tau_index"][i]), n=n, r=r, replicate=int(rep), stream=stream))
                rows.append(_row(cfg, "couple", "trunc_diverged", float(blk["diverged"][i]), n=n, r=r, replicate=int(rep), stream=stream))
            agg["diverged"] += int(sum(blk["diverged"]))
            agg["fn_failed"] += int(sum(blk["fn_failed"]))
            agg["supD_exceeds"] += int(sum(blk["supD_exceeds"]))
            total += len(blk["replicates"])
            frozen_worst = max(frozen_worst, max((x for x in blk["frozen_rel_err"] if x is not None), default=0.0))
        for stat, hits in (("freq_trunc_div", agg["diverged"]), ("freq_Fn_fail", agg["fn_failed"]), ("freq_supD_exceed", agg["supD_exceeds"])):
            lo_ci, hi_ci = _est.wilson_interval(hits, total)
            rows.append(_row(cfg, "couple", stat, hits / total, n=n, r=r, ci=(lo_ci, hi_ci)))
        rows.append(_row(cfg, "couple", "frozen_rel_err_max", frozen_worst, n=n, r=r))
        print(f"couple: n={n} done ({total} replicates)")

    write_rows(out, rows)
    print(f"couple: wrote {out}")
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_chung_scan(cfg: CampaignConfig, workers: int = 1, resume: bool = False) -> int:
    coeff = cfg.coefficient()
    if coeff.sigma0 == 0.0:
        raise ValueError("scan campaigns need sigma(0) != 0")
    out = cfg.outdir / f"{cfg.campaign_id}_chung-scan.csv"
    ckpt = Checkpoint(cfg.outdir / f"{cfg.campaign_id}_chung-scan.ckpt.jsonl", cfg.config_hash)
    done = ckpt.load() if resume else {}
    start = time.monotonic()

    rows = []
    partial = False
    running = {res: math.inf for res in cfg.resolutions}
    for n in cfg.scales.indices():
        r = cfg.scales.r(n)
        window = ParabolicWindow(r)
        for res in cfg.resolutions:
            method = "exact" if coeff.lipschitz == 0.0 else "fd"
            try:
                window_grid(window, cfg.points_per_axis, res, time_rule="axis" if method == "exact" else "dx2", max_cells=cfg.max_cells)
            except BudgetError as err:
                rows.append(_row(cfg, "chung-scan", "budget_exceeded", 1.0, n=n, r=r, resolution=f"x{res}"))
                print(f"chung-scan: n={n} x{res} skipped ({err})")
                partial = True
                continue
            if cfg.max_seconds and time.monotonic() - start > cfg.max_seconds:
                rows.append(_row(cfg, "chung-scan", "budget_time_exceeded", 1.0, n=n, r=r, resolution=f"x{res}"))
                partial = True
                continue
            parts = {}
            todo = []
            for lo, count in _chunk_ranges(cfg.chung_trials, CHUNG_CHUNK):
                key = f"n{n}_x{res}_rep{lo}"
                if key in done:
                    parts[lo] = done[key]
                else:
                    todo.append(
                        dict(
                            preset=cfg.preset,
                            c0=cfg.c0,
                            c1=cfg.c1,
                            r=r,
                            n=n,
                            res=res,
                            ppa=cfg.points_per_axis,
                            master_seed=cfg.master_seed,
                            rep_start=lo,
                            count=count,
                            max_cells=cfg.max_cells,
                        )
                    )
            results = _run_chunks(_chung_chunk, todo, workers)
            for d, resu in zip(todo, results):
                ckpt.add(f"n{n}_x{res}_rep{d['rep_start']}", resu)
                parts[d["rep_start"]] = resu
            sups = np.concatenate([np.asarray(parts[lo]) for lo, _ in _chunk_ranges(cfg.chung_trials, CHUNG_CHUNK)])
            entry = _est.scan_entry_from_samples(sups, n, r, res, method)
            tag = f"x{res}"
            stream = _est.chung_stream_label(n, res)
            for stat, val in (
                ("S_min", entry.s_min),
                ("S_q1", entry.s_q1),
                ("S_median", entry.s_median),
                ("S_q3", entry.s_q3),
                ("S_max", entry.s_max),
            ):
                rows.append(_row(cfg, "chung-scan", stat, val, n=n, r=r, resolution=tag, stream=stream))
            running[res] = min(running[res], entry.s_median)
            rows.append(_row(cfg, "chung-scan", "S_runmin_median", running[res], n=n, r=r, resolution=tag, stream=stream))
            print(f"chung-scan: n={n} x{res} median S={entry.s_median:.4f}")

    write_rows(out, rows)
    print(f"chung-scan: wrote {out}")
    return EXIT_PARTIAL if partial else EXIT_OK


def cmd_bm_oracle(cfg: CampaignConfig, workers: int = 1, resume: bool = False) -> int:
    if not cfg.bm_epsilons:
        raise ValueError("empty epsilon list")
    eps = sorted(cfg.bm_epsilons)
    rows = []
    print(f"{'epsilon':>10} {'series':>14}" + (f" {'mc':>10} {'ci_low':>10} {'ci_high':>10} {'allowance':>10}" if cfg.bm_mc else ""))
    checks = _est.bm_smallball_mc(eps, cfg.bm_paths, cfg.bm_steps, cfg.master_seed) if cfg.bm_mc else None
    for i, e in enumerate(eps):
        series = _est.bm_smallball_oracle(e)
        rows.append(_row(cfg, "bm-oracle", f"bm_series@{e:g}", series))
        if checks is not None:
            chk = checks[i]
            lo_ci, hi_ci = chk.ci
            rows.append(_row(cfg, "bm-oracle", f"bm_mc@{e:g}", chk.p_hat, ci=(lo_ci, hi_ci)))
            rows.append(_row(cfg, "bm-oracle", f"bm_allowance@{e:g}", chk.allowance))
            print(f"{e:>10g} {series:>14.8f} {chk.p_hat:>10.6f} {lo_ci:>10.6f} {hi_ci:>10.6f} {chk.allowance:>10.6f}")
        else:
            print(f"{e:>10g} {series:>14.8f}")
    out = cfg.outdir / f"{cfg.campaign_id}_bm-oracle.csv"
    write_rows(out, rows)
    print(f"bm-oracle: wrote {out}")
    return EXIT_OK


def _row(cfg: CampaignConfig, sub: str, stat: str, value: float, n: int | None = None, r: float | None = None, replicate: int = -1, stream: int = -1, ci=(None, None), resolution: str = "") -> ResultRow:
    return ResultRow(
        campaign_id=cfg.campaign_id,
        subcommand=sub,
        config_hash=cfg.config_hash,
        seed_master=cfg.master_seed,
        replicate=replicate,
        stream=stream,
        n=n,
        r=r,
        statistic=stat,
        value=value,
        ci_low=ci[0],
        ci_high=ci[1],
        resolution=resolution,
    )


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = {
    "kernel-check": cmd_kernel_check,
    "smallball": cmd_smallball,
    "tailfit": cmd_tailfit,
    "couple": cmd_couple,
    "chung-scan": cmd_chung_scan,
    "bm-oracle": cmd_bm_oracle,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chung-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="campaign config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--workers", type=int, default=os.cpu_count(), help="worker processes")
        p.add_argument("--resume", action="store_true", help="resume from checkpoints")
        p.add_argument("--out", default=None, help="override the output directory")
        if name == "tailfit":
            p.add_argument("--in", dest="source", default=None, help="existing smallball CSV")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        kwargs = {}
        if args.command == "tailfit":
            kwargs["source"] = args.source
        return _COMMANDS[args.command](cfg, workers=args.workers, resume=args.resume, **kwargs)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
