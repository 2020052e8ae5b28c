"""Monte Carlo estimation layer.

Small-ball and tail probabilities over parabolic windows with Wilson
confidence intervals, weighted tail-exponent regression on the lambda^2
scale, the scan statistic S_n = sup/f(r_n) across geometric scales, and
the classical Brownian-motion reflection-series oracle used to calibrate
the whole harness.

Replication is keyed by (master_seed, replicate, stream): every replicate
owns an independent stream, so shards merge associatively and results do
not depend on how work was split across processes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .domain import BudgetError, GridSpec, ParabolicWindow, ScaleParams, chung_normalizer, window_grid, E_INV
from .noise import NoiseGrid, SeedSpec, generator, sample_noise
from .solver import solve_linear_exact, solve_spde, sup_on_window

# two-sided and one-sided 95% normal quantiles
Z95 = 1.959963984540054
Z95_ONE_SIDED = 1.6448536269514722

# stream labels (disjoint from the coupling family, see coupling.py)
SMALLBALL_STREAM = 3
BM_STREAM = 4
CHUNG_STREAM_BASE = 512

# reflection series truncation
_SERIES_TOL = 1e-16

# fixed Brownian-motion chunk size: results must not depend on work split
_BM_CHUNK = 2000

EXCEEDANCE = "exceedance"
CONTAINMENT = "containment"


def chung_stream_label(n: int, resolution: int) -> int:
    return CHUNG_STREAM_BASE + 16 * n + resolution


def wilson_interval(hits: float, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (default 95%)."""
    if trials <= 0:
        return 0.0, 1.0
    p = hits / trials
    z2 = z * z
    center = p + z2 / (2.0 * trials)
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials))
    denom = 1.0 + z2 / trials
    # clamp away boundary rounding: the exact interval always contains p
    return max(0.0, min((center - half) / denom, p)), min(1.0, max((center + half) / denom, p))


@dataclass(frozen=True)
class SmallBallEstimate:
    """Tally of windowed sups against the threshold lambda * r.

    mode "exceedance" counts sup > lambda*r (strict), "containment" counts
    sup < lambda*r (strict); on one replicate set the two tallies at equal
    lambda partition the trials up to the null boundary sup == lambda*r.
    """

    window: ParabolicWindow
    lam: float
    mode: str
    trials: int
    hits: float
    grid: GridSpec
    coefficient: str

    def __post_init__(self):
        if self.mode not in (EXCEEDANCE, CONTAINMENT):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lam < 0.0:
            raise ValueError(f"threshold multiplier must be >= 0, got {self.lam!r}")
        if not 0 <= self.hits <= self.trials:
            raise ValueError(f"need 0 <= hits <= trials, got {self.hits}/{self.trials}")

    @property
    def p_hat(self) -> float:
        return self.hits / self.trials if self.trials else math.nan

    @property
    def ci_low(self) -> float:
        return wilson_interval(self.hits, self.trials)[0]

    @property
    def ci_high(self) -> float:
        return wilson_interval(self.hits, self.trials)[1]

    @property
    def degenerate(self) -> bool:
        """All-or-nothing tallies give a collapsed CI; fit layers must
        exclude or down-weight these."""
        return self.trials == 0 or self.hits in (0, self.trials)


def merge_estimates(a: SmallBallEstimate, b: SmallBallEstimate) -> SmallBallEstimate:
    """Add hit/trial counts of two shards of one configuration."""
    if (a.window, a.lam, a.mode, a.grid, a.coefficient) != (b.window, b.lam, b.mode, b.grid, b.coefficient):
        raise ValueError("cannot merge estimates with different configurations")
    return dataclasses.replace(a, trials=a.trials + b.trials, hits=a.hits + b.hits)


def window_sup_sample(
    sigma,
    window: ParabolicWindow,
    trials: int,
    seed: SeedSpec,
    grid: GridSpec | None = None,
    points_per_axis: int = 16,
    resolution: int = 1,
    method: str = "fd",
    max_cells: int | None = None,
    zero_noise: bool = False,
) -> np.ndarray:
    """Windowed sups of `trials` independent replicates.

    Replicate j uses the stream seed.replicate(seed.replicate_id + j), so
    shards with shifted starting ids reproduce exactly the tail of a longer
    run.  method "fd" runs the semi-implicit scheme on the diffusive grid;
    "exact" runs the spectral exponential-Euler sampler (constant
    coefficients only) on the node-rule grid.  zero_noise replaces every
    increment by zero (diagnostic override: all sups collapse to 0).
    """
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    if method == "fd":
        if grid is None:
            grid = window_grid(window, points_per_axis, resolution, time_rule="dx2", max_cells=max_cells)
        grid.require_resolves(window)
        sups = np.empty(trials)
        for j in range(trials):
            sj = seed.replicate(seed.replicate_id + j)
            if zero_noise:
                noise = NoiseGrid(grid=grid, increments=np.zeros((grid.nt, grid.nx)), seed=sj)
            else:
                noise = sample_noise(grid, sj, max_cells=max_cells)
            field = solve_spde(sigma, noise, grid, max_cells=max_cells)
            sups[j] = sup_on_window(field, window)
        return sups
    if method == "exact":
        if sigma.lipschitz != 0.0:
            raise ValueError("exact sampling needs a constant coefficient")
        if grid is None:
            grid = window_grid(window, points_per_axis, resolution, time_rule="axis", max_cells=max_cells)
        grid.require_resolves(window)
        c = sigma.sigma0
        sups = np.empty(trials)
        for j in range(trials):
            sj = seed.replicate(seed.replicate_id + j)
            if zero_noise:
                sups[j] = 0.0
                continue
            field = solve_linear_exact(c, grid, sj, max_cells=max_cells)
            sups[j] = sup_on_window(field, window)
        return sups
    raise ValueError(f"unknown method {method!r}")


def tally_small_ball(sups: np.ndarray, window: ParabolicWindow, lam: float, mode: str, grid: GridSpec, coefficient: str) -> SmallBallEstimate:
    thr = lam * window.r
    if mode == EXCEEDANCE:
        hits = int(np.count_nonzero(sups > thr))
    elif mode == CONTAINMENT:
        hits = int(np.count_nonzero(sups < thr))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SmallBallEstimate(window=window, lam=lam, mode=mode, trials=len(sups), hits=hits, grid=grid, coefficient=coefficient)


def estimate_small_ball(
    sigma,
    window: ParabolicWindow,
    lam: float,
    mode: str,
    trials: int,
    seed: SeedSpec,
    grid: GridSpec | None = None,
    points_per_axis: int = 16,
    resolution: int = 1,
    max_cells: int | None = None,
) -> SmallBallEstimate:
    """Monte Carlo tally of sup against lambda*r over fresh replicates."""
    if grid is None:
        grid = window_grid(window, points_per_axis, resolution, time_rule="dx2", max_cells=max_cells)
    sups = window_sup_sample(sigma, window, trials, seed, grid=grid, max_cells=max_cells)
    return tally_small_ball(sups, window, lam, mode, grid, sigma.tag)


def estimate_profile(
    sigma,
    window: ParabolicWindow,
    lambdas,
    modes,
    trials: int,
    seed: SeedSpec,
    grid: GridSpec | None = None,
    points_per_axis: int = 16,
    max_cells: int | None = None,
) -> list[SmallBallEstimate]:
    """One sup sample tallied against a whole lambda grid (all estimates
    share the identical replicate set, so exceedance hits are pathwise
    monotone in lambda)."""
    if len(lambdas) == 0:
        raise ValueError("empty lambda grid")
    if grid is None:
        grid = window_grid(window, points_per_axis, time_rule="dx2", max_cells=max_cells)
    sups = window_sup_sample(sigma, window, trials, seed, grid=grid, max_cells=max_cells)
    return [tally_small_ball(sups, window, lam, mode, grid, sigma.tag) for mode in modes for lam in lambdas]


@dataclass(frozen=True)
class TailFit:
    """Weighted least squares of log p on lambda^2.

    slope estimates the decay rate of the tail (negative), intercept the
    log prefactor; weights are inverse delta-method variances of log p_hat.
    """

    lambdas: np.ndarray
    log_p: np.ndarray
    slope: float
    intercept: float
    weights: np.ndarray
    residuals: np.ndarray
    goodness: float
    excluded: tuple

    def predict(self, lam) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(lam) ** 2


def fit_tail_exponent(estimates, min_hits: int = 5) -> TailFit:
    """Fit log p_hat against lambda^2 across estimates of one campaign.

    Estimates with hits < min_hits or hits > trials - min_hits carry no
    usable log-scale information and are excluded (reported in the result);
    fewer than 3 usable points refuses the fit.
    """
    usable = []
    excluded = []
    for est in estimates:
        if est.trials > 0 and min_hits <= est.hits <= est.trials - min_hits:
            usable.append(est)
        else:
            excluded.append(est.lam)
    if len(usable) < 3:
        raise ValueError(f"tail fit needs >= 3 usable points, got {len(usable)}")
    lams = np.array([e.lam for e in usable])
    p = np.array([e.p_hat for e in usable])
    n = np.array([e.trials for e in usable], dtype=np.float64)
    h = np.array([e.hits for e in usable], dtype=np.float64)
    y = np.log(p)
    # Var(log p_hat) ~= (1-p)/(n p) by the delta method
    w = n * h / (n - h)
    A = np.column_stack([np.ones_like(lams), lams**2])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    intercept, slope = float(coef[0]), float(coef[1])
    res = y - (intercept + slope * lams**2)
    dof = len(usable) - 2
    goodness = float(math.sqrt(np.sum(w * res**2) / dof)) if dof > 0 else 0.0
    if slope >= 0.0 and np.all(p < 1.0) and lams.max() > lams.min():
        raise ValueError(f"tail fit produced nonnegative slope {slope:g}; data are not tail-shaped")
    return TailFit(
        lambdas=lams,
        log_p=y,
        slope=slope,
        intercept=intercept,
        weights=w,
        residuals=res,
        goodness=goodness,
        excluded=tuple(excluded),
    )


@dataclass(frozen=True)
class ScanEntry:
    """Distribution summary of S_n = sup/f(r_n) at one (scale, resolution)."""

    n: int
    r: float
    normalizer: float
    resolution: int
    trials: int
    s_min: float
    s_q1: float
    s_median: float
    s_q3: float
    s_max: float
    method: str
    samples: np.ndarray


@dataclass(frozen=True)
class ChungScanResult:
    entries: tuple
    running_min: dict  # resolution -> list of (n, running minimum of medians)
    skipped: tuple  # (n, resolution, reason)

    def entry(self, n: int, resolution: int) -> ScanEntry:
        for e in self.entries:
            if e.n == n and e.resolution == resolution:
                return e
        raise KeyError((n, resolution))


def scan_entry_from_samples(samples: np.ndarray, n: int, r: float, resolution: int, method: str) -> ScanEntry:
    f_r = chung_normalizer(r)
    s = np.asarray(samples) / f_r
    q1, med, q3 = np.quantile(s, [0.25, 0.5, 0.75])
    return ScanEntry(
        n=n,
        r=r,
        normalizer=f_r,
        resolution=resolution,
        trials=len(s),
        s_min=float(s.min()),
        s_q1=float(q1),
        s_median=float(med),
        s_q3=float(q3),
        s_max=float(s.max()),
        method=method,
        samples=s,
    )


def chung_scan(
    sigma,
    params: ScaleParams,
    trials: int,
    master_seed: int,
    resolutions=(1, 2),
    points_per_axis: int = 16,
    max_cells: int | None = None,
    zero_noise: bool = False,
) -> ChungScanResult:
    """Distribution of the scan statistic S_n per scale and resolution.

    Streams are independent per (n, replicate, resolution); matched seeds
    across coefficient choices therefore couple the scans replicate by
    replicate.  Constant coefficients use the exact spectral sampler (the
    statistic's law is then sampled without time-stepping bias); Lipschitz
    coefficients run the finite-difference scheme.  Scales whose grid blows
    the cell budget are skipped and reported, not silently dropped.
    """
    if sigma.sigma0 == 0.0:
        raise ValueError("scan statistic needs sigma(0) != 0")
    if trials < 1:
        raise ValueError(f"need trials >= 1, got {trials}")
    method = "exact" if sigma.lipschitz == 0.0 else "fd"
    entries = []
    skipped = []
    for n in params.indices():
        r = params.r(n)
        if r >= E_INV:
            skipped.append((n, 0, f"scale r={r:g} is not < 1/e"))
            continue
        window = ParabolicWindow(r)
        for res in resolutions:
            seed = SeedSpec(master_seed, 0, chung_stream_label(n, res))
            try:
                sups = window_sup_sample(
                    sigma,
                    window,
                    trials,
                    seed,
                    points_per_axis=points_per_axis,
                    resolution=res,
                    method=method,
                    max_cells=max_cells,
                    zero_noise=zero_noise,
                )
            except BudgetError as err:
                skipped.append((n, res, str(err)))
                continue
            entries.append(scan_entry_from_samples(sups, n, r, res, method))
    running = {}
    for res in resolutions:
        acc = math.inf
        trace = []
        for e in entries:
            if e.resolution != res:
                continue
            acc = min(acc, e.s_median)
            trace.append((e.n, acc))
        running[res] = trace
    return ChungScanResult(entries=tuple(entries), running_min=running, skipped=tuple(skipped))


# ---------------------------------------------------------------------------
# Brownian-motion calibration oracle


def bm_smallball_oracle(epsilon: float) -> float:
    """P(sup_{0<=s<=1} |B_s| <= eps) by the alternating reflection series

        (4/pi) sum_{k>=0} (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 / (8 eps^2)),

    truncated once the next term drops below 1e-16.
    """
    if epsilon <= 0.0:
        raise ValueError(f"need epsilon > 0, got {epsilon!r}")
    total = 0.0
    k = 0
    while True:
        term = math.exp(-((2 * k + 1) ** 2) * math.pi**2 / (8.0 * epsilon**2)) / (2 * k + 1)
        if term < _SERIES_TOL:
            break
        total += term if k % 2 == 0 else -term
        k += 1
    return 4.0 / math.pi * total


@dataclass(frozen=True)
class BmCheck:
    """Monte Carlo containment estimate for one epsilon, with the
    step-doubling discretization allowance.

    p_hat uses the full n-step discretization, p_half the same Brownian
    paths read at every second point; for an O(steps^-1/2) sup bias the
    remaining bias of p_hat is about (p_half - p_hat)/(sqrt(2)-1), which is
    reported as the (absolute) allowance.
    """

    epsilon: float
    trials: int
    hits: int
    hits_half: int
    series: float

    @property
    def p_hat(self) -> float:
        return self.hits / self.trials

    @property
    def p_half(self) -> float:
        return self.hits_half / self.trials

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.hits, self.trials)

    @property
    def allowance(self) -> float:
        return abs(self.p_half - self.p_hat) / (math.sqrt(2.0) - 1.0)


def bm_smallball_mc(epsilons, paths: int, steps: int, master_seed: int) -> list[BmCheck]:
    """Containment frequencies of discretized |B| on [0, 1] for each epsilon.

    Paths are simulated in fixed-size chunks with one stream per chunk, so
    the tallies are independent of how chunks are assigned to workers.
    steps must be even (the step-doubling allowance reads every other
    point of the same paths).
    """
    eps = sorted(float(e) for e in epsilons)
    if not eps:
        raise ValueError("empty epsilon list")
    if steps % 2 != 0:
        raise ValueError(f"steps must be even, got {steps}")
    hits = np.zeros(len(eps), dtype=np.int64)
    hits_half = np.zeros(len(eps), dtype=np.int64)
    done = 0
    chunk_index = 0
    while done < paths:
        m = min(_BM_CHUNK, paths - done)
        g = generator(SeedSpec(master_seed, chunk_index, BM_STREAM))
        inc = g.standard_normal((m, steps))
        inc *= math.sqrt(1.0 / steps)
        cums = np.cumsum(inc, axis=1)
        sup_full = np.abs(cums).max(axis=1)
        sup_half = np.abs(cums[:, 1::2]).max(axis=1)
        for i, e in enumerate(eps):
            hits[i] += int(np.count_nonzero(sup_full <= e))
            hits_half[i] += int(np.count_nonzero(sup_half <= e))
        done += m
        chunk_index += 1
    return [
        BmCheck(epsilon=e, trials=paths, hits=int(hits[i]), hits_half=int(hits_half[i]), series=bm_smallball_oracle(e))
        for i, e in enumerate(eps)
    ]


def nonincreasing_within_ci(hits, trials, z: float = Z95_ONE_SIDED) -> bool:
    """One-sided test that binomial frequencies are nonincreasing: every
    consecutive increase must stay within z standard errors of the paired
    difference."""
    hits = np.asarray(hits, dtype=np.float64)
    trials = np.asarray(trials, dtype=np.float64)
    p = hits / trials
    for i in range(len(p) - 1):
        se = math.sqrt(p[i] * (1 - p[i]) / trials[i] + p[i + 1] * (1 - p[i + 1]) / trials[i + 1])
        if p[i + 1] - p[i] > z * se:
            return False
    return True
