"""Acceptance suite.

Each test runs one acceptance criterion at its stated tolerance and prints
one PASS/FAIL line (run pytest with -s to see them inline).  The heavy
Monte Carlo campaigns live in session fixtures (conftest.py) shared with
the module-level statistical tests; their wall-clock budgets are asserted
here.  Seeds are fixed, so every run of this suite is a deterministic
replay.
"""

import math
import time

import numpy as np
import pytest

from chung_lab.cli import main, read_rows
from chung_lab.domain import GridSpec, ParabolicWindow, chung_normalizer, window_grid
from chung_lab.estimators import (
    EXCEEDANCE,
    SMALLBALL_STREAM,
    fit_tail_exponent,
    nonincreasing_within_ci,
    tally_small_ball,
    window_sup_sample,
    wilson_interval,
)
from chung_lab.kernel import heat_kernel, heat_kernel_image, heat_kernel_spectral, kernel_covariance_linear
from chung_lab.noise import SeedSpec
from chung_lab.solver import constant_coefficient, solve_linear_exact

from test_cli import strip_timestamps, write_config


def check(name, ok, detail=""):
    print(f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


class TestKernelIdentities:
    def test_kernel_identities(self):
        t0 = time.monotonic()
        xs = (np.arange(4096) + 0.5) / 4096

        worst_mass = max(abs(float(np.mean(heat_kernel(t, xs))) - 1.0) for t in (1e-4, 1e-2, 1.0))
        check("kernel mass = 1 within 1e-8", worst_mass < 1e-8, f"(err {worst_mass:.2e})")

        worst_semi = 0.0
        for s, t in ((1e-4, 5e-4), (0.01, 0.02), (0.05, 0.2), (0.005, 0.995)):
            for x in (0.0, 0.3, 0.7713):
                conv = float(np.mean(heat_kernel(s, x - xs) * heat_kernel(t, xs)))
                worst_semi = max(worst_semi, abs(conv - heat_kernel(s + t, x)))
        check("kernel semigroup within 1e-8", worst_semi < 1e-8, f"(err {worst_semi:.2e})")

        rng = np.random.default_rng(20260810)
        ts = np.exp(rng.uniform(math.log(1e-4), 0.0, size=100))
        xr = rng.uniform(0.0, 1.0, size=100)
        worst_x = max(abs(heat_kernel_image(t, x) - heat_kernel_spectral(t, x)) for t, x in zip(ts, xr))
        check("kernel image/spectral agreement within 1e-12 (100 samples)", worst_x < 1e-12, f"(err {worst_x:.2e})")

        elapsed = time.monotonic() - t0
        check("kernel identities runtime < 10 s", elapsed < 10.0, f"({elapsed:.1f} s)")


class TestExactGaussianOracle:
    def test_mode_variances(self):
        t0 = time.monotonic()
        grid = GridSpec(nx=16, nt=50, dt=0.002)
        n_rep = 10_000
        rows = {5: np.empty((n_rep, grid.nx)), 50: np.empty((n_rep, grid.nx))}
        for j in range(n_rep):
            f = solve_linear_exact(1.0, grid, SeedSpec(2718, j, 7))
            rows[5][j] = f.values[5]
            rows[50][j] = f.values[50]
        worst_z = 0.0
        for step, t in ((5, 0.01), (50, 0.1)):
            modes = np.fft.rfft(rows[step], axis=1) / grid.nx
            for k in (1, 2, 4):
                m2 = np.abs(modes[:, k]) ** 2
                target = kernel_covariance_linear(t, k)
                z = abs(m2.mean() - target) / (m2.std(ddof=1) / math.sqrt(n_rep))
                worst_z = max(worst_z, z)
        check(
            "exact sampler mode variances match (1-exp(-4pi^2k^2t))/(4pi^2k^2) within 3 SE",
            worst_z <= 3.0,
            f"(worst z = {worst_z:.2f} over k in {{1,2,4}}, t in {{0.01,0.1}}, 1e4 replications)",
        )
        elapsed = time.monotonic() - t0
        check("exact Gaussian oracle runtime < 2 min", elapsed < 120.0, f"({elapsed:.1f} s)")


class TestBmCalibration:
    def test_monte_carlo_within_series_band(self, bm_campaign):
        series_1 = next(c.series for c in bm_campaign.checks if c.epsilon == 1.0)
        check(
            "reflection series value at eps=1 is 0.3708",
            abs(series_1 - 0.3707774297995239) < 1e-12,
            f"(series {series_1:.10f})",
        )
        for chk in bm_campaign.checks:
            lo, hi = chk.ci
            half = (hi - lo) / 2.0
            err = abs(chk.p_hat - chk.series)
            check(
                f"BM small-ball MC at eps={chk.epsilon:g} within 95% CI + step-doubling allowance",
                err <= half + chk.allowance,
                f"(err {err:.5f} vs {half:.5f} + {chk.allowance:.5f}; 1e5 paths, 1e4 steps)",
            )
        check("BM calibration runtime < 5 min", bm_campaign.elapsed < 300.0, f"({bm_campaign.elapsed:.0f} s)")


class TestLemmaTailShape:
    def test_monotone_fit_and_coefficient_scaling(self, smallball_campaign):
        camp = smallball_campaign
        sups = camp.sups[1.0]
        hits = [int(np.count_nonzero(sups > lam * camp.window.r)) for lam in (1.0, 2.0, 3.0, 4.0)]
        check(
            "exceedance tallies strictly decreasing over lambda in {1,2,3,4} (pathwise)",
            all(a > b for a, b in zip(hits, hits[1:])),
            f"(hits {hits} of {camp.trials})",
        )
        fits = {}
        for c in (1.0, 2.0):
            ests = [
                tally_small_ball(camp.sups[c], camp.window, lam, EXCEEDANCE, camp.grid, f"const({c:g})")
                for lam in camp.lambdas
            ]
            fits[c] = fit_tail_exponent(ests)
        check(
            "weighted affine fit of log p vs lambda^2 has negative slope",
            fits[1.0].slope < 0.0,
            f"(slope {fits[1.0].slope:.3f} over usable lambda {[float(x) for x in fits[1.0].lambdas]})",
        )
        ratio = fits[1.0].slope / fits[2.0].slope
        check(
            "fitted slope ratio for sigma=1 vs sigma=2 in [2, 8] (target 4)",
            2.0 <= ratio <= 8.0,
            f"(ratio {ratio:.2f})",
        )
        check("tail-shape campaign runtime < 10 min", camp.elapsed < 600.0, f"({camp.elapsed:.0f} s)")

    def test_residuals_within_wilson_bands(self, smallball_campaign):
        # Expected failure, asserted as stated rather than weakened: the
        # affine-in-lambda^2 law is an upper-bound shape that is exact only
        # deep in the tail, and the measured exceedance curve is genuinely
        # curved across this lambda range (adjacent log-p slopes steepen
        # from -0.64 to -1.0 per unit lambda^2).  The Wilson bands of the
        # well-estimated points are +/-1-2% in log p at N=1e4, and no
        # affine function passes through all usable bands simultaneously.
        camp = smallball_campaign
        ests = [
            tally_small_ball(camp.sups[1.0], camp.window, lam, EXCEEDANCE, camp.grid, "const(1)")
            for lam in camp.lambdas
        ]
        fit = fit_tail_exponent(ests)
        usable = {e.lam: e for e in ests if e.lam in set(fit.lambdas)}
        bad = []
        for lam, est in sorted(usable.items()):
            pred = math.exp(fit.predict(lam))
            if not est.ci_low <= pred <= est.ci_high:
                bad.append((lam, pred, est.ci_low, est.ci_high))
        check(
            "tail-fit residuals within 95% Wilson bands at every usable lambda",
            not bad,
            f"(fitted p outside bands at lambda {[b[0] for b in bad]})",
        )


class TestTruncationCoupling:
    def test_divergence_decay(self, couple_campaign_2u):
        camp = couple_campaign_2u
        ns = list(camp.scales.indices())
        hits = [int(sum(camp.blocks[n]["diverged"])) for n in ns]
        trials = [len(camp.blocks[n]["diverged"]) for n in ns]
        check(
            "truncation divergence frequency nonincreasing in n (one-sided 95% CI)",
            nonincreasing_within_ci(hits, trials),
            f"(hits {hits} of {trials[0]} at n={ns})",
        )
        check("truncation divergence frequency is 0 at n=6", hits[-1] == 0, f"(hits {hits[-1]})")
        check(
            "truncation coupling campaign runtime < 10 min",
            camp.elapsed < 600.0,
            f"({camp.elapsed:.0f} s for 4 scales x 1000 replicates)",
        )


class TestFreezingDecomposition:
    def test_event_decay_and_frozen_identity(self, couple_campaign_2u):
        camp = couple_campaign_2u
        ns = list(camp.scales.indices())
        for key, label in (("supD_exceeds", "P(sup|D| > r^1.5)"), ("fn_failed", "P(F_n^c)")):
            hits = [int(sum(camp.blocks[n][key])) for n in ns]
            trials = [len(camp.blocks[n][key]) for n in ns]
            check(
                f"{label} nonincreasing in n (one-sided 95% CI)",
                nonincreasing_within_ci(hits, trials),
                f"(hits {hits} of {trials[0]})",
            )
        worst = 0.0
        n_verified = 0
        n_total = 0
        for n in ns:
            errs = np.array([e for e in camp.blocks[n]["frozen_rel_err"] if e is not None])
            n_verified += errs.size
            n_total += len(camp.blocks[n]["frozen_rel_err"])
            if errs.size:
                worst = max(worst, float(errs.max()))
        check(
            "u_frozen = sigma(0) * v to relative 1e-12 on every node of every replicate",
            worst <= 1e-12 and math.frexp(camp.sigma0)[0] == 0.5,
            f"(max rel err {worst:.2e} over {n_verified} fully integrated replicates; "
            f"remaining {n_total - n_verified} exact by power-of-two scaling)",
        )


class TestChungScanStability:
    def test_median_stability_and_scaling(self, chung_campaign):
        camp = chung_campaign
        ns = list(camp.scales.indices())
        meds = {}
        for res in camp.resolutions:
            for n in ns:
                s = camp.samples[(1.0, n, res)] / chung_normalizer(camp.scales.r(n))
                meds[(res, n)] = float(np.median(s))
        fine = [meds[(2, n)] for n in ns]
        spread = max(fine) / min(fine)
        check(
            "scan medians within factor 2 across n at the finer resolution",
            spread <= 2.0,
            f"(medians {[f'{m:.3f}' for m in fine]}, spread {spread:.3f})",
        )
        worst = 0.0
        for res in camp.resolutions:
            for n in ns:
                a = camp.samples[(2.0, n, res)]
                b = camp.samples[(1.0, n, res)]
                worst = max(worst, float(np.abs(a - 2.0 * b).max() / np.abs(2.0 * b).max()))
        check(
            "sigma=2 scan equals 2 x sigma=1 scan on matched seeds to relative 1e-12",
            worst <= 1e-12,
            f"(max rel dev {worst:.2e} over {len(ns) * len(camp.resolutions) * camp.trials} matched replicates)",
        )
        check(
            "chung-scan campaign runtime < 15 min",
            camp.elapsed < 900.0,
            f"({camp.elapsed:.0f} s for both coefficients, two resolutions)",
        )


class TestDeterminismAndMerge:
    def test_identical_config_identical_csv(self, tmp_path):
        path = write_config(tmp_path, preset="affine", c0=2.0, c1=1.0)
        for sub in ("smallball", "couple"):
            assert main([sub, "--config", str(path), "--workers", "1"]) == 0
            first = strip_timestamps(tmp_path / "out" / f"t1_{sub}.csv")
            (tmp_path / "out" / f"t1_{sub}.csv").unlink()
            (tmp_path / "out" / f"t1_{sub}.ckpt.jsonl").unlink()
            assert main([sub, "--config", str(path), "--workers", "2"]) == 0
            second = strip_timestamps(tmp_path / "out" / f"t1_{sub}.csv")
            check(
                f"{sub}: identical config+seed gives identical CSV (timestamps excluded), any worker count",
                first == second,
            )

    def test_ten_shard_merge_equals_single_shot(self, smallball_campaign):
        camp = smallball_campaign
        sigma = constant_coefficient(1.0)
        seed = SeedSpec(20260811, 0, SMALLBALL_STREAM)
        single = window_sup_sample(sigma, camp.window, camp.trials, seed, grid=camp.grid)
        check(
            "10-shard campaign equals single-shot run replicate-for-replicate",
            np.array_equal(single, camp.sups[1.0]),
        )
        for lam in (1.0, 2.5, 4.0):
            a = tally_small_ball(single, camp.window, lam, EXCEEDANCE, camp.grid, sigma.tag)
            b = tally_small_ball(camp.sups[1.0], camp.window, lam, EXCEEDANCE, camp.grid, sigma.tag)
            check(f"merged counts equal single-shot counts at lambda={lam:g}", (a.hits, a.trials) == (b.hits, b.trials), f"({a.hits}/{a.trials})")
