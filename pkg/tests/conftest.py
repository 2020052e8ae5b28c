"""Shared campaign fixtures.

The heavy Monte Carlo campaigns are session fixtures: the acceptance tests
and the module-level statistical tests consume the same runs.  All
campaigns use two worker processes with fixed chunk sizes, so their output
is identical to a serial run (verified by the determinism tests).
"""

import os
import time
from dataclasses import dataclass

import numpy as np
import pytest

from chung_lab import ParabolicWindow, ScaleParams, SeedSpec, constant_coefficient
from chung_lab.cli import _chung_chunk, _couple_chunk, _smallball_chunk, _run_chunks
from chung_lab.domain import window_grid
from chung_lab.estimators import bm_smallball_mc

WORKERS = min(2, os.cpu_count() or 1)

COUPLE_SEED = 20260810
SMALLBALL_SEED = 20260811
CHUNG_SEED = 20260812
BM_SEED = 314159


def _warm_kernels():
    """Compile the numba kernels in the parent so forked workers inherit them."""
    from chung_lab.coupling import run_coupling_block
    from chung_lab.solver import affine_coefficient

    w = ParabolicWindow(0.25)
    g = window_grid(w, 16)
    run_coupling_block(affine_coefficient(2.0, 1.0), w, g, 0.5, SeedSpec(1, 0, 1), 1)


@dataclass
class CoupleCampaign:
    scales: ScaleParams
    trials: int
    blocks: dict  # n -> merged block dict (lists)
    elapsed: float
    sigma0: float


def _run_couple_campaign(preset, c0, c1, master_seed, trials, workers=WORKERS) -> CoupleCampaign:
    scales = ScaleParams(a=2.0, n_min=3, n_max=6, epsilon=0.5)
    chunk = 50
    t0 = time.monotonic()
    descriptors = []
    for n in scales.indices():
        for lo in range(0, trials, chunk):
            descriptors.append(
                dict(
                    preset=preset,
                    c0=c0,
                    c1=c1,
                    r=scales.r(n),
                    n=n,
                    ppa=16,
                    eps=scales.epsilon,
                    master_seed=master_seed,
                    rep_start=lo,
                    count=min(chunk, trials - lo),
                    tol=1e-9,
                    verify_every=16,
                    max_cells=None,
                )
            )
    # big scales first: minimizes the worker-pool tail when chunk costs differ
    descriptors.sort(key=lambda d: -d["n"])
    results = _run_chunks(_couple_chunk, descriptors, workers)
    blocks = {}
    for d, res in zip(descriptors, results):
        agg = blocks.setdefault(d["n"], {k: [] for k in res})
        for k, vals in res.items():
            agg[k].extend(vals)
    elapsed = time.monotonic() - t0
    return CoupleCampaign(scales=scales, trials=trials, blocks=blocks, elapsed=elapsed, sigma0=c0)


@pytest.fixture(scope="session")
def couple_campaign_2u():
    """sigma(u) = 2 + u, a=2, n=3..6, N=1000 per scale, eps=0.5."""
    _warm_kernels()
    return _run_couple_campaign("affine", 2.0, 1.0, COUPLE_SEED, 1000)


@pytest.fixture(scope="session")
def couple_campaign_1u():
    """sigma(u) = 1 + u, same scales, N=1000 per scale."""
    _warm_kernels()
    return _run_couple_campaign("affine", 1.0, 1.0, COUPLE_SEED + 1, 1000)


@dataclass
class SmallballCampaign:
    window: ParabolicWindow
    grid: object
    lambdas: tuple
    trials: int
    sups: dict  # coefficient c -> sups ndarray
    elapsed: float


@pytest.fixture(scope="session")
def smallball_campaign():
    """sigma == 1 and sigma == 2 on the r = 0.25 window, N = 10^4 each, on
    the default lambda grid; both runs share seed streams."""
    _warm_kernels()
    window = ParabolicWindow(0.25)
    grid = window_grid(window, 16)
    trials = 10_000
    chunk = 1000
    t0 = time.monotonic()
    sups = {}
    for c in (1.0, 2.0):
        descriptors = [
            dict(
                preset="constant",
                c0=c,
                c1=0.0,
                r=0.25,
                ppa=16,
                master_seed=SMALLBALL_SEED,
                rep_start=lo,
                count=min(chunk, trials - lo),
                max_cells=None,
            )
            for lo in range(0, trials, chunk)
        ]
        parts = _run_chunks(_smallball_chunk, descriptors, WORKERS)
        sups[c] = np.concatenate([np.asarray(p) for p in parts])
    elapsed = time.monotonic() - t0
    return SmallballCampaign(
        window=window,
        grid=grid,
        lambdas=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0),
        trials=trials,
        sups=sups,
        elapsed=elapsed,
    )


@dataclass
class ChungCampaign:
    scales: ScaleParams
    trials: int
    resolutions: tuple
    samples: dict  # (c, n, res) -> sups ndarray (unnormalized)
    elapsed: float


@pytest.fixture(scope="session")
def chung_campaign():
    """sigma == 1 and sigma == 2 scans, a=2, n=3..6, N=200, resolutions x1
    and x2, matched seed streams across the two coefficients."""
    _warm_kernels()
    scales = ScaleParams(a=2.0, n_min=3, n_max=6, epsilon=0.5)
    trials = 200
    resolutions = (1, 2)
    chunk = 50
    t0 = time.monotonic()
    samples = {}
    for c in (1.0, 2.0):
        descriptors = []
        for n in scales.indices():
            for res in resolutions:
                for lo in range(0, trials, chunk):
                    descriptors.append(
                        dict(
                            preset="constant",
                            c0=c,
                            c1=0.0,
                            r=scales.r(n),
                            n=n,
                            res=res,
                            ppa=16,
                            master_seed=CHUNG_SEED,
                            rep_start=lo,
                            count=min(chunk, trials - lo),
                            max_cells=None,
                        )
                    )
        results = _run_chunks(_chung_chunk, descriptors, WORKERS)
        acc = {}
        for d, resu in zip(descriptors, results):
            acc.setdefault((d["n"], d["res"]), []).extend(resu)
        for (n, res), vals in acc.items():
            samples[(c, n, res)] = np.asarray(vals)
    elapsed = time.monotonic() - t0
    return ChungCampaign(scales=scales, trials=trials, resolutions=resolutions, samples=samples, elapsed=elapsed)


@dataclass
class BmCampaign:
    checks: list
    elapsed: float


@pytest.fixture(scope="session")
def bm_campaign():
    """Brownian containment Monte Carlo: 1e5 paths, 1e4 steps, eps in
    {0.75, 1.0}."""
    t0 = time.monotonic()
    checks = bm_smallball_mc([0.75, 1.0], paths=100_000, steps=10_000, master_seed=BM_SEED)
    return BmCampaign(checks=checks, elapsed=time.monotonic() - t0)
