"""chung-lab: simulation laboratory for the stochastic heat equation on the
unit circle, its parabolic-window sup statistics, and the truncation /
coefficient-freezing coupling experiments behind them."""

from .domain import (
    BudgetError,
    GridSpec,
    ParabolicWindow,
    ScaleParams,
    cell_budget,
    chung_normalizer,
    scale_sequence,
    window_grid,
)
from .noise import NoiseGrid, SeedSpec, generator, sample_noise, stream_noise
from .kernel import heat_kernel, kernel_covariance_linear
from .solver import (
    Coefficient,
    Field,
    IntegrationError,
    TruncatedCoefficient,
    affine_coefficient,
    constant_coefficient,
    sine_coefficient,
    solve_linear_exact,
    solve_spde,
    sup_on_window,
    truncate_coefficient,
)
from .coupling import CoupledPaths, CouplingOutcome, StoppingRecord, run_coupled, truncation_divergence_check
from .estimators import (
    ChungScanResult,
    SmallBallEstimate,
    TailFit,
    bm_smallball_mc,
    bm_smallball_oracle,
    chung_scan,
    estimate_small_ball,
    fit_tail_exponent,
    merge_estimates,
    wilson_interval,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "ChungScanResult",
    "Coefficient",
    "CoupledPaths",
    "CouplingOutcome",
    "Field",
    "GridSpec",
    "IntegrationError",
    "NoiseGrid",
    "ParabolicWindow",
    "ScaleParams",
    "SeedSpec",
    "SmallBallEstimate",
    "StoppingRecord",
    "TailFit",
    "TruncatedCoefficient",
    "affine_coefficient",
    "bm_smallball_mc",
    "bm_smallball_oracle",
    "cell_budget",
    "chung_normalizer",
    "chung_scan",
    "constant_coefficient",
    "estimate_small_ball",
    "fit_tail_exponent",
    "generator",
    "heat_kernel",
    "kernel_covariance_linear",
    "merge_estimates",
    "run_coupled",
    "sample_noise",
    "scale_sequence",
    "sine_coefficient",
    "solve_linear_exact",
    "solve_spde",
    "stream_noise",
    "sup_on_window",
    "truncate_coefficient",
    "truncation_divergence_check",
    "wilson_interval",
    "window_grid",
]
