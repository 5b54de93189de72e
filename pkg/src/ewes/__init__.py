"""Optimal DC-plan decumulation engine: joint withdrawal and asset
allocation controls maximizing expected total withdrawals against an
expected-shortfall risk budget, solved by backward dynamic programming
with Fourier propagation, and evaluated by Monte Carlo and stationary
block bootstrap."""

from .bootstrap import BootstrapConfig, ReturnSeries, backtest, load_return_series, stationary_block_resample
from .dp import (
    Policy,
    Scenario,
    apply_rebalance,
    optimize_allocation,
    optimize_withdrawal,
    optimize_wstar,
    solve_auxiliary,
    terminal_values,
)
from .market import AssetParams, JumpLaw, MarketModel, PeriodReturn, jump_compensator, jump_log_density, joint_char_fn, sample_period_return
from .mc import FixedPolicy, SummaryStats, expected_shortfall, heatmap_export, simulate, summarize
from .pide import GridSpec, TransitionKernel, ValueSurface, build_grids, build_kernel, propagate
from .presets import base_scenario, crsp_real_market

__version__ = "0.1.0"
