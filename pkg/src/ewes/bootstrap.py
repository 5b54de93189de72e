"""Stationary block bootstrap backtests on historical real returns.

The historical market resamples a user-supplied monthly series of
paired real gross returns (stock, bond): blocks of geometrically
distributed length (Pr(b = k) = (1-v)^{k-1} v with mean 1/v = 12*bhat
months for an expected blocksize of bhat years) start at uniformly
random months and wrap circularly past the end of the record, which
preserves serial correlation within blocks.  Both columns are always
drawn at the same source index (paired sampling).

Resampled months are compounded into one gross return per rebalancing
interval and the stored policy is applied exactly as in the synthetic
market.  While an account is in debt, each month's bond return is
increased by borrow_spread/12 before compounding.

The input CSV must have the header `period,stock_gross_real,bond_gross_real`
with YYYY-MM periods, no gaps, and strictly positive gross returns.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass

import numpy as np

from .dp import Scenario
from .mc import Ensemble, SummaryStats, _walk_policy, run_blocks, summarize

__all__ = [
    "ReturnSeries",
    "BootstrapConfig",
    "load_return_series",
    "stationary_block_resample",
    "resample_indices",
    "backtest",
]

_PERIOD_RE = re.compile(r"^(\d{4})-(\d{2})$")
EXPECTED_HEADER = ["period", "stock_gross_real", "bond_gross_real"]


@dataclass
class ReturnSeries:
    """Ordered monthly records of paired real gross returns."""

    periods: np.ndarray      # strings, YYYY-MM
    stock_gross: np.ndarray
    bond_gross: np.ndarray

    def __post_init__(self):
        n = len(self.periods)
        if len(self.stock_gross) != n or len(self.bond_gross) != n:
            raise ValueError("period/stock/bond columns must have equal length")
        if np.any(self.stock_gross <= 0) or np.any(self.bond_gross <= 0):
            raise ValueError("gross returns must be strictly positive")
        codes = np.array([_period_code(p) for p in self.periods])
        if n > 1 and np.any(np.diff(codes) <= 0):
            raise ValueError("period labels must be strictly increasing")

    def __len__(self) -> int:
        return len(self.periods)


def _period_code(label: str) -> int:
    m = _PERIOD_RE.match(str(label))
    if not m:
        raise ValueError(f"malformed period label {label!r}; expected YYYY-MM")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range in period {label!r}")
    return year * 12 + (month - 1)


def load_return_series(source) -> ReturnSeries:
    """Parse and validate the paired-return CSV."""
    with open(source, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty return-series file") from None
        if [h.strip() for h in header] != EXPECTED_HEADER:
            raise ValueError(
                f"bad header {header!r}; expected {','.join(EXPECTED_HEADER)}"
            )
        periods, stock, bond = [], [], []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {i}: expected 3 fields, got {len(row)}")
            periods.append(row[0].strip())
            try:
                stock.append(float(row[1]))
                bond.append(float(row[2]))
            except ValueError:
                raise ValueError(f"line {i}: non-numeric return") from None
    return ReturnSeries(
        periods=np.array(periods),
        stock_gross=np.array(stock),
        bond_gross=np.array(bond),
    )


@dataclass(frozen=True)
class BootstrapConfig:
    block_size_years: float = 0.25
    n_resamples: int = 100_000
    seed: int = 0
    horizon_years: float = 30.0
    months_per_rebalance: int = 12

    def __post_init__(self):
        if self.block_size_years < 1.0 / 12.0:
            raise ValueError("expected blocksize must be at least one month")
        if self.n_resamples < 1:
            raise ValueError("n_resamples must be >= 1")
        if self.horizon_years <= 0 or self.months_per_rebalance < 1:
            raise ValueError("horizon and months_per_rebalance must be positive")

    @property
    def geometric_prob(self) -> float:
        """v with mean block length 1/v = 12 * block_size_years months."""
        return 1.0 / (12.0 * self.block_size_years)

    @property
    def n_months(self) -> int:
        return int(round(self.horizon_years * 12))


def resample_indices(
    n_source: int, n_months: int, v: float, n_paths: int, rng: np.random.Generator
) -> np.ndarray:
    """(n_paths, n_months) source indices from the stationary block
    bootstrap: geometric block lengths (capped at the series length),
    uniform starts, circular wraparound.  Drawing n_months blocks per path
    guarantees coverage, so the construction is branch-free and the draw
    count deterministic."""
    if n_source < 2:
        raise ValueError("need at least two source months to resample")
    lengths = np.minimum(rng.geometric(v, size=(n_paths, n_months)), n_source)
    starts = rng.integers(0, n_source, size=(n_paths, n_months))
    flat_len = lengths.ravel()
    ends = np.cumsum(flat_len)
    block_offsets = ends - flat_len
    within = np.arange(ends[-1]) - np.repeat(block_offsets, flat_len)
    src = (np.repeat(starts.ravel(), flat_len) + within) % n_source
    row_totals = lengths.sum(axis=1)
    row_offsets = np.concatenate(([0], np.cumsum(row_totals)))[:-1]
    take = row_offsets[:, None] + np.arange(n_months)[None, :]
    return src[take]


def stationary_block_resample(
    series: ReturnSeries,
    config: BootstrapConfig,
    rng: np.random.Generator,
    *,
    return_indices: bool = False,
):
    """One resampled monthly path of paired returns covering the horizon."""
    idx = resample_indices(len(series), config.n_months, config.geometric_prob, 1, rng)[0]
    stock = series.stock_gross[idx]
    bond = series.bond_gross[idx]
    if return_indices:
        return stock, bond, idx
    return stock, bond


def _backtest_batch(
    policy, scenario: Scenario, series: ReturnSeries, config: BootstrapConfig,
    spread: float, batch: int, n_batch: int,
) -> dict:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((config.seed, batch))))
    idx = resample_indices(len(series), config.n_months, config.geometric_prob, n_batch, rng)
    mpr = config.months_per_rebalance
    periods = config.n_months // mpr
    gs_m = series.stock_gross[idx].reshape(n_batch, periods, mpr)
    gb_m = series.bond_gross[idx].reshape(n_batch, periods, mpr)
    gs = gs_m.prod(axis=2)
    gb = gb_m.prod(axis=2)
    gbi = (gb_m + spread / 12.0).prod(axis=2)
    return _walk_policy(scenario, policy, gs, gb, gbi)


def _batch_task(args):
    return _backtest_batch(*args)


def backtest(
    policy,
    scenario: Scenario,
    series: ReturnSeries,
    config: BootstrapConfig,
    *,
    borrow_spread: float = 0.0,
    n_workers: int = 1,
) -> SummaryStats:
    """Evaluate the policy on block-bootstrap resamples of the series."""
    if not math.isclose(config.horizon_years, scenario.horizon, rel_tol=0, abs_tol=1e-9):
        raise ValueError("bootstrap horizon does not match the scenario horizon")
    if config.n_months % config.months_per_rebalance != 0:
        raise ValueError("horizon months must be a multiple of months_per_rebalance")
    periods = config.n_months // config.months_per_rebalance
    if periods != scenario.n_rebalances:
        raise ValueError(
            f"resampled periods ({periods}) do not match scenario rebalances "
            f"({scenario.n_rebalances})"
        )
    if len(series) < 2:
        raise ValueError("return series too short to resample")

    mean_len = 1.0 / config.geometric_prob
    batch_size = max(128, int(3e6 / (config.n_months * mean_len)))
    starts = list(range(0, config.n_resamples, batch_size))
    tasks = [
        (policy, scenario, series, config, borrow_spread, bi,
         min(batch_size, config.n_resamples - lo))
        for bi, lo in enumerate(starts)
    ]
    results = run_blocks(_batch_task, tasks, n_workers=n_workers)

    m = scenario.n_rebalances
    n = config.n_resamples
    ens = Ensemble(
        times=scenario.times,
        wealth=np.empty((n, m + 1), dtype=np.float32),
        withdrawal=np.empty((n, m + 1), dtype=np.float32),
        equity=np.empty((n, m), dtype=np.float32),
        solvent=np.empty((n, m), dtype=bool),
        terminal=np.empty(n),
        reward=np.empty(n),
        q_min=float(policy.q_min),
        q_max=float(policy.q_max),
    )
    for lo, res in zip(starts, results):
        hi = lo + res["terminal"].size
        for key in ("wealth", "withdrawal", "equity", "solvent", "terminal", "reward"):
            getattr(ens, key)[lo:hi] = res[key]
    return summarize(ens, scenario.alpha)
