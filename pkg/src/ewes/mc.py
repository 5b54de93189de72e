"""Forward Monte Carlo evaluation of stored or fixed policies.

Paths start with all wealth in cash, withdraw and rebalance at each
date per the policy (controls interpolated in log-wealth and clamped to
their admissible sets), then evolve one full rebalancing interval with
an exact-in-law period sample of the jump-diffusion market.  A path
that goes broke through a withdrawal liquidates its stock, sets p = 0,
and accrues debt under the spread-adjusted bond dynamics; at the final
date everything is liquidated and the last withdrawal taken.

Paths are partitioned into fixed-size blocks, each owning an
independent Philox substream keyed by (seed, block index), so results
are bit-reproducible for a given (seed, n_paths) no matter how many
worker processes participate.

Reported statistics: EW = E[sum_i q_i] / (M+1) (discounted if the
scenario discounts), ES(alpha) = mean of the worst alpha fraction of
terminal wealths with fractional weighting on the boundary draw, /5/20/
50/80/95 percentile fans per date, and the mean over dates of the
median stock fraction among still-solvent paths.
"""

from __future__ import annotations

import concurrent.futures
import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .dp import Policy, Scenario
from .market import MarketModel, sample_period_returns

__all__ = [
    "FixedPolicy",
    "Ensemble",
    "SummaryStats",
    "simulate",
    "expected_shortfall",
    "es_standard_error",
    "summarize",
    "heatmap_export",
]

PERCENTILE_LEVELS = (5, 20, 50, 80, 95)

_TINY = 1e-300
DEFAULT_BLOCK_SIZE = 1 << 16


@dataclass(frozen=True)
class FixedPolicy:
    """Constant-weight, constant-withdrawal benchmark strategy."""

    equity_weight: float
    withdrawal: float

    def __post_init__(self):
        if not 0.0 <= self.equity_weight <= 1.0:
            raise ValueError("equity_weight must lie in [0, 1]")

    @property
    def q_min(self) -> float:
        return self.withdrawal

    @property
    def q_max(self) -> float:
        return self.withdrawal

    def q_at(self, n: int, w) -> np.ndarray:
        return np.full_like(np.asarray(w, dtype=float), self.withdrawal)

    def p_at(self, n: int, w_plus) -> np.ndarray:
        w_plus = np.asarray(w_plus, dtype=float)
        return np.where(w_plus > 0, self.equity_weight, 0.0)


@dataclass
class Ensemble:
    """Per-path records: wealth before withdrawal and withdrawal taken at
    every date, the stock fraction chosen at every pre-horizon date (0
    once insolvent), solvency after each withdrawal, terminal wealth, and
    the (discounted) total withdrawn."""

    times: np.ndarray          # (M+1,)
    wealth: np.ndarray         # (n, M+1) float32
    withdrawal: np.ndarray     # (n, M+1) float32
    equity: np.ndarray         # (n, M) float32
    solvent: np.ndarray        # (n, M) bool
    terminal: np.ndarray       # (n,) float64
    reward: np.ndarray         # (n,) float64
    q_min: float
    q_max: float

    @property
    def n_paths(self) -> int:
        return self.terminal.size


def _walk_policy(scenario: Scenario, policy, gs, gb, gbi) -> dict:
    """Apply a policy along given per-period gross returns.

    gs/gb: solvent stock/bond gross returns, shape (n, M); gbi: bond gross
    return while in debt (spread included)."""
    nb, m = gs.shape
    wealth = np.empty((nb, m + 1), dtype=np.float32)
    withdrawal = np.empty((nb, m + 1), dtype=np.float32)
    equity = np.empty((nb, m), dtype=np.float32)
    solvent = np.empty((nb, m), dtype=bool)
    reward = np.zeros(nb)
    disc = np.exp(-scenario.discount * scenario.times)

    w = np.full(nb, float(scenario.w0))
    for n in range(m):
        wealth[:, n] = w
        q = policy.q_at(n, w)
        withdrawal[:, n] = q
        reward += disc[n] * q
        wp = w - q
        sol = wp > 0
        p = np.where(sol, policy.p_at(n, wp), 0.0)
        equity[:, n] = p
        solvent[:, n] = sol
        w = np.where(sol, wp * (p * gs[:, n] + (1.0 - p) * gb[:, n]), wp * gbi[:, n])
    wealth[:, m] = w
    q = policy.q_at(m, w)
    withdrawal[:, m] = q
    reward += disc[m] * q
    return {
        "wealth": wealth,
        "withdrawal": withdrawal,
        "equity": equity,
        "solvent": solvent,
        "terminal": w - q,
        "reward": reward,
    }


def _simulate_block(model: MarketModel, scenario: Scenario, policy, seed: int, block: int, n_block: int) -> dict:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, block))))
    m = scenario.n_rebalances
    gs = np.empty((n_block, m))
    gb = np.empty((n_block, m))
    gbi = np.empty((n_block, m))
    for n in range(m):
        gs[:, n], gb[:, n], gbi[:, n] = sample_period_returns(model, scenario.dt, n_block, rng)
    return _walk_policy(scenario, policy, gs, gb, gbi)


def _check_policy_match(policy, scenario: Scenario) -> None:
    if isinstance(policy, Policy):
        if policy.times.size != scenario.n_rebalances + 1 or not math.isclose(
            policy.times[-1], scenario.horizon, rel_tol=0, abs_tol=1e-9
        ):
            raise ValueError(
                "policy rebalancing schedule does not match the scenario "
                f"({policy.times.size - 1} dates over {policy.times[-1]}y vs "
                f"{scenario.n_rebalances} over {scenario.horizon}y)"
            )


def run_blocks(worker, blocks, n_workers: int = 1):
    """Run independent block tasks, returning results in block order
    regardless of worker count (the merge is order-fixed)."""
    if n_workers <= 1:
        return [worker(b) for b in blocks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(worker, blocks))


def _block_task(args):
    return _simulate_block(*args)


def simulate(
    model: MarketModel,
    scenario: Scenario,
    policy,
    n_paths: int,
    seed: int,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    n_workers: int = 1,
) -> Ensemble:
    """Simulate n_paths under the policy; deterministic in (seed, n_paths)."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    _check_policy_match(policy, scenario)
    m = scenario.n_rebalances
    ens = Ensemble(
        times=scenario.times,
        wealth=np.empty((n_paths, m + 1), dtype=np.float32),
        withdrawal=np.empty((n_paths, m + 1), dtype=np.float32),
        equity=np.empty((n_paths, m), dtype=np.float32),
        solvent=np.empty((n_paths, m), dtype=bool),
        terminal=np.empty(n_paths),
        reward=np.empty(n_paths),
        q_min=float(policy.q_min),
        q_max=float(policy.q_max),
    )
    starts = list(range(0, n_paths, block_size))
    tasks = [
        (model, scenario, policy, seed, bi, min(block_size, n_paths - lo))
        for bi, lo in enumerate(starts)
    ]
    results = run_blocks(_block_task, tasks, n_workers=n_workers)
    for lo, res in zip(starts, results):
        hi = lo + res["terminal"].size
        for key in ("wealth", "withdrawal", "equity", "solvent", "terminal", "reward"):
            getattr(ens, key)[lo:hi] = res[key]
    return ens


def expected_shortfall(terminal, alpha: float) -> float:
    """Mean of the worst alpha fraction of outcomes.  The tail holds
    exactly alpha*N of probability mass: the boundary order statistic is
    fractionally weighted when alpha*N is not an integer."""
    x = np.sort(np.asarray(terminal, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    mass = alpha * x.size
    k = int(math.floor(mass))
    frac = mass - k
    total = x[:k].sum()
    if frac > 0:
        total += frac * x[min(k, x.size - 1)]
    return float(total / mass)


def es_standard_error(terminal, alpha: float) -> float:
    """Rough sampling error of the ES estimate: the standard error of the
    mean over the tail observations (adequate for multiple-of-SE gates)."""
    x = np.sort(np.asarray(terminal, dtype=float).ravel())
    k = max(int(math.ceil(alpha * x.size)), 2)
    tail = x[:k]
    return float(tail.std(ddof=1) / math.sqrt(k))


@dataclass
class SummaryStats:
    n_paths: int
    alpha: float
    ew: float
    es: float
    median_wt: float
    wt_percentiles: dict            # level -> terminal wealth percentile
    times: np.ndarray
    wealth_percentiles: dict        # level -> (M+1,) array, all paths
    withdrawal_percentiles: dict    # level -> (M+1,) array, all paths
    equity_percentiles: dict        # level -> (M,) array, solvent paths only
    equity_median_mean: float       # mean over dates of median stock fraction
    frac_q_at_bounds: float         # share of withdrawal decisions at a bound

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "alpha": self.alpha,
            "ew": self.ew,
            "es": self.es,
            "median_wt": self.median_wt,
            "wt_percentiles": {str(k): v for k, v in self.wt_percentiles.items()},
            "equity_median_mean": self.equity_median_mean,
            "frac_q_at_bounds": self.frac_q_at_bounds,
            "times": [float(t) for t in self.times],
            "wealth_percentiles": {str(k): [float(x) for x in v] for k, v in self.wealth_percentiles.items()},
            "withdrawal_percentiles": {str(k): [float(x) for x in v] for k, v in self.withdrawal_percentiles.items()},
            "equity_percentiles": {str(k): [float(x) for x in v] for k, v in self.equity_percentiles.items()},
        }


def summarize(ensemble: Ensemble, alpha: float) -> SummaryStats:
    """Reduce an ensemble to the standard reward/risk/fan statistics."""
    if ensemble.n_paths == 0:
        raise ValueError("empty ensemble")
    ew = float(ensemble.reward.mean() / ensemble.times.size)
    es = expected_shortfall(ensemble.terminal, alpha)
    wt_pct = {
        lev: float(np.percentile(ensemble.terminal, lev)) for lev in PERCENTILE_LEVELS
    }
    wealth64 = ensemble.wealth.astype(np.float64, copy=False)
    withdraw64 = ensemble.withdrawal.astype(np.float64, copy=False)
    wealth_pct = {
        lev: np.percentile(wealth64, lev, axis=0) for lev in PERCENTILE_LEVELS
    }
    q_pct = {
        lev: np.percentile(withdraw64, lev, axis=0) for lev in PERCENTILE_LEVELS
    }

    m = ensemble.equity.shape[1]
    eq_pct = {lev: np.zeros(m) for lev in PERCENTILE_LEVELS}
    medians = np.zeros(m)
    for n in range(m):
        mask = ensemble.solvent[:, n]
        if mask.any():
            col = ensemble.equity[mask, n].astype(np.float64)
            for lev in PERCENTILE_LEVELS:
                eq_pct[lev][n] = np.percentile(col, lev)
            medians[n] = np.median(col)
    equity_median_mean = float(medians.mean())

    at_lo = np.abs(withdraw64 - ensemble.q_min) <= 1e-9
    at_hi = np.abs(withdraw64 - ensemble.q_max) <= 1e-9
    frac_bounds = float(np.mean(at_lo | at_hi))

    return SummaryStats(
        n_paths=ensemble.n_paths,
        alpha=alpha,
        ew=ew,
        es=es,
        median_wt=float(np.percentile(ensemble.terminal, 50)),
        wt_percentiles=wt_pct,
        times=ensemble.times,
        wealth_percentiles=wealth_pct,
        withdrawal_percentiles=q_pct,
        equity_percentiles=eq_pct,
        equity_median_mean=equity_median_mean,
        frac_q_at_bounds=frac_bounds,
    )


def heatmap_export(policy: Policy, out_dir=None, *, header_comment: str | None = None) -> dict:
    """Control heat maps on the policy's stored wealth nodes: stock
    fraction and normalized withdrawal (q - q_min)/(q_max - q_min), with
    a degenerate range mapping to 0.  Optionally written as gridded CSVs
    (heatmap_p.csv / heatmap_q.csv: one row per wealth node, one column
    per date)."""
    n_dates = policy.times.size
    span = policy.q_max - policy.q_min
    q_norm = (policy.q_solvent - policy.q_min) / span if span > 0 else np.zeros_like(policy.q_solvent)
    equity = np.vstack([policy.p_solvent, np.zeros((1, policy.w_nodes.size))])
    tables = {
        "w_nodes": policy.w_nodes,
        "times": policy.times,
        "equity": equity,            # (M+1, n_w); final row is the forced liquidation
        "withdrawal_norm": q_norm,   # (M+1, n_w)
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, grid_vals in (("heatmap_p.csv", equity), ("heatmap_q.csv", q_norm)):
            path = os.path.join(out_dir, name)
            with open(path, "w", newline="") as f:
                if header_comment:
                    f.write(f"# {header_comment}\n")
                writer = csv.writer(f)
                writer.writerow(["wealth"] + [f"t{t:g}" for t in policy.times])
                for i, w in enumerate(policy.w_nodes):
                    writer.writerow([repr(float(w))] + [repr(float(v)) for v in grid_vals[:, i]])
    return tables
