"""Configuration-driven command line.

Verbs:
    solve      compute and store the optimal policy for one scenario
    simulate   Monte Carlo evaluation of a policy in the synthetic market
    backtest   block-bootstrap evaluation on a historical return series
    frontier   sweep the risk-aversion weight kappa and trace the EW-ES frontier
    benchmark  constant-weight constant-withdrawal reference grid

Every artifact embeds the hash of the fully resolved configuration and
the seed, and re-running the same configuration reproduces the outputs
bit-for-bit.  See configs/base.yaml for the document layout.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from .bootstrap import backtest, load_return_series
from .config import RunConfig, load_config
from .dp import Policy, optimize_wstar
from .mc import FixedPolicy, PERCENTILE_LEVELS, heatmap_export, simulate, summarize
from .pide import build_grids

__all__ = ["main", "run_frontier", "run_benchmark", "FrontierPoint"]

FRONTIER_SCHEMA = "ewes.frontier.v1"
BENCHMARK_SCHEMA = "ewes.benchmark.v1"

KAPPA_HARD_CAP = 1e5
KAPPA_WARN = 1e3


@dataclass(frozen=True)
class FrontierPoint:
    kappa: float
    es: float
    ew: float
    median_wt: float
    equity_median_mean: float
    wstar: float

    def __post_init__(self):
        vals = (self.kappa, self.es, self.ew, self.median_wt,
                self.equity_median_mean, self.wstar)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("frontier point contains non-finite fields")


def _comment(cfg: RunConfig, seed: int, schema: str) -> str:
    return f"config_hash={cfg.hash()} seed={seed} schema={schema}"


def _write_json(path, payload: dict, cfg: RunConfig, seed: int) -> None:
    doc = {"config_hash": cfg.hash(), "seed": seed, "config": cfg.resolved()}
    doc.update(payload)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def _write_csv(path, header: list[str], rows, comment: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (int, float, np.floating)) else x
                             for x in row])


def _write_percentile_fans(out_dir, stats, cfg, seed) -> None:
    fans = {
        "percentiles_wealth.csv": stats.wealth_percentiles,
        "percentiles_withdrawal.csv": stats.withdrawal_percentiles,
        "percentiles_equity.csv": stats.equity_percentiles,
    }
    for name, table in fans.items():
        n = len(next(iter(table.values())))
        rows = [
            [stats.times[i]] + [table[lev][i] for lev in PERCENTILE_LEVELS]
            for i in range(n)
        ]
        _write_csv(
            os.path.join(out_dir, name),
            ["time"] + [f"p{lev}" for lev in PERCENTILE_LEVELS],
            rows,
            _comment(cfg, seed, "ewes.percentiles.v1"),
        )


def _check_kappa(kappa: float) -> None:
    if kappa > KAPPA_HARD_CAP:
        raise ValueError(f"kappa={kappa:g} exceeds the supported cap {KAPPA_HARD_CAP:g}")
    if kappa > KAPPA_WARN:
        warnings.warn(
            f"kappa={kappa:g} is in the numerically fragile regime (> {KAPPA_WARN:g}); "
            "solutions may be inaccurate",
            stacklevel=2,
        )


def _grids(cfg: RunConfig):
    return [build_grids(n, **cfg.grid_kwargs()) for n in cfg.grid_ladder()]


def _solve_policy(cfg: RunConfig, scenario):
    _check_kappa(scenario.kappa)
    return optimize_wstar(cfg.market(), scenario, _grids(cfg), **cfg.wstar_kwargs())


def _resolve_policy(cfg: RunConfig, scenario, out_dir: str, policy_path: str | None):
    """Load an explicit policy, else <out>/policy.bin, else solve and store."""
    if policy_path:
        return Policy.load(policy_path), None
    default = os.path.join(out_dir, "policy.bin")
    if os.path.exists(default):
        return Policy.load(default), None
    result = _solve_policy(cfg, scenario)
    result.policy.save(default)
    return result.policy, result


def cmd_solve(cfg: RunConfig, args) -> None:
    out = _ensure_out(cfg)
    scenario = cfg.scenario()
    result = _solve_policy(cfg, scenario)
    result.policy.save(os.path.join(out, "policy.bin"))
    _write_json(
        os.path.join(out, "summary.json"),
        {"mode": "solve", "wstar": result.wstar, "value": result.value,
         "trace": result.trace},
        cfg, cfg.raw["simulate"]["seed"],
    )
    print(f"solve: wstar={result.wstar:.4f} value={result.value:.6f} -> {out}")


def cmd_simulate(cfg: RunConfig, args) -> None:
    out = _ensure_out(cfg)
    scenario = cfg.scenario()
    seed = cfg.raw["simulate"]["seed"]
    n_paths = cfg.raw["simulate"]["n_paths"]
    policy, solved = _resolve_policy(cfg, scenario, out, args.policy)
    ens = simulate(cfg.market(), scenario, policy, n_paths, seed,
                   n_workers=cfg.raw["simulate"]["workers"])
    stats = summarize(ens, scenario.alpha)
    payload = {"mode": "simulate", "stats": stats.to_dict(), "wstar": policy.wstar}
    if solved is not None:
        payload["solve_value"] = solved.value
    _write_json(os.path.join(out, "summary.json"), payload, cfg, seed)
    _write_percentile_fans(out, stats, cfg, seed)
    heatmap_export(policy, out, header_comment=_comment(cfg, seed, "ewes.heatmap.v1"))
    print(f"simulate: EW={stats.ew:.4f} ES({scenario.alpha:g})={stats.es:.4f} "
          f"median[W_T]={stats.median_wt:.4f} -> {out}")


def cmd_backtest(cfg: RunConfig, args) -> None:
    out = _ensure_out(cfg)
    scenario = cfg.scenario()
    series_path = cfg.raw["bootstrap"]["series"]
    if not series_path:
        raise ValueError("backtest requires a return series (--series or bootstrap.series)")
    series = load_return_series(series_path)
    policy, _ = _resolve_policy(cfg, scenario, out, args.policy)
    bcfg = cfg.bootstrap_config(scenario)
    stats = backtest(policy, scenario, series, bcfg,
                     borrow_spread=cfg.market().borrow_spread)
    _write_json(
        os.path.join(out, "summary.json"),
        {"mode": "backtest", "stats": stats.to_dict(), "wstar": policy.wstar,
         "block_size_years": bcfg.block_size_years, "n_resamples": bcfg.n_resamples},
        cfg, bcfg.seed,
    )
    _write_percentile_fans(out, stats, cfg, bcfg.seed)
    print(f"backtest: EW={stats.ew:.4f} ES({scenario.alpha:g})={stats.es:.4f} -> {out}")


def run_frontier(cfg: RunConfig) -> list[FrontierPoint]:
    """Solve/simulate one point per kappa; persists policies and the
    frontier table; rows sorted by kappa."""
    out = _ensure_out(cfg)
    seed = cfg.raw["simulate"]["seed"]
    n_paths = cfg.raw["simulate"]["n_paths"]
    kappas = sorted(cfg.raw["frontier"]["kappas"])
    if not kappas:
        raise ValueError("frontier mode needs a non-empty kappa list")
    points = []
    for kappa in kappas:
        stage = f"kappa={kappa:g}"
        try:
            scenario = cfg.scenario(kappa=kappa)
            _check_kappa(kappa)
            result = optimize_wstar(cfg.market(), scenario, _grids(cfg), **cfg.wstar_kwargs())
            result.policy.save(os.path.join(out, f"policy_kappa{kappa:g}.bin"))
        except Exception as exc:
            raise RuntimeError(f"frontier solve stage failed ({stage})") from exc
        try:
            ens = simulate(cfg.market(), scenario, result.policy, n_paths, seed,
                           n_workers=cfg.raw["simulate"]["workers"])
            stats = summarize(ens, scenario.alpha)
        except Exception as exc:
            raise RuntimeError(f"frontier simulate stage failed ({stage})") from exc
        points.append(FrontierPoint(
            kappa=kappa, es=stats.es, ew=stats.ew, median_wt=stats.median_wt,
            equity_median_mean=stats.equity_median_mean, wstar=result.wstar,
        ))
    _write_csv(
        os.path.join(out, "frontier.csv"),
        ["kappa", "es", "ew", "median_wt", "equity_median_mean", "wstar"],
        [[p.kappa, p.es, p.ew, p.median_wt, p.equity_median_mean, p.wstar] for p in points],
        _comment(cfg, seed, FRONTIER_SCHEMA),
    )
    _write_json(
        os.path.join(out, "summary.json"),
        {"mode": "frontier", "points": [vars(p) for p in points]},
        cfg, seed,
    )
    return points


def run_benchmark(cfg: RunConfig) -> list[dict]:
    """Constant-weight, constant-withdrawal grid in the synthetic market,
    plus the historical market when a series is configured."""
    out = _ensure_out(cfg)
    seed = cfg.raw["simulate"]["seed"]
    n_paths = cfg.raw["simulate"]["n_paths"]
    weights = cfg.raw["benchmark"]["weights"]
    q_bar = cfg.raw["benchmark"]["withdrawal"]
    scenario = cfg.scenario(q_min=q_bar, q_max=q_bar)
    series_path = cfg.raw["bootstrap"]["series"]
    series = load_return_series(series_path) if series_path else None

    rows = []
    for w in weights:
        stage = f"weight={w:g}"
        try:
            pol = FixedPolicy(equity_weight=w, withdrawal=q_bar)
            ens = simulate(cfg.market(), scenario, pol, n_paths, seed,
                           n_workers=cfg.raw["simulate"]["workers"])
            stats = summarize(ens, scenario.alpha)
            row = {"equity_weight": w, "es": stats.es, "median_wt": stats.median_wt,
                   "ew": stats.ew}
            if series is not None:
                bcfg = cfg.bootstrap_config(scenario)
                bstats = backtest(pol, scenario, series, bcfg,
                                  borrow_spread=cfg.market().borrow_spread)
                row["es_bootstrap"] = bstats.es
                row["median_wt_bootstrap"] = bstats.median_wt
            rows.append(row)
        except Exception as exc:
            raise RuntimeError(f"benchmark stage failed ({stage})") from exc
    header = list(rows[0].keys())
    _write_csv(
        os.path.join(out, "benchmark.csv"),
        header,
        [[r[h] for h in header] for r in rows],
        _comment(cfg, seed, BENCHMARK_SCHEMA),
    )
    _write_json(os.path.join(out, "summary.json"),
                {"mode": "benchmark", "rows": rows}, cfg, seed)
    return rows


def cmd_frontier(cfg: RunConfig, args) -> None:
    points = run_frontier(cfg)
    for p in points:
        print(f"kappa={p.kappa:g}: ES={p.es:.4f} EW={p.ew:.4f} wstar={p.wstar:.2f}")


def cmd_benchmark(cfg: RunConfig, args) -> None:
    rows = run_benchmark(cfg)
    for r in rows:
        print(f"weight={r['equity_weight']:g}: ES={r['es']:.4f} "
              f"median[W_T]={r['median_wt']:.4f}")


def _ensure_out(cfg: RunConfig) -> str:
    out = cfg.raw["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _parse_grid(text: str) -> int:
    parts = text.lower().split("x")
    if len(parts) != 2 or parts[0] != parts[1]:
        raise argparse.ArgumentTypeError("expected a square grid like 512x512")
    return int(parts[0])


def _ladder_to(n: int) -> list[int]:
    if n <= 256:
        return [n]
    ladder, size = [], 256
    while size < n:
        ladder.append(size)
        size *= 2
    ladder.append(n)
    return ladder


def _parse_kappas(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ewes", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, fn in (
        ("solve", cmd_solve), ("simulate", cmd_simulate), ("backtest", cmd_backtest),
        ("frontier", cmd_frontier), ("benchmark", cmd_benchmark),
    ):
        p = sub.add_parser(verb)
        p.set_defaults(handler=fn)
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None, help="Monte Carlo paths")
        p.add_argument("--grid", type=_parse_grid, default=None,
                       help="finest solve grid, e.g. 1024x1024")
        p.add_argument("--kappa", type=_parse_kappas, default=None,
                       help="kappa (frontier: comma-separated list)")
        p.add_argument("--series", default=None, help="historical return CSV")
        p.add_argument("--blocksize", type=float, default=None,
                       help="expected bootstrap blocksize in years")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--policy", default=None, help="stored policy to evaluate")
    return parser


def _overrides(args) -> dict:
    ov: dict = {}
    if args.out is not None:
        ov.setdefault("output", {})["dir"] = args.out
    if args.seed is not None:
        ov.setdefault("simulate", {})["seed"] = args.seed
        ov.setdefault("bootstrap", {})["seed"] = args.seed
    if args.paths is not None:
        ov.setdefault("simulate", {})["n_paths"] = args.paths
    if args.grid is not None:
        ov.setdefault("grid", {})["ladder"] = _ladder_to(args.grid)
    if args.kappa is not None:
        if args.verb == "frontier":
            ov.setdefault("frontier", {})["kappas"] = args.kappa
        else:
            if len(args.kappa) != 1:
                raise ValueError(f"{args.verb} takes a single kappa")
            ov.setdefault("scenario", {})["kappa"] = args.kappa[0]
    if args.series is not None:
        ov.setdefault("bootstrap", {})["series"] = args.series
    if args.blocksize is not None:
        ov.setdefault("bootstrap", {})["block_size_years"] = args.blocksize
    if args.workers is not None:
        ov.setdefault("simulate", {})["workers"] = args.workers
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        args.handler(cfg, args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
