"""Run configuration: a flat YAML document with one section per
subsystem, defaulting to the base-case inputs.  Every run echoes the
fully resolved configuration and its hash into its output artifacts so
a result can be reproduced bit-for-bit from (config, seed)."""

from __future__ import annotations

import copy
import hashlib
import json

import yaml

from .bootstrap import BootstrapConfig
from .dp import Scenario
from .market import AssetParams, JumpLaw, MarketModel

__all__ = ["RunConfig", "load_config", "DEFAULT_CONFIG"]

DEFAULT_CONFIG: dict = {
    "market": {
        "stock": {
            "drift": 0.0877,
            "sigma": 0.1459,
            "jump": {"intensity": 0.3191, "p_up": 0.2333, "eta_up": 4.3608, "eta_down": 5.504},
        },
        "bond": {
            "drift": 0.0239,
            "sigma": 0.0538,
            "jump": {"intensity": 0.3830, "p_up": 0.6111, "eta_up": 16.19, "eta_down": 17.27},
        },
        "correlation": 0.04554,
        "borrow_spread": 0.0,
    },
    "scenario": {
        "horizon": 30.0,
        "rebalances": 30,
        "w0": 1000.0,
        "q_min": 35.0,
        "q_max": 60.0,
        "alpha": 0.05,
        "kappa": 1.0,
        "stabilization": 1.0e-6,
        "discount": 0.0,
        "q_step": 1.0,
    },
    "grid": {
        "ladder": [256, 512],
        "widen": 0.0,
        "pad_fraction": 0.25,
        "n_debt": None,
    },
    "wstar": {"scan_lo": -500.0, "scan_hi": 1500.0, "scan_step": 25.0, "xtol": 0.1},
    "simulate": {"n_paths": 2_560_000, "seed": 20260809, "workers": 1},
    "bootstrap": {
        "block_size_years": 0.25,
        "n_resamples": 100_000,
        "seed": 20260809,
        "series": None,
    },
    "frontier": {"kappas": [0.2, 0.5, 1.0, 5.0]},
    "benchmark": {"weights": [0.0, 0.2, 0.4, 0.6, 0.8], "withdrawal": 40.0},
    "output": {"dir": "out"},
}


def _deep_update(base: dict, extra: dict) -> dict:
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val
    return base


class RunConfig:
    """Resolved configuration plus constructors for the runtime objects."""

    def __init__(self, raw: dict):
        self.raw = raw

    # -- constructed objects ------------------------------------------------
    def market(self) -> MarketModel:
        m = self.raw["market"]

        def asset(section):
            j = section["jump"]
            return AssetParams(
                drift=section["drift"],
                sigma=section["sigma"],
                jump=JumpLaw(
                    intensity=j["intensity"], p_up=j["p_up"],
                    eta_up=j["eta_up"], eta_down=j["eta_down"],
                ),
            )

        return MarketModel(
            stock=asset(m["stock"]),
            bond=asset(m["bond"]),
            rho_sb=m["correlation"],
            borrow_spread=m["borrow_spread"],
        )

    def scenario(self, *, kappa: float | None = None, q_min=None, q_max=None) -> Scenario:
        s = self.raw["scenario"]
        return Scenario(
            horizon=s["horizon"],
            n_rebalances=s["rebalances"],
            w0=s["w0"],
            q_min=s["q_min"] if q_min is None else q_min,
            q_max=s["q_max"] if q_max is None else q_max,
            alpha=s["alpha"],
            kappa=s["kappa"] if kappa is None else kappa,
            stabilization=s["stabilization"],
            discount=s["discount"],
            q_step=s["q_step"],
        )

    def grid_ladder(self) -> list[int]:
        return list(self.raw["grid"]["ladder"])

    def grid_kwargs(self) -> dict:
        g = self.raw["grid"]
        kw = {"widen": g["widen"], "pad_fraction": g["pad_fraction"]}
        if g.get("n_debt"):
            kw["n_debt"] = g["n_debt"]
        return kw

    def wstar_kwargs(self) -> dict:
        w = self.raw["wstar"]
        return {
            "scan_lo": w["scan_lo"], "scan_hi": w["scan_hi"],
            "scan_step": w["scan_step"], "xtol": w["xtol"],
        }

    def bootstrap_config(self, scenario: Scenario) -> BootstrapConfig:
        b = self.raw["bootstrap"]
        return BootstrapConfig(
            block_size_years=b["block_size_years"],
            n_resamples=b["n_resamples"],
            seed=b["seed"],
            horizon_years=scenario.horizon,
            months_per_rebalance=int(round(scenario.dt * 12)),
        )

    # -- provenance ----------------------------------------------------------
    def resolved(self) -> dict:
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, overlaid with the YAML file (if any), overlaid with
    explicit overrides (CLI flags)."""
    raw = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            user = yaml.safe_load(f) or {}
        if not isinstance(user, dict):
            raise ValueError("config file must be a mapping of sections")
        _deep_update(raw, user)
    if overrides:
        _deep_update(raw, overrides)
    return RunConfig(raw)
