"""Base-case inputs: jump-diffusion parameters fitted to the real
(CPI-deflated) CRSP value-weighted stock index and the real 10-year US
Treasury index over 1926:1-2019:12, and the standard 30-year retirement
scenario (units: thousands of dollars, all rates real per annum)."""

from __future__ import annotations

from .dp import Scenario
from .market import AssetParams, JumpLaw, MarketModel

__all__ = ["crsp_real_market", "base_scenario"]


def crsp_real_market() -> MarketModel:
    stock = AssetParams(
        drift=0.0877,
        sigma=0.1459,
        jump=JumpLaw(intensity=0.3191, p_up=0.2333, eta_up=4.3608, eta_down=5.504),
    )
    bond = AssetParams(
        drift=0.0239,
        sigma=0.0538,
        jump=JumpLaw(intensity=0.3830, p_up=0.6111, eta_up=16.19, eta_down=17.27),
    )
    return MarketModel(stock=stock, bond=bond, rho_sb=0.04554, borrow_spread=0.0)


def base_scenario(
    q_min: float = 35.0,
    q_max: float = 60.0,
    kappa: float = 1.0,
    **overrides,
) -> Scenario:
    """30-year horizon, yearly withdrawals/rebalances, initial wealth 1000,
    shortfall level 5%."""
    kwargs = dict(
        horizon=30.0,
        n_rebalances=30,
        w0=1000.0,
        q_min=q_min,
        q_max=q_max,
        alpha=0.05,
        kappa=kappa,
        stabilization=1e-6,
    )
    kwargs.update(overrides)
    return Scenario(**kwargs)
