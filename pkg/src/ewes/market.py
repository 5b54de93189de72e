"""Correlated double-exponential jump-diffusion market model.

Both the stock index S and the constant-maturity bond index B follow
jump diffusions with compensated drift:

    dS/S = (mu_s - lam_s*kap_s) dt + sig_s dZ_s + d( sum_i (xi_i - 1) )

and analogously for B, with an extra borrowing spread added to the bond
drift while the account is in debt (B < 0).  Log jump sizes y = log(xi)
are double-exponential:

    f(y) = p_up * eta_up * exp(-eta_up*y)        for y >= 0
         = (1-p_up) * eta_down * exp(eta_down*y) for y <  0

so the jump compensator is kap = E[xi - 1]
= p_up*eta_up/(eta_up-1) + (1-p_up)*eta_down/(eta_down+1) - 1
(finite only for eta_up > 1).  The two Brownian drivers are correlated
(rho_sb); the two jump processes are independent of each other and of
both Brownians.

Period returns are sampled exactly in law (Poisson jump counts, not a
Bernoulli approximation), so one draw covers a whole rebalancing
interval with no time-discretization error.  All sampling goes through
an explicit numpy Generator; callers that need parallel reproducibility
should key independent Philox streams by (seed, block index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "JumpLaw",
    "AssetParams",
    "MarketModel",
    "PeriodReturn",
    "jump_compensator",
    "jump_log_density",
    "jump_size_char",
    "joint_char_fn",
    "sample_jump_sizes",
    "sample_period_return",
    "sample_period_returns",
]

_TINY = 1e-300  # floor before log() to avoid -inf from a measure-zero uniform


@dataclass(frozen=True)
class JumpLaw:
    """Double-exponential law for log jump multipliers of one asset.

    intensity : expected jumps per year (Poisson rate, >= 0)
    p_up      : probability a jump is upward, in [0, 1]
    eta_up    : decay rate of upward log-jumps (> 1 so E[xi] is finite)
    eta_down  : decay rate of downward log-jumps (> 0)
    """

    intensity: float
    p_up: float
    eta_up: float
    eta_down: float

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError(f"jump intensity must be >= 0, got {self.intensity}")
        if not 0.0 <= self.p_up <= 1.0:
            raise ValueError(f"p_up must lie in [0, 1], got {self.p_up}")
        if self.eta_up <= 1.0:
            raise ValueError(
                f"eta_up must exceed 1 for a finite mean jump size, got {self.eta_up}"
            )
        if self.eta_down <= 0.0:
            raise ValueError(f"eta_down must be positive, got {self.eta_down}")


@dataclass(frozen=True)
class AssetParams:
    """Per-asset drift/volatility plus its jump law (all rates per annum, real)."""

    drift: float
    sigma: float
    jump: JumpLaw

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class MarketModel:
    """The two-asset market: stock, bond, Brownian correlation, borrowing spread."""

    stock: AssetParams
    bond: AssetParams
    rho_sb: float
    borrow_spread: float = 0.0

    def __post_init__(self):
        if abs(self.rho_sb) > 1.0:
            raise ValueError(f"|rho_sb| must be <= 1, got {self.rho_sb}")
        if self.borrow_spread < 0:
            raise ValueError(f"borrow_spread must be >= 0, got {self.borrow_spread}")


@dataclass(frozen=True)
class PeriodReturn:
    """Gross multiplicative return of each index over one period."""

    stock_gross: float
    bond_gross: float

    def __post_init__(self):
        if not (self.stock_gross > 0 and self.bond_gross > 0):
            raise ValueError("gross returns must be strictly positive")


def jump_compensator(law: JumpLaw) -> float:
    """E[xi - 1] for the double-exponential jump multiplier."""
    if law.eta_up <= 1.0:
        raise ValueError("mean jump size diverges for eta_up <= 1")
    up = law.p_up * law.eta_up / (law.eta_up - 1.0)
    down = (1.0 - law.p_up) * law.eta_down / (law.eta_down + 1.0)
    return up + down - 1.0


def jump_log_density(law: JumpLaw, y):
    """Density of y = log(xi); vectorized in y."""
    y = np.asarray(y, dtype=float)
    up = law.p_up * law.eta_up * np.exp(-law.eta_up * np.maximum(y, 0.0))
    down = (1.0 - law.p_up) * law.eta_down * np.exp(law.eta_down * np.minimum(y, 0.0))
    out = np.where(y >= 0.0, up, down)
    return out if out.ndim else float(out)


def jump_size_char(law: JumpLaw, u):
    """E[exp(i*u*y)] for a single double-exponential log jump size."""
    u = np.asarray(u)
    return (
        law.p_up * law.eta_up / (law.eta_up - 1j * u)
        + (1.0 - law.p_up) * law.eta_down / (law.eta_down + 1j * u)
    )


def _compensated_drift(asset: AssetParams) -> float:
    lam = asset.jump.intensity
    kap = jump_compensator(asset.jump) if lam > 0 else 0.0
    return asset.drift - lam * kap - 0.5 * asset.sigma**2


def joint_char_fn(model: MarketModel, u_s, u_b, dt: float, with_spread: bool = False):
    """Characteristic function E[exp(i*u_s*X_s + i*u_b*X_b)] of the joint
    log-returns (X_s, X_b) over an interval of length dt.

    Gaussian part: correlated bivariate normal with the compensated drifts
    and covariance dt * [[sig_s^2, rho*sig_s*sig_b], [., sig_b^2]].  Jump
    part: two independent compound-Poisson double-exponential components.
    with_spread adds the borrowing spread to the bond drift (in-debt
    dynamics).  Broadcasts over array-valued u_s, u_b.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    u_s = np.asarray(u_s)
    u_b = np.asarray(u_b)
    s, b = model.stock, model.bond

    d_s = _compensated_drift(s)
    d_b = _compensated_drift(b) + (model.borrow_spread if with_spread else 0.0)

    expo = 1j * dt * (u_s * d_s + u_b * d_b) - 0.5 * dt * (
        (s.sigma * u_s) ** 2
        + 2.0 * model.rho_sb * s.sigma * b.sigma * u_s * u_b
        + (b.sigma * u_b) ** 2
    )
    if s.jump.intensity > 0:
        expo = expo + s.jump.intensity * dt * (jump_size_char(s.jump, u_s) - 1.0)
    if b.jump.intensity > 0:
        expo = expo + b.jump.intensity * dt * (jump_size_char(b.jump, u_b) - 1.0)
    return np.exp(expo)


def sample_jump_sizes(law: JumpLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. log jump sizes by inverse CDF from a single uniform each."""
    u = np.maximum(rng.random(n), _TINY)
    y = np.empty(n)
    down = u < (1.0 - law.p_up)
    if down.any():
        y[down] = np.log(u[down] / (1.0 - law.p_up)) / law.eta_down
    up = ~down
    if up.any():
        y[up] = -np.log(np.maximum((1.0 - u[up]) / max(law.p_up, _TINY), _TINY)) / law.eta_up
    return y


def _compound_jump_totals(law: JumpLaw, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sum of `counts[k]` i.i.d. log jump sizes per entry (exact in law)."""
    total = np.zeros(counts.shape)
    remaining = counts.copy()
    while True:
        active = remaining > 0
        n_active = int(active.sum())
        if n_active == 0:
            break
        total[active] += sample_jump_sizes(law, n_active, rng)
        remaining[active] -= 1
    return total


def _sample_log_returns(
    model: MarketModel, dt: float, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(X_s, X_b) joint log-returns over dt, solvent dynamics, shape (n,).

    Draw order is fixed (stock normals, bond normals, stock counts, bond
    counts, stock jumps, bond jumps) so a given stream always yields the
    same sample sequence.
    """
    s, b = model.stock, model.bond
    z_s = rng.standard_normal(n)
    z_perp = rng.standard_normal(n)
    z_b = model.rho_sb * z_s + np.sqrt(max(1.0 - model.rho_sb**2, 0.0)) * z_perp

    n_s = rng.poisson(s.jump.intensity * dt, n) if s.jump.intensity > 0 else np.zeros(n, dtype=np.int64)
    n_b = rng.poisson(b.jump.intensity * dt, n) if b.jump.intensity > 0 else np.zeros(n, dtype=np.int64)
    j_s = _compound_jump_totals(s.jump, n_s, rng) if s.jump.intensity > 0 else 0.0
    j_b = _compound_jump_totals(b.jump, n_b, rng) if b.jump.intensity > 0 else 0.0

    sq = np.sqrt(dt)
    x_s = _compensated_drift(s) * dt + s.sigma * sq * z_s + j_s
    x_b = _compensated_drift(b) * dt + b.sigma * sq * z_b + j_b
    return x_s, x_b


def sample_period_returns(
    model: MarketModel, dt: float, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n exact-in-law period samples: (stock_gross, bond_gross, bond_gross_in_debt).

    The in-debt bond return reuses the same driving noise with the
    borrowing spread added to the drift, i.e. bond_gross * exp(spread*dt);
    this is the exact conditional coupling of the two drift variants.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x_s, x_b = _sample_log_returns(model, dt, n, rng)
    gs = np.exp(x_s)
    gb = np.exp(x_b)
    return gs, gb, gb * np.exp(model.borrow_spread * dt)


def sample_period_return(
    model: MarketModel, dt: float, insolvent: bool, rng: np.random.Generator
) -> PeriodReturn:
    """One period sample; when insolvent the bond carries the borrowing spread
    (the stock component is sampled but unused by an insolvent account)."""
    gs, gb, gbi = sample_period_returns(model, dt, 1, rng)
    return PeriodReturn(float(gs[0]), float(gbi[0] if insolvent else gb[0]))
