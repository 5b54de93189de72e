"""Fourier propagation of value surfaces between rebalancing dates.

Between withdrawal dates there are no cash flows, controls, or
discounting, so the value function satisfies a pure expectation
recursion: V(x, t) = E[V(x + X, t + dt)] with X the joint log-return
over the interval.  On equally spaced log grids this is a correlation
against the transition density, i.e. a product with the characteristic
function in Fourier space:

    V_t = IFFT( FFT(V_{t+dt}) * phi(u) ),   u = 2*pi*fftfreq(N, h)

(with numpy's e^{-iux} forward-transform convention the multiplier is
the plain characteristic function; a drift-only model then shifts the
surface by drift*dt in log space, as it must).

Solvent states live on the 2-D (log s, log b) grid and use the joint
stock/bond law.  In-debt states (stock liquidated, wealth = -b' < 0)
live on a 1-D log-debt grid and evolve under the bond law with the
borrowing spread added to the drift.

Wrap-around artifacts are controlled by domain extension: surfaces are
padded with replicated edge values before the FFT and cropped after.
Edge replication is safe here because the surfaces this solver
propagates are asymptotically linear in wealth with a tiny slope (the
stabilization weight), so the replication error near the (far away)
boundaries is negligible; the widened-domain check in the test suite
pins this down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .market import MarketModel, joint_char_fn

__all__ = ["GridSpec", "ValueSurface", "TransitionKernel", "build_grids", "build_kernel", "propagate"]

DEFAULT_LOG_CENTER = math.log(100.0)  # wealth units: thousands
DEFAULT_LOG_HALF_WIDTH = 8.0
DEFAULT_PAD_FRACTION = 0.25

_IMAG_RESIDUE_REL = 1e-9


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Log-space grids: n_x nodes in x = log s, n_y in y = log b, and an
    n_debt-node log-debt grid sharing the y range.  `pad` is the domain
    extension width in log units applied per side before each FFT."""

    n_x: int
    n_y: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    n_debt: int
    pad: float

    def __post_init__(self):
        for name, n in (("n_x", self.n_x), ("n_y", self.n_y)):
            if n < 64:
                raise ValueError(f"{name} must be >= 64, got {n}")
            if not _is_power_of_two(n):
                raise ValueError(f"{name} must be a power of two, got {n}")
        if self.n_debt < 64:
            raise ValueError(f"n_debt must be >= 64, got {self.n_debt}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid ranges must be increasing")
        if self.pad < 0:
            raise ValueError("pad must be >= 0")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.n_y - 1)

    @property
    def d_debt(self) -> float:
        return (self.y_max - self.y_min) / (self.n_debt - 1)

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def y_nodes(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def debt_log_nodes(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_debt)

    @property
    def s_nodes(self) -> np.ndarray:
        return np.exp(self.x_nodes)

    @property
    def b_nodes(self) -> np.ndarray:
        return np.exp(self.y_nodes)

    @property
    def debt_nodes(self) -> np.ndarray:
        """Debt magnitudes b' > 0; the represented wealth is -b'."""
        return np.exp(self.debt_log_nodes)

    def pad_counts(self) -> tuple[int, int, int]:
        """(pad nodes in x, in y, in debt) for the requested pad width."""
        return (
            int(math.ceil(self.pad / self.dx)),
            int(math.ceil(self.pad / self.dy)),
            int(math.ceil(self.pad / self.d_debt)),
        )

    def metadata(self) -> dict:
        return {
            "n_x": self.n_x, "n_y": self.n_y, "n_debt": self.n_debt,
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max, "pad": self.pad,
        }


def build_grids(
    n_x: int,
    n_y: int | None = None,
    *,
    n_debt: int | None = None,
    widen: float = 0.0,
    pad_fraction: float = DEFAULT_PAD_FRACTION,
    center: float = DEFAULT_LOG_CENTER,
    half_width: float = DEFAULT_LOG_HALF_WIDTH,
) -> GridSpec:
    """Grids on [log(100) - 8, log(100) + 8] (thousands) by default, with
    identical b and debt ranges.  `widen` extends both ends by that many
    log units (the localization check); `pad_fraction` sets the domain
    extension width as a fraction of the range."""
    if n_y is None:
        n_y = n_x
    if n_debt is None:
        n_debt = n_y
    lo = center - half_width - widen
    hi = center + half_width + widen
    pad = pad_fraction * (hi - lo)
    return GridSpec(
        n_x=n_x, n_y=n_y, x_min=lo, x_max=hi, y_min=lo, y_max=hi, n_debt=n_debt, pad=pad
    )


@dataclass
class ValueSurface:
    """Discrete value function at one time instant: `solvent[i, j]` over
    (s_i, b_j), both positive, and `debt[k]` over wealth -b'_k < 0 (stock
    holding liquidated).  Carries its grid and the frozen shortfall
    threshold wstar."""

    grid: GridSpec
    solvent: np.ndarray  # (n_x, n_y)
    debt: np.ndarray     # (n_debt,)
    wstar: float
    t: float

    def __post_init__(self):
        if self.solvent.shape != (self.grid.n_x, self.grid.n_y):
            raise ValueError("solvent table shape does not match grid")
        if self.debt.shape != (self.grid.n_debt,):
            raise ValueError("debt table shape does not match grid")


@dataclass(frozen=True)
class TransitionKernel:
    """Fourier multipliers for one no-trading interval: the joint
    stock/bond characteristic function on the padded 2-D frequency grid,
    and the spread-adjusted bond characteristic function on the padded
    1-D debt frequency grid."""

    grid: GridSpec
    dt: float
    mult_solvent: np.ndarray  # complex, padded (n_x + 2px, n_y + 2py)
    mult_debt: np.ndarray     # complex, padded (n_debt + 2pd,)
    pad_x: int
    pad_y: int
    pad_debt: int


def _conjugate_symmetrize(mult: np.ndarray) -> np.ndarray:
    """Average the multiplier with its reflected conjugate so it is exactly
    the DFT symbol of a real-valued kernel.  The continuous characteristic
    function already satisfies phi(-u) = conj(phi(u)); on an even-sized
    grid the Nyquist bins are their own reflection and need this pinning,
    everywhere else the average is a no-op up to rounding."""
    if mult.ndim == 1:
        neg = np.roll(mult[::-1], 1)
    else:
        neg = np.roll(np.roll(mult[::-1, ::-1], 1, axis=0), 1, axis=1)
    return 0.5 * (mult + np.conj(neg))


def build_kernel(model: MarketModel, grid: GridSpec, dt: float) -> TransitionKernel:
    """Evaluate the model's characteristic functions at the discrete
    frequencies of the padded grids."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    px, py, pd = grid.pad_counts()
    u_x = 2.0 * np.pi * sfft.fftfreq(grid.n_x + 2 * px, d=grid.dx)
    u_y = 2.0 * np.pi * sfft.fftfreq(grid.n_y + 2 * py, d=grid.dy)
    mult2 = _conjugate_symmetrize(
        joint_char_fn(model, u_x[:, None], u_y[None, :], dt, with_spread=False)
    )

    u_d = 2.0 * np.pi * sfft.fftfreq(grid.n_debt + 2 * pd, d=grid.d_debt)
    # bond-only law with spread: zero stock frequency kills the stock terms
    mult1 = _conjugate_symmetrize(joint_char_fn(model, 0.0, u_d, dt, with_spread=True))
    return TransitionKernel(
        grid=grid, dt=dt, mult_solvent=mult2, mult_debt=mult1, pad_x=px, pad_y=py, pad_debt=pd
    )


def _fft_expectation(values: np.ndarray, mult: np.ndarray, pads: tuple[int, ...]) -> np.ndarray:
    """pad (edge replication) -> FFT -> multiplier -> IFFT -> residue check -> crop."""
    padded = np.pad(values, tuple((p, p) for p in pads), mode="edge")
    if padded.ndim == 2:
        spec = sfft.fft2(padded)
        out = sfft.ifft2(spec * mult)
    else:
        spec = sfft.fft(padded)
        out = sfft.ifft(spec * mult)
    real = out.real
    scale = np.abs(real).max()
    residue = np.abs(out.imag).max()
    if residue > _IMAG_RESIDUE_REL * max(scale, 1e-12):
        raise ArithmeticError(
            f"imaginary residue {residue:.3e} exceeds {_IMAG_RESIDUE_REL:.0e} * max|V| "
            f"({scale:.3e}); kernel is inconsistent"
        )
    crop = tuple(slice(p, n - p) for p, n in zip(pads, padded.shape))
    return np.ascontiguousarray(real[crop])


def propagate(surface: ValueSurface, kernel: TransitionKernel) -> ValueSurface:
    """Advance a surface backward across one no-trading interval (no cash
    flows, no discounting): conditional expectation under the joint law on
    the solvent grid, under the spread-adjusted bond law on the debt grid."""
    if kernel.grid is not surface.grid and kernel.grid != surface.grid:
        raise ValueError("kernel was built for a different grid")
    if not (np.isfinite(surface.solvent).all() and np.isfinite(surface.debt).all()):
        raise ValueError("surface contains non-finite values")
    solvent = _fft_expectation(surface.solvent, kernel.mult_solvent, (kernel.pad_x, kernel.pad_y))
    debt = _fft_expectation(surface.debt, kernel.mult_debt, (kernel.pad_debt,))
    return replace(surface, solvent=solvent, debt=debt, t=surface.t - kernel.dt)
