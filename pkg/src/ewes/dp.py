"""Backward dynamic programming for the joint withdrawal/allocation control.

The decumulation objective (reward = expected total withdrawals, risk =
expected shortfall of terminal wealth at level alpha, scalarized with
weight kappa) is solved through an auxiliary value function with a fixed
shortfall threshold wstar:

    terminal:   V(w, T+) = kappa*(wstar + min(w - wstar, 0)/alpha)
                           + eps*w                       (stabilization)
    rebalance:  V(w-, tn-) = max_q { e^{-beta*tn} q
                             + max_p V((w- - q) p, (w- - q)(1-p), tn+) }
    interval:   Fourier propagation (pide.propagate)

Controls depend on total wealth only: the allocation p on wealth after
withdrawal, the withdrawal q on wealth before.  Both are found by
exhaustive search (p on an equally spaced grid, q in fixed increments)
at a set of discrete wealth nodes, then interpolated linearly in
log-wealth wherever the recursion needs them.  Ties break toward the
smaller control, which keeps runs reproducible and matches the
smallest-withdrawal tie rule under which the continuous-time limit of
the withdrawal control is bang-bang.

Insolvent states (wealth <= 0 after a withdrawal) hold no stock and
admit only p = 0; they live on the 1-D debt grid and keep withdrawing
within bounds while debt compounds at the spread-adjusted bond return.

The outer problem maximizes the time-zero value over wstar: exhaustive
scan on the coarsest grid, then golden-section refinement on each finer
grid.  Once found, wstar stays frozen inside the stored policy, which
makes the policy implementable for all later dates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .market import MarketModel
from .pide import GridSpec, TransitionKernel, ValueSurface, build_kernel, propagate

__all__ = [
    "Scenario",
    "ControlCurve",
    "Policy",
    "RebalanceResult",
    "SolveResult",
    "WStarResult",
    "control_wealth_nodes",
    "terminal_values",
    "optimize_allocation",
    "optimize_withdrawal",
    "apply_rebalance",
    "solve_auxiliary",
    "optimize_wstar",
]

_TINY = 1e-300
_T_EPS = 1e-9

POLICY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    """Decumulation problem data (wealth in thousands, rates per annum)."""

    horizon: float = 30.0
    n_rebalances: int = 30
    w0: float = 1000.0
    q_min: float = 35.0
    q_max: float = 60.0
    alpha: float = 0.05
    kappa: float = 1.0
    stabilization: float = 1e-6
    discount: float = 0.0
    q_step: float = 1.0
    n_p: int | None = None  # allocation grid size; defaults to the grid's n_y

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.n_rebalances < 1:
            raise ValueError("need at least one rebalancing date")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if not 0.0 <= self.q_min <= self.q_max:
            raise ValueError("require 0 <= q_min <= q_max")
        if self.q_step <= 0:
            raise ValueError("q_step must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_rebalances

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_rebalances + 1)

    @property
    def n_withdrawals(self) -> int:
        return self.n_rebalances + 1

    def q_grid(self) -> np.ndarray:
        """Admissible withdrawals: q_min, q_min + step, ..., q_max."""
        span = self.q_max - self.q_min
        n = int(math.floor(span / self.q_step + 1e-9)) + 1
        qs = self.q_min + self.q_step * np.arange(n)
        if qs[-1] < self.q_max - 1e-9:
            qs = np.append(qs, self.q_max)
        else:
            qs[-1] = self.q_max
        return qs


@dataclass(frozen=True)
class ControlCurve:
    """A control (or value) tabulated on positive wealth nodes, looked up
    by linear interpolation in log-wealth and clamped at the ends."""

    nodes: np.ndarray
    values: np.ndarray

    def at(self, w) -> np.ndarray:
        logw = np.log(np.maximum(w, _TINY))
        return np.interp(logw, np.log(self.nodes), self.values)


def control_wealth_nodes(grid: GridSpec) -> np.ndarray:
    """n_y log-spaced positive wealth nodes spanning everything the
    (s, b) grid can represent: from the smallest s up to s_max + b_max."""
    lo = math.exp(grid.x_min)
    hi = math.exp(grid.x_max) + math.exp(grid.y_max)
    return np.exp(np.linspace(math.log(lo), math.log(hi), grid.n_y))


# ---------------------------------------------------------------------------
# continuation evaluation


class _InterpPlan:
    """Precomputed clamped-bilinear weights for a fixed set of landing
    states, reusable across several surfaces that share the grid."""

    def __init__(self, grid: GridSpec, s, b, w_plus):
        s, b, w_plus = np.broadcast_arrays(
            np.asarray(s, float), np.asarray(b, float), np.asarray(w_plus, float)
        )
        shape = s.shape
        fx = (np.log(np.maximum(s, _TINY)) - grid.x_min) / grid.dx
        fy = (np.log(np.maximum(b, _TINY)) - grid.y_min) / grid.dy
        fx = np.clip(fx, 0.0, grid.n_x - 1.0)
        fy = np.clip(fy, 0.0, grid.n_y - 1.0)
        ix = np.minimum(fx.astype(np.int64), grid.n_x - 2)
        iy = np.minimum(fy.astype(np.int64), grid.n_y - 2)
        self._shape = shape
        self._flat00 = (ix * grid.n_y + iy).ravel()
        self._n_y = grid.n_y
        self._tx = (fx - ix).ravel()
        self._ty = (fy - iy).ravel()
        # debt-side lookup coordinate (used where w_plus <= 0)
        fd = (np.log(np.maximum(-w_plus, _TINY)) - grid.y_min) / grid.d_debt
        fd = np.clip(fd, 0.0, grid.n_debt - 1.0)
        idd = np.minimum(fd.astype(np.int64), grid.n_debt - 2)
        self._id = idd.ravel()
        self._td = (fd - idd).ravel()
        self._pos = (w_plus > 0).ravel()

    def apply(self, solvent: np.ndarray, debt: np.ndarray) -> np.ndarray:
        v = solvent.ravel()
        f00 = self._flat00
        tx, ty = self._tx, self._ty
        top = v[f00] * (1 - tx) + v[f00 + self._n_y] * tx
        bot = v[f00 + 1] * (1 - tx) + v[f00 + self._n_y + 1] * tx
        pos_val = top * (1 - ty) + bot * ty
        neg_val = debt[self._id] * (1 - self._td) + debt[self._id + 1] * self._td
        return np.where(self._pos, pos_val, neg_val).reshape(self._shape)


class _SurfaceContinuation:
    """Continuation values read from a stored surface at tn+."""

    def __init__(self, surface: ValueSurface):
        self.surface = surface

    def landing_value(self, s, b, w_plus) -> np.ndarray:
        plan = _InterpPlan(self.surface.grid, s, b, w_plus)
        return plan.apply(self.surface.solvent, self.surface.debt)


class _WealthFnContinuation:
    """Closed-form continuation as a function of total wealth (used at the
    final date, where the terminal payoff is known exactly)."""

    def __init__(self, fn):
        self.fn = fn

    def landing_value(self, s, b, w_plus) -> np.ndarray:
        return self.fn(np.asarray(w_plus, float))


def _stabilized_terminal(scenario: Scenario, wstar: float):
    k, a, eps = scenario.kappa, scenario.alpha, scenario.stabilization

    def h(w):
        return k * (wstar + np.minimum(w - wstar, 0.0) / a) + eps * w

    return h


def _shortfall_terminal(scenario: Scenario, wstar: float):
    a = scenario.alpha

    def h(w):
        return wstar + np.minimum(w - wstar, 0.0) / a

    return h


def terminal_values(grid: GridSpec, wstar: float, scenario: Scenario) -> ValueSurface:
    """Stabilized terminal condition on both grids at the horizon."""
    h = _stabilized_terminal(scenario, wstar)
    w2 = grid.s_nodes[:, None] + grid.b_nodes[None, :]
    return ValueSurface(
        grid=grid,
        solvent=h(w2),
        debt=h(-grid.debt_nodes),
        wstar=wstar,
        t=scenario.horizon,
    )


def _is_terminal(t: float, scenario: Scenario) -> bool:
    return t >= scenario.horizon - _T_EPS


# ---------------------------------------------------------------------------
# single-date optimizations


def _allocation_scan(cont, w_nodes: np.ndarray, n_p: int, chunk: int = 4_194_304):
    """Exhaustive search of the allocation over an equally spaced p grid,
    per wealth node; first-maximum argmax breaks ties toward smaller p."""
    p_vals = np.linspace(0.0, 1.0, n_p)
    n_w = w_nodes.size
    p_out = np.empty(n_w)
    v_out = np.empty(n_w)
    rows = max(1, chunk // n_p)
    for lo in range(0, n_w, rows):
        hi = min(lo + rows, n_w)
        ww = w_nodes[lo:hi, None]
        vals = cont.landing_value(ww * p_vals[None, :], ww * (1.0 - p_vals[None, :]), ww)
        k = np.argmax(vals, axis=1)
        p_out[lo:hi] = p_vals[k]
        v_out[lo:hi] = vals[np.arange(hi - lo), k]
    return p_out, v_out


def optimize_allocation(surface: ValueSurface, w_plus, *, n_p: int | None = None):
    """Best stock fraction at wealth-after-withdrawal w_plus against the
    tn+ surface.  Insolvent nodes (w_plus <= 0) get p = 0 and their value
    from the debt grid.  Returns (p, value), vectorized over w_plus."""
    w = np.atleast_1d(np.asarray(w_plus, dtype=float))
    n_p = n_p if n_p is not None else surface.grid.n_y
    cont = _SurfaceContinuation(surface)
    p = np.zeros(w.shape)
    v = np.empty(w.shape)
    pos = w > 0
    if (~pos).any():
        wn = w[~pos]
        v[~pos] = cont.landing_value(np.zeros_like(wn), wn, wn)
    if pos.any():
        p[pos], v[pos] = _allocation_scan(cont, w[pos], n_p)
    if np.isscalar(w_plus) or np.asarray(w_plus).ndim == 0:
        return float(p[0]), float(v[0])
    return p, v


def _withdrawal_scan(cont, p_curve: ControlCurve | None, w_minus: np.ndarray, scenario: Scenario, t_n: float, terminal: bool):
    """Exhaustive search of the withdrawal per wealth node; first-maximum
    argmax breaks ties toward smaller q."""
    qs = scenario.q_grid()
    wp = w_minus[:, None] - qs[None, :]
    if terminal:
        land = cont.landing_value(None, None, wp)
    else:
        pf = np.where(wp > 0, np.clip(p_curve.at(wp), 0.0, 1.0), 0.0)
        land = cont.landing_value(wp * pf, wp * (1.0 - pf), wp)
    total = math.exp(-scenario.discount * t_n) * qs[None, :] + land
    k = np.argmax(total, axis=1)
    rows = np.arange(w_minus.size)
    return qs[k], total[rows, k]


def optimize_withdrawal(surface: ValueSurface, p_curve: ControlCurve | None, w_minus, scenario: Scenario):
    """Best withdrawal at wealth-before-withdrawal w_minus against the tn+
    surface, using the stored allocation curve for the landing split.  At
    the final date the continuation is the terminal payoff evaluated
    directly at w_minus - q.  Returns (q, value), vectorized."""
    w = np.atleast_1d(np.asarray(w_minus, dtype=float))
    terminal = _is_terminal(surface.t, scenario)
    if terminal:
        cont = _WealthFnContinuation(_stabilized_terminal(scenario, surface.wstar))
    else:
        cont = _SurfaceContinuation(surface)
        if p_curve is None:
            raise ValueError("p_curve is required before the final date")
    q, v = _withdrawal_scan(cont, p_curve, w, scenario, surface.t, terminal)
    if np.isscalar(w_minus) or np.asarray(w_minus).ndim == 0:
        return float(q[0]), float(v[0])
    return q, v


# ---------------------------------------------------------------------------
# the rebalancing operator


@dataclass
class RebalanceResult:
    surface: ValueSurface           # at tn-
    q_solvent: ControlCurve         # withdrawal vs wealth before withdrawal
    q_debt: ControlCurve            # withdrawal vs debt magnitude (wealth = -node)
    p: ControlCurve | None          # allocation vs wealth after withdrawal; None at T


def _rebalance_many(
    surfaces: list[ValueSurface],
    add_reward: list[bool],
    terminal_fns: list,
    scenario: Scenario,
):
    """Apply the rebalancing operator at the surfaces' common date.

    surfaces[0] is the objective and determines the controls; every
    surface is then advanced across the date with those same controls.
    terminal_fns[i] gives surface i's closed-form payoff as a function of
    total wealth, used instead of interpolation at the final date.
    """
    v0 = surfaces[0]
    grid = v0.grid
    t_n = v0.t
    terminal = _is_terminal(t_n, scenario)
    w_nodes = control_wealth_nodes(grid)
    disc = math.exp(-scenario.discount * t_n)

    if terminal:
        conts = [_WealthFnContinuation(fn) for fn in terminal_fns]
        p_curve = None
    else:
        conts = [_SurfaceContinuation(s) for s in surfaces]
        n_p = scenario.n_p if scenario.n_p is not None else grid.n_y
        p_vals, _ = _allocation_scan(conts[0], w_nodes, n_p)
        p_curve = ControlCurve(w_nodes, p_vals)

    q_pos, _ = _withdrawal_scan(conts[0], p_curve, w_nodes, scenario, t_n, terminal)
    q_neg, _ = _withdrawal_scan(conts[0], p_curve, -grid.debt_nodes, scenario, t_n, terminal)
    q_pos_curve = ControlCurve(w_nodes, q_pos)
    q_neg_curve = ControlCurve(grid.debt_nodes, q_neg)

    # advance every surface over the full grids with the stored controls,
    # interpolating controls in log-wealth
    wm2 = grid.s_nodes[:, None] + grid.b_nodes[None, :]
    q2 = np.clip(q_pos_curve.at(wm2), scenario.q_min, scenario.q_max)
    wp2 = wm2 - q2
    if terminal:
        pf2 = np.zeros_like(wp2)
    else:
        pf2 = np.where(wp2 > 0, np.clip(p_curve.at(wp2), 0.0, 1.0), 0.0)
    s2, b2 = wp2 * pf2, wp2 * (1.0 - pf2)

    qd = np.clip(q_neg_curve.at(grid.debt_nodes), scenario.q_min, scenario.q_max)
    wpd = -grid.debt_nodes - qd
    sd, bd = np.zeros_like(wpd), wpd  # insolvent: no stock

    plan2 = None if terminal else _InterpPlan(grid, s2, b2, wp2)
    pland = None if terminal else _InterpPlan(grid, sd, bd, wpd)

    out = []
    for surf, addq, cont in zip(surfaces, add_reward, conts):
        if terminal:
            new_solv = cont.landing_value(s2, b2, wp2)
            new_debt = cont.landing_value(sd, bd, wpd)
        else:
            new_solv = plan2.apply(surf.solvent, surf.debt)
            new_debt = pland.apply(surf.solvent, surf.debt)
        if addq:
            new_solv = new_solv + disc * q2
            new_debt = new_debt + disc * qd
        out.append(ValueSurface(grid=grid, solvent=new_solv, debt=new_debt, wstar=v0.wstar, t=t_n))
    return out, q_pos_curve, q_neg_curve, p_curve


def apply_rebalance(surface: ValueSurface, scenario: Scenario) -> RebalanceResult:
    """Advance the objective surface backward across its rebalancing date,
    returning the tn- surface plus the stored control tables."""
    fns = [_stabilized_terminal(scenario, surface.wstar)]
    out, q_pos, q_neg, p_curve = _rebalance_many([surface], [True], fns, scenario)
    return RebalanceResult(surface=out[0], q_solvent=q_pos, q_debt=q_neg, p=p_curve)


# ---------------------------------------------------------------------------
# policies


@dataclass
class Policy:
    """Stored optimal controls for every rebalancing date, with wstar
    frozen.  q tables cover both solvent wealth nodes and debt-magnitude
    nodes; the allocation table exists for dates before the horizon (the
    final date forces full liquidation, p = 0)."""

    w_nodes: np.ndarray       # (n_w,) positive wealth
    debt_nodes: np.ndarray    # (n_d,) debt magnitudes (wealth = -node)
    times: np.ndarray         # (M+1,)
    q_solvent: np.ndarray     # (M+1, n_w)
    q_debt: np.ndarray        # (M+1, n_d)
    p_solvent: np.ndarray     # (M, n_w)
    wstar: float
    q_min: float
    q_max: float
    grid_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._log_w = np.log(self.w_nodes)
        self._log_d = np.log(self.debt_nodes)

    @property
    def n_dates(self) -> int:
        return self.times.size

    def q_at(self, n: int, w) -> np.ndarray:
        """Withdrawal at date index n for wealth-before-withdrawal w,
        interpolated and clamped to the admissible range."""
        w = np.asarray(w, dtype=float)
        qp = np.interp(np.log(np.maximum(w, _TINY)), self._log_w, self.q_solvent[n])
        qn = np.interp(np.log(np.maximum(-w, _TINY)), self._log_d, self.q_debt[n])
        return np.clip(np.where(w > 0, qp, qn), self.q_min, self.q_max)

    def p_at(self, n: int, w_plus) -> np.ndarray:
        """Stock fraction at date index n for wealth-after-withdrawal;
        zero when insolvent and at the final date."""
        w_plus = np.asarray(w_plus, dtype=float)
        if n >= self.times.size - 1:
            return np.zeros_like(w_plus)
        pp = np.interp(np.log(np.maximum(w_plus, _TINY)), self._log_w, self.p_solvent[n])
        return np.where(w_plus > 0, np.clip(pp, 0.0, 1.0), 0.0)

    def save(self, path) -> None:
        """Versioned binary container (npz layout, float64 arrays);
        round-trips bit-exactly."""
        with open(path, "wb") as f:
            np.savez(
                f,
                format_version=np.array([POLICY_FORMAT_VERSION], dtype=np.int64),
                w_nodes=self.w_nodes,
                debt_nodes=self.debt_nodes,
                times=self.times,
                q_solvent=self.q_solvent,
                q_debt=self.q_debt,
                p_solvent=self.p_solvent,
                scalars=np.array([self.wstar, self.q_min, self.q_max]),
                grid_meta=np.frombuffer(
                    json.dumps(self.grid_meta, sort_keys=True).encode(), dtype=np.uint8
                ),
            )

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path, "rb") as f:
            data = np.load(f)
            version = int(data["format_version"][0])
            if version != POLICY_FORMAT_VERSION:
                raise ValueError(f"unsupported policy format version {version}")
            wstar, q_min, q_max = (float(x) for x in data["scalars"])
            meta = json.loads(bytes(data["grid_meta"]).decode()) if data["grid_meta"].size else {}
            return cls(
                w_nodes=data["w_nodes"],
                debt_nodes=data["debt_nodes"],
                times=data["times"],
                q_solvent=data["q_solvent"],
                q_debt=data["q_debt"],
                p_solvent=data["p_solvent"],
                wstar=wstar,
                q_min=q_min,
                q_max=q_max,
                grid_meta=meta,
            )


# ---------------------------------------------------------------------------
# full backward sweep and the outer wstar problem


@dataclass
class SolveResult:
    value: float                 # objective at the all-cash start (0, w0), time 0-
    policy: Policy
    surface: ValueSurface        # objective surface at time 0-
    pde_es: float | None = None  # shortfall component under the computed control
    pde_ew: float | None = None  # reward per withdrawal under the computed control
    pde_mean_wt: float | None = None


def _value_at_origin(surface: ValueSurface, w0: float) -> float:
    """Value at the inception state: all wealth in cash, s = 0, b = w0
    (the s coordinate clamps to the bottom of the log grid)."""
    plan = _InterpPlan(surface.grid, np.array([_TINY]), np.array([w0]), np.array([w0]))
    return float(plan.apply(surface.solvent, surface.debt)[0])


def solve_auxiliary(
    model: MarketModel,
    scenario: Scenario,
    grid: GridSpec,
    wstar: float,
    *,
    kernel: TransitionKernel | None = None,
    track_components: bool = False,
) -> SolveResult:
    """Backward sweep for a fixed wstar: terminal condition, then for each
    date the rebalancing operator followed by Fourier propagation across
    the preceding interval.  With track_components, the reward and
    shortfall expectations under the computed control (and the mean
    terminal wealth) are carried along through the same kernel, which is
    how the solver reports its own ES/EW split."""
    if not (math.exp(grid.y_min) <= scenario.w0 <= math.exp(grid.y_max)):
        raise ValueError("grid range does not cover the initial wealth")
    if kernel is None:
        kernel = build_kernel(model, grid, scenario.dt)

    surfaces = [terminal_values(grid, wstar, scenario)]
    add_reward = [True]
    terminal_fns = [_stabilized_terminal(scenario, wstar)]
    if track_components:
        h_short = _shortfall_terminal(scenario, wstar)
        w2 = grid.s_nodes[:, None] + grid.b_nodes[None, :]
        mk = lambda solv, debt: ValueSurface(
            grid=grid, solvent=solv, debt=debt, wstar=wstar, t=scenario.horizon
        )
        surfaces += [
            mk(np.zeros_like(w2), np.zeros(grid.n_debt)),            # reward to go
            mk(h_short(w2), h_short(-grid.debt_nodes)),              # shortfall functional
            mk(w2.copy(), -grid.debt_nodes.copy()),                  # mean terminal wealth
        ]
        add_reward += [True, False, False]
        terminal_fns += [lambda w: np.zeros_like(w), h_short, lambda w: w]

    m = scenario.n_rebalances
    times = scenario.times
    n_w = grid.n_y
    q_tab = np.empty((m + 1, n_w))
    qd_tab = np.empty((m + 1, grid.n_debt))
    p_tab = np.empty((m, n_w))
    w_nodes = None

    for n in range(m, -1, -1):
        for s in surfaces:
            s.t = times[n]  # guard against float drift in repeated propagation
        surfaces, q_pos, q_neg, p_curve = _rebalance_many(surfaces, add_reward, terminal_fns, scenario)
        w_nodes = q_pos.nodes
        q_tab[n] = q_pos.values
        qd_tab[n] = q_neg.values
        if p_curve is not None:
            p_tab[n] = p_curve.values
        if n >= 1:
            surfaces = [propagate(s, kernel) for s in surfaces]

    policy = Policy(
        w_nodes=w_nodes,
        debt_nodes=grid.debt_nodes,
        times=times,
        q_solvent=q_tab,
        q_debt=qd_tab,
        p_solvent=p_tab,
        wstar=wstar,
        q_min=scenario.q_min,
        q_max=scenario.q_max,
        grid_meta=grid.metadata(),
    )
    result = SolveResult(
        value=_value_at_origin(surfaces[0], scenario.w0),
        policy=policy,
        surface=surfaces[0],
    )
    if track_components:
        result.pde_ew = _value_at_origin(surfaces[1], scenario.w0) / scenario.n_withdrawals
        result.pde_es = _value_at_origin(surfaces[2], scenario.w0)
        result.pde_mean_wt = _value_at_origin(surfaces[3], scenario.w0)
    return result


@dataclass
class WStarResult:
    wstar: float
    value: float
    policy: Policy
    trace: list = field(default_factory=list)


def _golden_max(f, a: float, b: float, xtol: float):
    """Golden-section maximization of f on [a, b] to absolute width xtol;
    returns the best evaluated point (deterministic)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    evals = {}

    def F(x):
        if x not in evals:
            evals[x] = f(x)
        return evals[x]

    h = b - a
    c, d = b - invphi * h, a + invphi * h
    fc, fd = F(c), F(d)
    while h > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            h = b - a
            c = b - invphi * h
            fc = F(c)
        else:
            a, c, fc = c, d, fd
            h = b - a
            d = a + invphi * h
            fd = F(d)
    x_best = max(evals, key=lambda x: evals[x])
    return x_best, evals[x_best], (a, b)


def optimize_wstar(
    model: MarketModel,
    scenario: Scenario,
    grids,
    *,
    scan_lo: float = -500.0,
    scan_hi: float = 1500.0,
    scan_step: float = 25.0,
    xtol: float = 0.1,
    max_widen: int = 3,
) -> WStarResult:
    """Outer maximization over the shortfall threshold.

    Exhaustive scan of [scan_lo, scan_hi] in scan_step increments on the
    coarsest grid; the winner seeds a golden-section bracket (half-width
    one scan step) on each finer grid in turn.  A scan maximizer on the
    range boundary raises (widen the range); a refinement that keeps
    pinning to its bracket edge widens the bracket up to max_widen times
    before giving up."""
    grids = list(grids)
    if not grids:
        raise ValueError("need at least one grid")
    coarse = grids[0]
    trace = []

    kernel = build_kernel(model, coarse, scenario.dt)
    candidates = np.arange(scan_lo, scan_hi + 0.5 * scan_step, scan_step)
    values = np.array([
        solve_auxiliary(model, scenario, coarse, float(w), kernel=kernel).value
        for w in candidates
    ])
    k = int(np.argmax(values))
    if k in (0, candidates.size - 1):
        raise ValueError(
            f"wstar scan maximizer at boundary {candidates[k]:.1f}; widen the scan range"
        )
    w_cur = float(candidates[k])
    trace.append({"stage": "scan", "grid": (coarse.n_x, coarse.n_y),
                  "wstar": w_cur, "value": float(values[k])})

    refine_grids = grids[1:] if len(grids) > 1 else [coarse]
    best = None
    for g in refine_grids:
        kern = kernel if g == coarse else build_kernel(model, g, scenario.dt)
        cache = {}

        def f(w, _g=g, _k=kern):
            if w not in cache:
                cache[w] = solve_auxiliary(model, scenario, _g, w, kernel=_k)
            return cache[w].value

        a, b = w_cur - scan_step, w_cur + scan_step
        for attempt in range(max_widen + 1):
            x, val, (fa, fb) = _golden_max(f, a, b, xtol)
            at_left = x - a <= xtol
            at_right = b - x <= xtol
            if not (at_left or at_right):
                break
            width = b - a
            if at_left:
                a -= width
            if at_right:
                b += width
        else:
            raise ValueError("wstar refinement pinned to its bracket boundary")
        w_cur = x
        best = cache[x]
        trace.append({"stage": "golden", "grid": (g.n_x, g.n_y),
                      "wstar": w_cur, "value": val})

    return WStarResult(wstar=w_cur, value=best.value, policy=best.policy, trace=trace)
