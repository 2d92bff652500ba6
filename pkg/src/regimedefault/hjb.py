"""Log-utility solution of the pre/post-default control problem.

With ``U = log`` the value functions separate as ``log v + K(t, i)`` after
default and ``log v + J(t, i)`` before it. K and J solve linear backward
systems; the bond fraction p solves a scalar monotone equation per node and
regime. The residual evaluators plug the log-utility ansatz into the
Dirichlet problems and report what is left over.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bond import PsiCurve, lower_bound, psi_ode, theta as theta_curve
from .market import MarketSpec, RegimeCurve, StrategyProfile
from .numerics import (BracketError, TimeGrid, find_root_bracketed,
                       integrate_linear_terminal, interp_nodes)

P_TOL = 1e-14  # |f| at the returned root; f is O(0.1) with slope O(0.01)
FLAT_TOL = 1e-10
BRACKET_EXPANSIONS = 40


class SolverError(RuntimeError):
    """A root bracket could not be constructed at some node/regime."""


class AdmissibilityError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class LogSolution:
    K: RegimeCurve
    J: RegimeCurve
    p: RegimeCurve
    stock_frac: np.ndarray
    psi: PsiCurve
    theta: RegimeCurve
    fingerprint: str

    @property
    def grid(self) -> TimeGrid:
        return self.K.grid

    def strategy(self) -> StrategyProfile:
        return StrategyProfile(self.stock_frac, self.p, name="optimal")


def stock_fractions(spec: MarketSpec) -> np.ndarray:
    """Merton fractions ``(mu_i - r_i) / sigma_i**2``."""
    return (spec.mu - spec.r) / spec.sigma ** 2


def horizon_grid(spec: MarketSpec, steps: int | None = None,
                 steps_per_year: int = 2000) -> TimeGrid:
    if steps is not None:
        return TimeGrid(0.0, spec.horizon, steps)
    return TimeGrid.over(0.0, spec.horizon, steps_per_year)


def _check_grid(spec, grid):
    if abs(grid.t1 - spec.horizon) > 1e-12:
        raise ValueError(f"grid must end at the horizon R={spec.horizon}, got {grid.t1}")


def solve_k(spec: MarketSpec, grid: TimeGrid) -> RegimeCurve:
    """Post-default component: ``K' = -A K - (r + sharpe**2/2)``, ``K(R) = 0``."""
    _check_grid(spec, grid)
    F = -spec.gen_p
    b = -spec.zeta
    vals = integrate_linear_terminal(lambda t: F, lambda t: b, np.zeros(spec.n_regimes), grid)
    return RegimeCurve(grid, vals, "K")


def foc(p: float, th: float, h_hist: float, rates: np.ndarray, psi_row: np.ndarray,
        regime: int) -> float:
    """Left-hand side of the bond first-order condition at fraction ``p``.

    ``th - h_hist/(1-p) + sum_{j != i} a_ij (psi_j - psi_i)/(psi_i + p (psi_j - psi_i))``,
    strictly decreasing in p on ``(M_i, 1)``.
    """
    pi = psi_row[regime]
    total = th - h_hist / (1.0 - p)
    for j, pj in enumerate(psi_row):
        if j != regime and rates[j] != 0.0:
            d = pj - pi
            total += rates[j] * d / (pi + p * d)
    return total


def solve_p_node(th: float, h_hist: float, rates: np.ndarray, psi_row: np.ndarray,
                 regime: int, tol: float = P_TOL) -> float:
    """Root of :func:`foc` in ``(M_i, 1)``.

    The bracket starts 1e-8*(1+|M_i|) above M_i (or at -1 when M_i is
    -inf) and 1e-12 below 1, and is pushed geometrically toward the end
    points until f changes sign.
    """
    m = lower_bound(psi_row, regime)
    f = lambda p: foc(p, th, h_hist, rates, psi_row, regime)
    eps_hi = 1e-12
    hi = 1.0 - eps_hi
    if math.isinf(m):
        lo_gap = 1.0  # distance below 0
        lo = -lo_gap
    else:
        eps_lo = 1e-8 * (1.0 + abs(m))
        lo = m + eps_lo
    if h_hist == 0.0 and max(abs(f(x)) for x in (-0.5, 0.0, 0.5)) <= FLAT_TOL:
        # no default channel and no price dispersion: f vanishes identically
        return 0.0
    flo, fhi = f(lo), f(hi)
    for _ in range(BRACKET_EXPANSIONS):
        if flo > 0 and fhi < 0:
            break
        if not flo > 0:
            if math.isinf(m):
                lo_gap *= 10.0
                lo = -lo_gap
            else:
                eps_lo *= 0.1
                lo = m + eps_lo
            flo = f(lo)
        if not fhi < 0:
            eps_hi = max(eps_hi * 0.1, 2.0 ** -53)  # keep hi strictly below 1
            hi = 1.0 - eps_hi
            fhi = f(hi)
    else:
        if not (flo > 0 and fhi < 0):
            # h_hist = 0 with no downside regime: f stays positive up to 1
            raise BracketError(f"no sign change in (M_i, 1): f(lo={lo})={flo}, f(hi={hi})={fhi}")
    return find_root_bracketed(f, lo, hi, tol=tol)


def solve_p(spec: MarketSpec, psi: PsiCurve, grid: TimeGrid,
            theta: RegimeCurve | None = None) -> RegimeCurve:
    """Optimal bond fraction at every node and regime, solved node by node."""
    _check_grid(spec, grid)
    psi_vals = _on_grid(psi, grid)
    th = theta.values if theta is not None else theta_curve(spec, PsiCurve(
        RegimeCurve(grid, psi_vals, "psi"), psi.method)).values
    n = spec.n_regimes
    out = np.empty((len(grid), n))
    rates = [np.where(np.arange(n) == i, 0.0, spec.gen_p[i]) for i in range(n)]
    for k in range(len(grid)):
        for i in range(n):
            try:
                out[k, i] = solve_p_node(th[k, i], spec.h_hist[i], rates[i], psi_vals[k], i)
            except BracketError as exc:
                raise SolverError(f"bond fraction: node {k} (t={grid.nodes[k]:.6g}), "
                                  f"regime {i + 1}: {exc}") from exc
    return RegimeCurve(grid, out, "p")


def _on_grid(psi: PsiCurve, grid: TimeGrid) -> np.ndarray:
    """psi values on ``grid``; exact when grid nodes coincide with psi nodes."""
    g = psi.grid
    if g.t0 == grid.t0 and abs(g.dt - grid.dt) < 1e-14 * max(1.0, g.t1) and len(g) >= len(grid):
        return psi.values[: len(grid)]
    return np.array([psi.at(t) for t in grid.nodes])


def _jump_logs(spec, psi_vals, p):
    """``sum_{j != i} a_ij log(1 + p_i (psi_j/psi_i - 1))`` per node and regime."""
    ratios = psi_vals[:, None, :] / psi_vals[:, :, None] - 1.0
    arg = 1.0 + p[:, :, None] * ratios
    if np.any(arg <= 0):
        raise AdmissibilityError("bond fraction outside (M_i, 1): log of nonpositive jump factor")
    off = np.array(spec.gen_p, dtype=float)
    np.fill_diagonal(off, 0.0)
    return np.einsum("ij,kij->ki", off, np.log(arg))


def pre_default_forcing(spec: MarketSpec, psi_vals, K, p, th) -> np.ndarray:
    """``zeta_i + p_i theta_i + h_i (log(1-p_i) + K_i) + jump logs``, per node and regime.

    The J system is ``J' = F J - forcing`` with this forcing.
    """
    if np.any(p >= 1):
        raise AdmissibilityError("bond fraction must stay below 1")
    return (spec.zeta + p * th + spec.h_hist * (np.log1p(-p) + K)
            + _jump_logs(spec, psi_vals, p))


def solve_j(spec: MarketSpec, psi: PsiCurve, K: RegimeCurve, p: RegimeCurve,
            grid: TimeGrid, theta: RegimeCurve | None = None) -> RegimeCurve:
    """Pre-default component: ``J' = (diag(h) - A) J - forcing``, ``J(R) = 0``.

    The forcing is assembled on the grid shared by ``K`` and ``p`` and read
    off by linear interpolation at the RK4 stage times. Passing inputs on
    ``grid.refine(2)`` makes every stage land on a node, which keeps the
    scheme fourth order.
    """
    _check_grid(spec, grid)
    src = K.grid
    psi_vals = _on_grid(psi, src)
    th = theta.values if theta is not None else theta_curve(
        spec, PsiCurve(RegimeCurve(src, psi_vals, "psi"), psi.method)).values
    forcing = pre_default_forcing(spec, psi_vals, K.values, p.values, th)
    F = np.diag(spec.h_hist) - spec.gen_p
    vals = integrate_linear_terminal(lambda t: F, lambda t: -interp_nodes(src, forcing, t),
                                     np.zeros(spec.n_regimes), grid)
    return RegimeCurve(grid, vals, "J")


def solve_log(spec: MarketSpec, steps: int | None = None, steps_per_year: int = 2000) -> LogSolution:
    """Full log-utility solution on ``[0, R]``.

    psi, theta, K and p are computed on the half-step grid that feeds the
    J integration; the returned curves are their values on the requested grid.
    """
    grid = horizon_grid(spec, steps, steps_per_year)
    fine = grid.refine(2)
    psi_fine = psi_ode(spec, _psi_grid(spec, fine))
    psi_vals = _on_grid(psi_fine, fine)
    psi_fine = PsiCurve(RegimeCurve(fine, psi_vals, "psi"), "ode")
    th_fine = theta_curve(spec, psi_fine)
    k_fine = solve_k(spec, fine)
    p_fine = solve_p(spec, psi_fine, fine, th_fine)
    J = solve_j(spec, psi_fine, k_fine, p_fine, grid, th_fine)
    take = slice(0, len(fine), 2)
    return LogSolution(
        K=solve_k(spec, grid),
        J=J,
        p=RegimeCurve(grid, p_fine.values[take], "p"),
        stock_frac=stock_fractions(spec),
        psi=PsiCurve(RegimeCurve(grid, psi_vals[take], "psi"), "ode"),
        theta=RegimeCurve(grid, th_fine.values[take], "theta"),
        fingerprint=spec.fingerprint(),
    )


def _psi_grid(spec, grid):
    """Grid over ``[0, T]`` with the spacing of ``grid`` (falls back to ``grid``)."""
    steps = grid.steps * spec.maturity / spec.horizon
    if abs(steps - round(steps)) < 1e-9:
        return TimeGrid(0.0, spec.maturity, int(round(steps)))
    return grid


# --------------------------------------------------------------------------
# residuals
# --------------------------------------------------------------------------

def time_derivative(grid: TimeGrid, values: np.ndarray) -> np.ndarray:
    """Centred differences inside, one-sided second order at both ends."""
    h = grid.dt
    d = np.empty_like(values)
    d[1:-1] = (values[2:] - values[:-2]) / (2 * h)
    d[0] = (-3 * values[0] + 4 * values[1] - values[2]) / (2 * h)
    d[-1] = (3 * values[-1] - 4 * values[-2] + values[-3]) / (2 * h)
    return d


def hjb_residual_post(spec: MarketSpec, K: RegimeCurve) -> np.ndarray:
    """Residual of the post-default Dirichlet equation with ``w = log v + K``.

    For this ansatz ``-sharpe**2/2 * w_v**2 / w_vv = sharpe**2/2`` and
    ``r v w_v = r``, so the residual is wealth-free.

    Returns:
        Array ``(nodes, N)`` of residuals.
    """
    kv = K.values
    off = np.array(spec.gen_p, dtype=float)
    np.fill_diagonal(off, 0.0)
    coupling = kv @ off.T - kv * off.sum(axis=1)
    return time_derivative(K.grid, kv) + 0.5 * spec.sharpe ** 2 + spec.r + coupling


def hjb_residual_pre(spec: MarketSpec, K: RegimeCurve, J: RegimeCurve, p: RegimeCurve,
                     psi: PsiCurve, theta: RegimeCurve | None = None):
    """First-order-condition and PDE residuals of the pre-default system.

    With ``w = log v + J`` the first-order condition equals ``foc(p) / v``;
    it is reported at ``v = 1``. The PDE residual is wealth-free.

    Returns:
        ``(foc_residual, pde_residual)``, each ``(nodes, N)``.
    """
    grid = J.grid
    psi_vals = _on_grid(psi, grid)
    th = theta.values if theta is not None else theta_curve(
        spec, PsiCurve(RegimeCurve(grid, psi_vals, "psi"), psi.method)).values
    n = spec.n_regimes
    pv = p.values
    foc_res = np.empty_like(pv)
    for k in range(len(grid)):
        for i in range(n):
            rates = np.where(np.arange(n) == i, 0.0, spec.gen_p[i])
            foc_res[k, i] = foc(pv[k, i], th[k, i], spec.h_hist[i], rates, psi_vals[k], i)
    jv = J.values
    off = np.array(spec.gen_p, dtype=float)
    np.fill_diagonal(off, 0.0)
    coupling = jv @ off.T - jv * off.sum(axis=1)
    pde = (time_derivative(grid, jv) + spec.zeta + pv * th
           + spec.h_hist * (np.log1p(-pv) + K.values - jv)
           + _jump_logs(spec, psi_vals, pv) + coupling)
    return foc_res, pde
