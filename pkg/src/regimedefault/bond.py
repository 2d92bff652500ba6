"""Regime-conditioned defaultable-bond prices and the drift terms derived from them.

``psi_i(t)`` is the risk-neutral expectation of ``exp(-int_t^T (r + h L) ds)``
given regime i at t. It is computed three independent ways: the backward
Kolmogorov system (primary), occupation-time quadrature for two regimes, and
Monte Carlo over exact chain paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import PathStreams, occupation_density_2state, sample_path
from .market import MarketSpec, RegimeCurve
from .numerics import TimeGrid, integrate_linear_terminal

MIN_MC_PATHS = 100


@dataclass(frozen=True, eq=False)
class PsiCurve:
    curve: RegimeCurve
    method: str
    stderr: np.ndarray | None = None

    @property
    def grid(self) -> TimeGrid:
        return self.curve.grid

    @property
    def values(self) -> np.ndarray:
        return self.curve.values

    def at(self, t: float) -> np.ndarray:
        return self.curve.at(t)


def psi_ode(spec: MarketSpec, grid: TimeGrid | None = None,
            steps_per_year: int = 2000) -> PsiCurve:
    """Solve ``psi' = (diag(r + h L) - A^Q) psi`` backward from ``psi(T) = 1``.

    ``grid`` may end before maturity; the stretch ``[grid.t1, T]`` is then
    integrated first at the same step density.
    """
    if grid is None:
        grid = TimeGrid.over(0.0, spec.maturity, steps_per_year)
    if grid.t1 > spec.maturity + 1e-12:
        raise ValueError("psi grid extends beyond bond maturity")
    F = np.diag(spec.credit_rate) - spec.gen_q
    ones = np.ones(spec.n_regimes)
    terminal = ones
    if grid.t1 < spec.maturity:
        tail_steps = max(1, int(round((spec.maturity - grid.t1) / grid.dt)))
        tail = TimeGrid(grid.t1, spec.maturity, tail_steps)
        terminal = integrate_linear_terminal(lambda t: F, None, ones, tail)[0]
    vals = integrate_linear_terminal(lambda t: F, None, terminal, grid)
    if not np.all(vals > 0):
        raise ArithmeticError("bond price curve lost positivity")
    return PsiCurve(RegimeCurve(grid, vals, "psi"), "ode")


def psi_quadrature_2state(spec: MarketSpec, t: float, tol: float = 1e-12) -> tuple[float, float]:
    """``(psi_1(t), psi_2(t))`` by integrating the discount against the occupation law.

    Uses the remaining life ``T - t`` of the bond as the occupation window.
    """
    if spec.n_regimes != 2:
        raise ValueError("psi_quadrature_2state needs exactly two regimes")
    life = spec.maturity - t
    c = spec.credit_rate
    a12, a21 = spec.gen_q[0, 1], spec.gen_q[1, 0]
    if life <= 0:
        return 1.0, 1.0
    out = []
    for start in (1, 2):
        own, other = (c[0], c[1]) if start == 1 else (c[1], c[0])
        rate_out = a12 if start == 1 else a21
        if rate_out == 0.0:
            out.append(math.exp(-own * life))
            continue
        if (a21 if start == 1 else a12) == 0.0:
            # absorbing destination: exit time is Exponential(rate_out)
            val = math.exp(-(own + rate_out) * life)
            if own + rate_out - other != 0:
                val += rate_out * (math.exp(-other * life) - math.exp(-(own + rate_out) * life)) / (
                    own + rate_out - other)
            else:
                val += rate_out * life * math.exp(-other * life)
            out.append(val)
            continue
        dens = occupation_density_2state(a12, a21, life, start)
        out.append(dens.expect(lambda x: math.exp(-own * x - other * (life - x)), tol))
    return out[0], out[1]


def psi_monte_carlo(spec: MarketSpec, t: float, n_paths: int, seed: int):
    """Monte Carlo ``psi(t)`` from each starting regime.

    Path k from start regime i uses stream ``(seed, i * n_paths + k)``.

    Returns:
        (estimates, standard_errors), each of length N.
    """
    if n_paths < MIN_MC_PATHS:
        raise ValueError(f"n_paths must be at least {MIN_MC_PATHS}")
    life = spec.maturity - t
    c = spec.credit_rate
    est = np.empty(spec.n_regimes)
    se = np.empty(spec.n_regimes)
    streams = PathStreams(seed)
    for i in range(spec.n_regimes):
        disc = np.empty(n_paths)
        for k in range(n_paths):
            path = sample_path(spec.gen_q, i, life, streams.at(i * n_paths + k))
            disc[k] = math.exp(-(path.occupation(spec.n_regimes) @ c))
        est[i] = disc.mean()
        se[i] = disc.std(ddof=1) / math.sqrt(n_paths)
    return est, se


def _ratios(psi: np.ndarray) -> np.ndarray:
    """``ratios[k, i, j] = psi_j / psi_i - 1`` at node k."""
    if not np.all(psi > 0):
        raise ArithmeticError("psi must be strictly positive")
    return psi[:, None, :] / psi[:, :, None] - 1.0


def _off_diagonal(g: np.ndarray) -> np.ndarray:
    out = np.array(g, dtype=float)
    np.fill_diagonal(out, 0.0)
    return out


def theta(spec: MarketSpec, psi: PsiCurve) -> RegimeCurve:
    """Bond excess-return coefficient ``h_i L_i - sum_j a^Q_ij (psi_j/psi_i - 1)``."""
    jumps = np.einsum("ij,kij->ki", _off_diagonal(spec.gen_q), _ratios(psi.values))
    return RegimeCurve(psi.grid, spec.h * spec.loss - jumps, "theta")


def risk_premium_d(spec: MarketSpec, psi: PsiCurve) -> RegimeCurve:
    """Regime-risk premium ``sum_j (a_ij - a^Q_ij)(psi_j/psi_i - 1)``."""
    diff = _off_diagonal(spec.gen_p - spec.gen_q)
    return RegimeCurve(psi.grid, np.einsum("ij,kij->ki", diff, _ratios(psi.values)), "D")


def lower_bound(psi_row: np.ndarray, regime: int) -> float:
    """Admissibility bound ``M_i`` for a single vector of bond prices; ``-inf`` if none."""
    pi = psi_row[regime]
    best = -math.inf
    for j, pj in enumerate(psi_row):
        if j != regime and pj > pi:
            best = max(best, -pi / (pj - pi))
    return best


def admissibility_lower_bound(psi: PsiCurve, t: float, regime: int) -> float:
    """Strict lower bound ``M_i`` on the bond fraction at time ``t`` (``-inf`` sentinel)."""
    return lower_bound(psi.at(t), regime)


def lower_bounds(psi: PsiCurve) -> np.ndarray:
    """``M`` at every node, shape ``(nodes, N)``."""
    vals = psi.values
    return np.array([[lower_bound(row, i) for i in range(vals.shape[1])] for row in vals])
