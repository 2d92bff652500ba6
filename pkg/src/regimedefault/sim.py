"""Monte Carlo simulation of the wealth process under feedback strategies.

Regime switches (historical generator) and the default time are sampled
exactly; only the Brownian integral is cut into scheme steps. Before default
log-wealth moves continuously at rate

    r_i + pi^S_i (mu_i - r_i) - (pi^S_i sigma_i)**2 / 2 + pi^P_i(t) theta_i(t)

which is what the bond drift ``r + h(L-1) + D``, the compensator of the
regime martingale ``-sum_j a_ij (psi_j/psi_i - 1)`` and the default
compensator assemble into. At a switch i -> j wealth is multiplied by
``1 + pi^P (psi_j/psi_i - 1)``, at default by ``1 - pi^P``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bond import PsiCurve, theta as theta_curve
from .chain import ChainPath, PathStreams, sample_path
from .market import MarketSpec, RegimeCurve, StrategyProfile
from .numerics import TimeGrid, interp_nodes

DEFAULT_SCHEME_STEPS = 256  # per year
MIN_PATHS = 100


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WealthPath:
    times: np.ndarray
    wealth: np.ndarray
    regime: np.ndarray
    defaulted: np.ndarray

    @property
    def terminal(self) -> float:
        return float(self.wealth[-1])


@dataclass(frozen=True)
class SimReport:
    mean_log_wealth: float
    stderr: float
    n_paths: int
    seed: int
    strategy: str

    def to_dict(self) -> dict:
        return {"mean_log_wealth": self.mean_log_wealth, "stderr": self.stderr,
                "n_paths": self.n_paths, "seed": self.seed, "strategy": self.strategy}


# --------------------------------------------------------------------------
# random scenario (strategy independent)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """All randomness of one path, in time relative to ``t0``.

    ``starts``/``ends``/``regimes``/``defaulted`` describe the stretches
    obtained by cutting ``[0, R - t0]`` at chain jumps, the default time
    and scheme nodes; ``dw`` holds the Brownian increment over each.
    """

    t0: float
    chain: ChainPath
    default_time: float  # inf if no default before the horizon
    starts: np.ndarray
    ends: np.ndarray
    regimes: np.ndarray
    defaulted: np.ndarray
    dw: np.ndarray


def _pieces(chain: ChainPath, tau: float, scheme_dt: float):
    length = chain.horizon
    n_nodes = int(math.ceil(length / scheme_dt - 1e-9))
    nodes = np.minimum(np.arange(1, n_nodes + 1) * scheme_dt, length)
    extra = chain.jump_times
    if tau < length:
        extra = np.append(extra, tau)
    cuts = np.union1d(nodes, extra)
    starts = np.concatenate(([0.0], cuts[:-1]))
    idx = np.searchsorted(chain.jump_times, starts, side="right")
    states = np.concatenate(([chain.initial_state], chain.states)).astype(np.int64)
    return starts, cuts, states[idx], starts >= tau


def _default_time(chain: ChainPath, h_hist: np.ndarray, threshold: float) -> float:
    """First time the integrated hazard along ``chain`` reaches ``threshold``."""
    acc = 0.0
    for a, b, s in chain.pieces():
        rate = h_hist[s]
        if rate > 0 and acc + rate * (b - a) >= threshold:
            return a + (threshold - acc) / rate
        acc += rate * (b - a)
    return math.inf


def sample_scenario(spec: MarketSpec, regime0: int, t0: float, R: float,
                    rng: np.random.Generator, scheme_dt: float,
                    default_time: float | None = None) -> Scenario:
    """Draw, in order: the chain path, the default threshold, the Brownian increments.

    ``default_time`` (absolute) overrides the sampled default time; the
    threshold is still drawn so the remaining draws are unaffected.
    """
    length = R - t0
    chain = sample_path(spec.gen_p, regime0, length, rng)
    tau = _default_time(chain, spec.h_hist, rng.standard_exponential())
    if default_time is not None:
        tau = default_time - t0 if default_time - t0 < length else math.inf
    starts, ends, regimes, dflt = _pieces(chain, tau, scheme_dt)
    dw = rng.standard_normal(len(starts)) * np.sqrt(ends - starts)
    return Scenario(t0, chain, tau, starts, ends, regimes, dflt, dw)


# --------------------------------------------------------------------------
# single path
# --------------------------------------------------------------------------

def _drift_integral(grid: TimeGrid, p: np.ndarray, th: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid of ``p * theta`` per regime on ``grid``."""
    prod = p * th
    out = np.zeros_like(prod)
    out[1:] = np.cumsum(0.5 * (prod[1:] + prod[:-1]) * grid.dt, axis=0)
    return out


class _StrategyTables:
    """Strategy-dependent lookups shared by all paths."""

    def __init__(self, spec, strategy, psi, theta=None):
        grid = strategy.bond_frac.grid
        self.grid = grid
        self.p = strategy.bond_frac.values
        self.psi = np.array([psi.at(t) for t in grid.nodes]) if psi.grid != grid else psi.values
        if theta is None or theta.grid != grid:
            th_psi = PsiCurve(RegimeCurve(grid, self.psi, "psi"), psi.method)
            theta = theta_curve(spec, th_psi)
        self.theta = theta.values
        self.cum = _drift_integral(grid, self.p, self.theta)
        pi_s = strategy.stock_frac
        self.pi_s = pi_s
        self.rate = spec.r + pi_s * (spec.mu - spec.r) - 0.5 * (pi_s * spec.sigma) ** 2
        self.vol = pi_s * spec.sigma

    def bond_drift(self, a, b, regime):
        return interp_nodes(self.grid, self.cum, b)[regime] - interp_nodes(self.grid, self.cum, a)[regime]

    def switch_factor(self, t, i, j):
        p = interp_nodes(self.grid, self.p, t)[i]
        psi = interp_nodes(self.grid, self.psi, t)
        return 1.0 + p * (psi[j] / psi[i] - 1.0)

    def default_factor(self, t, i):
        return 1.0 - interp_nodes(self.grid, self.p, t)[i]


def simulate_wealth(spec: MarketSpec, strategy: StrategyProfile, psi: PsiCurve, v0: float,
                    regime0: int, t0: float, R: float, scheme_steps: int,
                    rng: np.random.Generator, default_time: float | None = None,
                    theta: RegimeCurve | None = None) -> WealthPath:
    """One wealth trajectory recorded at scheme nodes and at every jump.

    Args:
        scheme_steps: Brownian steps per year.
        rng: stream for this path.
        default_time: absolute default time that overrides the sampled one
            (the chain and Brownian draws are unchanged); for testing.
    """
    if v0 <= 0:
        raise ValueError("initial wealth must be positive")
    tables = _StrategyTables(spec, strategy, psi, theta)
    sc = sample_scenario(spec, regime0, t0, R, rng, 1.0 / scheme_steps, default_time)
    return _walk(tables, sc, v0)


def _walk(tables, sc, v0):
    t0 = sc.t0
    times, wealth, regimes, flags = [t0], [v0], [sc.chain.initial_state], [0]
    log_v = math.log(v0)
    jumps = dict(zip(sc.chain.jump_times.tolist(), sc.chain.states.tolist()))
    for a, b, reg, dflt, dw in zip(sc.starts.tolist(), sc.ends.tolist(), sc.regimes.tolist(),
                                   sc.defaulted.tolist(), sc.dw.tolist()):
        log_v += tables.rate[reg] * (b - a) + tables.vol[reg] * dw
        if not dflt:
            log_v += tables.bond_drift(t0 + a, t0 + b, reg)
        new_reg = reg
        if b in jumps:
            new_reg = jumps[b]
            if not dflt:
                factor = tables.switch_factor(t0 + b, reg, new_reg)
                if factor <= 0:
                    raise SimulationError(f"wealth hit zero at regime switch t={t0 + b:.6g}")
                log_v += math.log(factor)
        hit = (not dflt) and b == sc.default_time
        if hit:
            factor = tables.default_factor(t0 + b, reg)
            if factor <= 0:
                raise SimulationError(f"wealth hit zero at default t={t0 + b:.6g}")
            log_v += math.log(factor)
        times.append(t0 + b)
        wealth.append(math.exp(log_v))
        regimes.append(new_reg)
        flags.append(1 if (dflt or hit) else 0)
    return WealthPath(np.array(times), np.array(wealth), np.array(regimes), np.array(flags))


# --------------------------------------------------------------------------
# many paths
# --------------------------------------------------------------------------

@dataclass
class ScenarioBatch:
    """Compact, strategy-independent summary of many scenarios."""

    n_paths: int
    occupation: np.ndarray  # (paths, N)
    brownian: np.ndarray  # (paths, N): Brownian increment accumulated in each regime
    piece_path: np.ndarray  # pre-default constant-regime stretches
    piece_start: np.ndarray
    piece_end: np.ndarray
    piece_regime: np.ndarray
    jump_path: np.ndarray  # pre-default regime switches
    jump_time: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray
    default_path: np.ndarray  # defaults before the horizon
    default_time: np.ndarray
    default_regime: np.ndarray

    @classmethod
    def concat(cls, batches):
        offset = 0
        parts = {f: [] for f in cls.__dataclass_fields__ if f != "n_paths"}
        for b in batches:
            for f in parts:
                arr = getattr(b, f)
                parts[f].append(arr + offset if f.endswith("_path") else arr)
            offset += b.n_paths
        return cls(offset, **{f: np.concatenate(v) for f, v in parts.items()})


def _sample_batch(spec, regime0, t0, R, scheme_dt, seed, start, stop) -> ScenarioBatch:
    n = spec.n_regimes
    m = stop - start
    occ = np.zeros((m, n))
    bro = np.zeros((m, n))
    pieces = ([], [], [], [])
    jumps = ([], [], [], [])
    defaults = ([], [], [])
    streams = PathStreams(seed)
    for row, k in enumerate(range(start, stop)):
        sc = sample_scenario(spec, regime0, t0, R, streams.at(k), scheme_dt)
        bro[row] = np.bincount(sc.regimes, weights=sc.dw, minlength=n)
        tau = sc.default_time
        for a, b, reg in sc.chain.pieces():
            occ[row, reg] += b - a
            if a < tau:
                for lst, v in zip(pieces, (row, t0 + a, t0 + min(b, tau), reg)):
                    lst.append(v)
        prev = sc.chain.initial_state
        for t, s in zip(sc.chain.jump_times, sc.chain.states):
            if t < tau:
                for lst, v in zip(jumps, (row, t0 + t, prev, s)):
                    lst.append(v)
            prev = s
        if tau < R - t0:
            for lst, v in zip(defaults, (row, t0 + tau, sc.chain.state_at(tau))):
                lst.append(v)
    i64 = lambda x: np.array(x, dtype=np.int64)
    f64 = lambda x: np.array(x, dtype=float)
    return ScenarioBatch(m, occ, bro,
                         i64(pieces[0]), f64(pieces[1]), f64(pieces[2]), i64(pieces[3]),
                         i64(jumps[0]), f64(jumps[1]), i64(jumps[2]), i64(jumps[3]),
                         i64(defaults[0]), f64(defaults[1]), i64(defaults[2]))


def sample_batch(spec: MarketSpec, regime0: int, t0: float, R: float, n_paths: int, seed: int,
                 scheme_steps: int = DEFAULT_SCHEME_STEPS, workers: int = 1,
                 chunk: int = 5000) -> ScenarioBatch:
    """Sample ``n_paths`` scenarios; path k always uses stream ``(seed, k)``.

    Work is split into fixed chunks of path indices and reassembled in index
    order, so the result does not depend on ``workers``.
    """
    scheme_dt = 1.0 / scheme_steps
    bounds = [(s, min(s + chunk, n_paths)) for s in range(0, n_paths, chunk)]
    args = [(spec, regime0, t0, R, scheme_dt, seed, a, b) for a, b in bounds]
    if workers <= 1 or len(bounds) == 1:
        parts = [_sample_batch(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sample_batch, *zip(*args)))
    return ScenarioBatch.concat(parts)


def _interp_regime(grid, values, times, regimes):
    """``values`` interpolated at ``times`` and picked per ``regimes``."""
    nodes = grid.nodes
    out = np.empty(len(times))
    for i in range(values.shape[1]):
        mask = regimes == i
        if mask.any():
            out[mask] = np.interp(times[mask], nodes, values[:, i])
    return out


def log_terminal_wealth(spec: MarketSpec, strategy: StrategyProfile, psi: PsiCurve,
                        batch: ScenarioBatch, v0: float = 1.0,
                        theta: RegimeCurve | None = None) -> np.ndarray:
    """``log V_R`` for every scenario in ``batch`` under ``strategy``."""
    tab = _StrategyTables(spec, strategy, psi, theta)
    out = np.full(batch.n_paths, math.log(v0))
    out += batch.occupation @ tab.rate + batch.brownian @ tab.vol
    g = tab.grid
    drift = (_interp_regime(g, tab.cum, batch.piece_end, batch.piece_regime)
             - _interp_regime(g, tab.cum, batch.piece_start, batch.piece_regime))
    out += np.bincount(batch.piece_path, weights=drift, minlength=batch.n_paths)
    if len(batch.jump_time):
        p = _interp_regime(g, tab.p, batch.jump_time, batch.jump_from)
        psi_from = _interp_regime(g, tab.psi, batch.jump_time, batch.jump_from)
        psi_to = _interp_regime(g, tab.psi, batch.jump_time, batch.jump_to)
        factor = 1.0 + p * (psi_to / psi_from - 1.0)
        if np.any(factor <= 0):
            bad = int(batch.jump_path[np.argmax(factor <= 0)])
            raise SimulationError(f"path {bad}: wealth hit zero at a regime switch")
        out += np.bincount(batch.jump_path, weights=np.log(factor), minlength=batch.n_paths)
    if len(batch.default_time):
        p = _interp_regime(g, tab.p, batch.default_time, batch.default_regime)
        factor = 1.0 - p
        if np.any(factor <= 0):
            bad = int(batch.default_path[np.argmax(factor <= 0)])
            raise SimulationError(f"path {bad}: wealth hit zero at default")
        out += np.bincount(batch.default_path, weights=np.log(factor), minlength=batch.n_paths)
    return out


def report(log_wealth: np.ndarray, seed: int, name: str) -> SimReport:
    n = len(log_wealth)
    return SimReport(float(np.mean(log_wealth)), float(np.std(log_wealth, ddof=1) / math.sqrt(n)),
                     n, seed, name)


def evaluate_strategy(spec: MarketSpec, strategy: StrategyProfile, solution, n_paths: int,
                      seed: int, regime0: int = 0, v0: float = 1.0,
                      scheme_steps: int = DEFAULT_SCHEME_STEPS, workers: int = 1,
                      batch: ScenarioBatch | None = None) -> SimReport:
    """Mean and standard error of ``log V_R`` started at time 0 in ``regime0``.

    Pass ``batch`` to reuse scenarios across strategies (common random numbers).
    """
    if n_paths < MIN_PATHS:
        raise ValueError(f"n_paths must be at least {MIN_PATHS}")
    if batch is None:
        batch = sample_batch(spec, regime0, 0.0, spec.horizon, n_paths, seed,
                             scheme_steps, workers)
    lw = log_terminal_wealth(spec, strategy, solution.psi, batch, v0, solution.theta)
    return report(lw, seed, strategy.name)


def shifted(strategy: StrategyProfile, bond_shift: float = 0.0, stock_shift: float = 0.0,
            name: str | None = None) -> StrategyProfile:
    """``strategy`` with constant shifts applied to the bond and stock fractions."""
    p = strategy.bond_frac
    return StrategyProfile(strategy.stock_frac + stock_shift,
                           RegimeCurve(p.grid, p.values + bond_shift, "p"),
                           name or f"{strategy.name}{bond_shift:+g}p{stock_shift:+g}s")
