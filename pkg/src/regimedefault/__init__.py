"""Optimal investment in a regime-switching market with a defaultable bond.

Log-utility strategies, bond price curves and value-function components,
plus closed-form two-regime checks and a Monte Carlo wealth simulator.
"""
from .market import MarketSpec, RegimeCurve, SpecError, StrategyProfile, load_spec, table1
from .bond import psi_ode, theta, risk_premium_d
from .hjb import LogSolution, solve_log, stock_fractions

__all__ = [
    "MarketSpec", "RegimeCurve", "SpecError", "StrategyProfile", "load_spec", "table1",
    "psi_ode", "theta", "risk_premium_d", "LogSolution", "solve_log",
    "stock_fractions",
]
__version__ = "0.1.0"
