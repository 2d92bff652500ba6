"""Market specification, validation, JSON I/O and shared result containers."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import TimeGrid

ROW_SUM_TOL = 1e-12

FIELDS = ("n_regimes", "r", "mu", "sigma", "h", "h_hist", "loss",
          "gen_p", "gen_q", "maturity", "horizon")
REQUIRED = tuple(f for f in FIELDS if f != "h_hist")
VECTOR_FIELDS = ("r", "mu", "sigma", "h", "h_hist", "loss")
CURVE_LABELS = ("psi", "K", "J", "p", "theta", "D")


class SpecError(ValueError):
    """Raised when a spec document cannot be turned into a valid MarketSpec."""

    def __init__(self, message: str, violations: Sequence["Violation"] = ()):
        super().__init__(message)
        self.violations = list(violations)


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


def _ro(values, ndim):
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise SpecError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MarketSpec:
    """Regime-indexed market coefficients and the two chain generators.

    Regimes are indexed from 0 in code; reports and CSV headers use 1..N.
    ``h`` is the risk-neutral default intensity (bond pricing, ``theta``);
    ``h_hist`` is the historical one (default arrivals, HJB jump terms).
    """

    r: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    h: np.ndarray
    loss: np.ndarray
    gen_p: np.ndarray
    gen_q: np.ndarray
    maturity: float
    horizon: float
    h_hist: np.ndarray | None = None

    def __post_init__(self):
        for name in VECTOR_FIELDS:
            val = getattr(self, name)
            if name == "h_hist" and val is None:
                val = self.h
            object.__setattr__(self, name, _ro(val, 1))
        for name in ("gen_p", "gen_q"):
            object.__setattr__(self, name, _ro(getattr(self, name), 2))
        object.__setattr__(self, "maturity", float(self.maturity))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def n_regimes(self) -> int:
        return int(self.r.shape[0])

    @property
    def sharpe(self) -> np.ndarray:
        return (self.mu - self.r) / self.sigma

    @property
    def zeta(self) -> np.ndarray:
        """Merton growth rate ``r + sharpe**2 / 2`` per regime."""
        return self.r + 0.5 * self.sharpe ** 2

    @property
    def credit_rate(self) -> np.ndarray:
        """Risk-neutral discount rate of the defaultable bond, ``r + h L``."""
        return self.r + self.h * self.loss

    def replace(self, **changes) -> "MarketSpec":
        d = self.to_dict()
        d.update(changes)
        if "h" in changes and "h_hist" not in changes and np.array_equal(self.h, self.h_hist):
            d["h_hist"] = changes["h"]
        return from_dict(d, validate_spec=False)

    def to_dict(self) -> dict:
        return {
            "n_regimes": self.n_regimes,
            "r": self.r.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "h": self.h.tolist(),
            "h_hist": self.h_hist.tolist(),
            "loss": self.loss.tolist(),
            "gen_p": self.gen_p.tolist(),
            "gen_q": self.gen_q.tolist(),
            "maturity": self.maturity,
            "horizon": self.horizon,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def kappa(self) -> np.ndarray:
        """Measure-change factors ``a^Q_ij / a_ij - 1`` (NaN where ``a_ij = 0``)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            k = self.gen_q / self.gen_p - 1.0
        k[~np.isfinite(k)] = np.nan
        np.fill_diagonal(k, 0.0)
        return k


def two_regime(a12: float, a21: float, *, r=(0.03, 0.03), mu=(0.07, 0.02),
               sigma=(0.2, 0.2), h=(0.1, 0.1), loss=(0.4, 0.45), h_hist=None,
               q_rates: tuple[float, float] | None = None,
               maturity: float = 2.0, horizon: float = 2.0) -> MarketSpec:
    """Two-regime spec; defaults are the reference market with losses (0.4, 0.45)."""
    gen_p = np.array([[-a12, a12], [a21, -a21]])
    if q_rates is None:
        gen_q = gen_p
    else:
        gen_q = np.array([[-q_rates[0], q_rates[0]], [q_rates[1], -q_rates[1]]])
    return MarketSpec(r=r, mu=mu, sigma=sigma, h=h, loss=loss, gen_p=gen_p,
                      gen_q=gen_q, maturity=maturity, horizon=horizon,
                      h_hist=h_hist)


def table1(**overrides) -> MarketSpec:
    """Reference market: r=0.03, mu=(0.07, 0.02), sigma=0.2, L=(0.4, 0.45), a12=0.7, a21=0.1, h=0.1, T=R=2."""
    a12 = overrides.pop("a12", 0.7)
    a21 = overrides.pop("a21", 0.1)
    return two_regime(a12, a21, **overrides)


def validate(spec: MarketSpec) -> list[Violation]:
    """Every violated invariant of ``spec``; an empty list means valid."""
    out: list[Violation] = []
    n = spec.r.shape[0]
    for name in VECTOR_FIELDS:
        arr = getattr(spec, name)
        if arr.shape != (n,):
            out.append(Violation(name, f"expected length {n}, got {arr.shape[0]}"))
        elif not np.all(np.isfinite(arr)):
            out.append(Violation(name, "contains non-finite values"))
    for name in ("gen_p", "gen_q"):
        g = getattr(spec, name)
        if g.shape != (n, n):
            out.append(Violation(name, f"expected shape ({n}, {n}), got {g.shape}"))
            continue
        if not np.all(np.isfinite(g)):
            out.append(Violation(name, "contains non-finite values"))
            continue
        for i in range(n):
            off = np.delete(g[i], i)
            if np.any(off < 0):
                out.append(Violation(f"{name}[{i + 1}]", "negative off-diagonal rate"))
            s = math.fsum(g[i])
            if abs(s) > ROW_SUM_TOL:
                out.append(Violation(f"{name}[{i + 1}]", f"row {i + 1} sums to {s:.3g}, not 0"))
    if out:
        return out
    for i in range(n):
        if not spec.sigma[i] > 0:
            out.append(Violation(f"sigma[{i + 1}]", "volatility must be strictly positive"))
        if not 0 < spec.loss[i] <= 1:
            out.append(Violation(f"loss[{i + 1}]", "loss fraction must lie in (0, 1]"))
        if spec.h[i] < 0:
            out.append(Violation(f"h[{i + 1}]", "intensity must be nonnegative"))
        if spec.h_hist[i] < 0:
            out.append(Violation(f"h_hist[{i + 1}]", "intensity must be nonnegative"))
    if not spec.maturity > 0:
        out.append(Violation("maturity", "must be positive"))
    if not spec.horizon > 0:
        out.append(Violation("horizon", "must be positive"))
    elif spec.horizon > spec.maturity:
        out.append(Violation("horizon", f"horizon {spec.horizon} exceeds maturity {spec.maturity}"))
    return out


def from_dict(doc: dict, validate_spec: bool = True) -> MarketSpec:
    unknown = sorted(set(doc) - set(FIELDS))
    missing = [f for f in REQUIRED if f not in doc]
    problems = [Violation(f, "unknown field") for f in unknown]
    problems += [Violation(f, "missing required field") for f in missing]
    if problems:
        raise SpecError("spec schema error: " + "; ".join(map(str, problems)), problems)
    try:
        spec = MarketSpec(
            r=doc["r"], mu=doc["mu"], sigma=doc["sigma"], h=doc["h"],
            h_hist=doc.get("h_hist"), loss=doc["loss"], gen_p=doc["gen_p"],
            gen_q=doc["gen_q"], maturity=doc["maturity"], horizon=doc["horizon"],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"spec schema error: {exc}") from exc
    problems = []
    if not isinstance(doc["n_regimes"], int) or doc["n_regimes"] != spec.n_regimes:
        problems.append(Violation("n_regimes", f"does not match array length {spec.n_regimes}"))
    if validate_spec:
        problems += validate(spec)
    if problems:
        raise SpecError("invalid spec: " + "; ".join(map(str, problems)), problems)
    return spec


def load_spec(document: str) -> MarketSpec:
    """Parse and validate a JSON spec document.

    Raises:
        SpecError: on malformed JSON (message carries line and column), on
            unknown or missing fields, or on invariant violations.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SpecError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    return from_dict(doc)


def save_spec(spec: MarketSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2)


@dataclass(frozen=True, eq=False)
class RegimeCurve:
    """Per-regime values on a time grid; ``values[k, i]`` is regime i at node k."""

    grid: TimeGrid
    values: np.ndarray
    label: str
    stderr: np.ndarray | None = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != len(self.grid):
            raise ValueError(f"curve {self.label}: expected {len(self.grid)} rows, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"curve {self.label}: non-finite values")
        if self.label not in CURVE_LABELS:
            raise ValueError(f"unknown curve label {self.label!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def n_regimes(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        """Values at ``t`` (linear interpolation between nodes)."""
        from .numerics import interp_nodes
        return interp_nodes(self.grid, self.values, t)


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    """Feedback strategy: constant stock fraction and a bond-fraction curve per regime."""

    stock_frac: np.ndarray
    bond_frac: RegimeCurve
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "stock_frac", _ro(self.stock_frac, 1))
        if self.bond_frac.label != "p":
            raise ValueError("bond_frac must be a curve labelled 'p'")

    def fractions(self, t: float, regime: int, defaulted: bool) -> tuple[float, float]:
        """(stock, bond) fractions of wealth; the bond position is 0 after default."""
        if defaulted:
            return float(self.stock_frac[regime]), 0.0
        return float(self.stock_frac[regime]), float(self.bond_frac.at(t)[regime])
