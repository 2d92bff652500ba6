"""Small numerical kernels shared by the solvers.

Fixed-step RK4 for linear terminal-value systems, a bracketed Brent root
finder, adaptive Gauss-Kronrod quadrature and the modified Bessel functions
I0 and I1.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_STEPS_PER_YEAR = 2000


class NumericsError(RuntimeError):
    """Base class for kernel failures."""


class NonFiniteError(NumericsError):
    pass


class BracketError(NumericsError):
    pass


class ToleranceNotMet(NumericsError):
    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 = s_0 < s_1 < ... < s_steps = t1``."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError(f"TimeGrid needs t0 < t1, got {self.t0} and {self.t1}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"TimeGrid needs a positive integer step count, got {self.steps}")

    @classmethod
    def over(cls, t0: float, t1: float, steps_per_year: int = DEFAULT_STEPS_PER_YEAR) -> "TimeGrid":
        steps = max(1, int(math.ceil((t1 - t0) * steps_per_year - 1e-9)))
        return cls(t0, t1, steps)

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        k = np.arange(self.steps + 1)
        out = self.t0 + k * (self.t1 - self.t0) / self.steps
        out[-1] = self.t1
        return out

    def __len__(self) -> int:
        return self.steps + 1

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.t1, self.steps * factor)


# --------------------------------------------------------------------------
# linear ODE systems
# --------------------------------------------------------------------------

def integrate_linear_terminal(
    matrix: Callable[[float], np.ndarray],
    forcing: Callable[[float], np.ndarray] | None,
    terminal,
    grid: TimeGrid,
) -> np.ndarray:
    """Solve ``y'(t) = F(t) y(t) + b(t)`` backward from ``y(t1) = terminal``.

    Classical RK4 stepping from ``grid.t1`` down to ``grid.t0``.

    Args:
        matrix: ``t -> F(t)``, an ``(n, n)`` array.
        forcing: ``t -> b(t)``, an ``(n,)`` array, or None for a homogeneous
            system.
        terminal: value at ``grid.t1``; copied verbatim into the last row.
        grid: integration grid.

    Returns:
        Array of shape ``(len(grid), n)``; row k is y at node k.
    """
    y_end = np.array(terminal, dtype=float)
    n = y_end.shape[0]
    ts = grid.nodes
    out = np.empty((len(ts), n))
    out[-1] = y_end
    zero = np.zeros(n)

    def rhs(t, y):
        b = zero if forcing is None else forcing(t)
        return matrix(t) @ y + b

    y = y_end.copy()
    for k in range(len(ts) - 1, 0, -1):
        t = ts[k]
        h = ts[k - 1] - t  # negative
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(f"non-finite ODE state at t={ts[k - 1]:.6g}: {y}")
        out[k - 1] = y
    return out


def interp_nodes(grid: TimeGrid, values: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of node values (rows) at time ``t``."""
    s = (t - grid.t0) / grid.dt
    k = int(math.floor(s))
    if k < 0:
        return values[0]
    if k >= grid.steps:
        return values[-1]
    w = s - k
    return (1.0 - w) * values[k] + w * values[k + 1]


# --------------------------------------------------------------------------
# root finding
# --------------------------------------------------------------------------

def find_root_bracketed(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Brent's method on ``[lo, hi]`` stopping when ``|f(x)| <= tol``.

    After ``max_iter`` Brent iterations the search continues by plain
    bisection until the tolerance is met or the bracket collapses to
    adjacent floats. The returned point always lies in ``[lo, hi]``.
    """
    a, b = float(lo), float(hi)
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if not (np.isfinite(fa) and np.isfinite(fb)) or fa * fb > 0:
        raise BracketError(f"no sign change on [{a!r}, {b!r}]: f={fa!r}, {fb!r}")

    if abs(fa) < abs(fb):
        a, b, fa, fb = b, a, fb, fa
    c, fc = a, fa
    d = e = b - a
    for _ in range(max_iter):
        if abs(fb) <= tol:
            return b
        if fb * fc > 0:
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        m = 0.5 * (c - b)
        xtol = 2.0 * np.finfo(float).eps * abs(b)
        if abs(m) <= xtol:
            break
        if abs(e) >= xtol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p, q = 2.0 * m * s, 1.0 - s
            else:
                qa, r = fa / fc, fb / fc
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0))
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            else:
                p = -p
            if 2.0 * p < min(3.0 * m * q - abs(xtol * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = e = m
        else:
            d = e = m
        a, fa = b, fb
        b = b + d if abs(d) > xtol else b + math.copysign(xtol, m)
        fb = f(b)
    else:
        if fb * fc > 0:
            # restore the bracket invariant after the last Brent step
            c, fc = a, fa
        return _bisect(f, b, c, fb, fc, tol)
    return b if abs(fb) <= abs(fc) else c


def _bisect(f, x0, x1, f0, f1, tol):
    lo, hi, flo = (x0, x1, f0) if x0 < x1 else (x1, x0, f1)
    best, fbest = (x0, f0) if abs(f0) <= abs(f1) else (x1, f1)
    while abs(fbest) > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if abs(fm) < abs(fbest):
            best, fbest = mid, fm
        if fm * flo > 0:
            lo, flo = mid, fm
        else:
            hi = mid
    return best


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------

# 15-point Kronrod nodes with the embedded 7-point Gauss rule.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_X15 = np.concatenate([-_XK[:-1], _XK[::-1]])
_W15 = np.concatenate([_WK[:-1], _WK[::-1]])
_W7 = np.zeros(15)
_W7[1:7:2] = _WG[:3]
_W7[7] = _WG[3]
_W7[8:15] = _W7[6::-1]


def _gk15(f, a, b):
    """Kronrod estimate and error estimate on one panel.

    An error estimate already at round-off level (relative to the integral
    of ``|f|``) is reported as 0: splitting such a panel cannot improve it.
    """
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    fx = np.array([f(mid + half * x) for x in _X15], dtype=float)
    if not np.all(np.isfinite(fx)):
        raise NumericsError(f"integrand not finite on [{a}, {b}]")
    k = half * float(_W15 @ fx)
    g = half * float(_W7 @ fx)
    err = abs(k - g)
    if err <= _ROUNDOFF * abs(half) * float(_W15 @ np.abs(fx)):
        err = 0.0
    return k, err


_ROUNDOFF = 50 * np.finfo(float).eps


def quad(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
         max_depth: int = 50) -> float:
    """Adaptive Gauss-Kronrod (7/15) integral of ``f`` over ``[a, b]``.

    Intervals are bisected until the summed error estimate is below ``tol``.
    The 15-point rule is exact for polynomials of degree <= 22, which is
    what the single-panel pass relies on.
    """
    if a == b:
        return 0.0
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0
    est, err = _gk15(f, a, b)
    if err <= tol:
        return sign * est
    # max-heap on panel error: (-error, seq, a, b, estimate, depth)
    panels = [(-err, 0, a, b, est, 0)]
    seq = 1
    total_err = err
    while total_err > tol:
        r0, _, lo, hi, e0, depth = heapq.heappop(panels)
        if depth >= max_depth:
            heapq.heappush(panels, (r0, 0, lo, hi, e0, depth))
            raise ToleranceNotMet(
                f"quad: max depth {max_depth} reached, error estimate {total_err:.3g} > {tol:.3g}",
                sign * math.fsum(p[4] for p in panels))
        m = 0.5 * (lo + hi)
        e1, r1 = _gk15(f, lo, m)
        e2, r2 = _gk15(f, m, hi)
        heapq.heappush(panels, (-r1, seq, lo, m, e1, depth + 1))
        heapq.heappush(panels, (-r2, seq + 1, m, hi, e2, depth + 1))
        seq += 2
        total_err = math.fsum(-p[0] for p in panels)
    total = math.fsum(p[4] for p in panels)
    return sign * total


# --------------------------------------------------------------------------
# modified Bessel functions of the first kind
# --------------------------------------------------------------------------

BESSEL_SWITCH = 15.0


def bessel_i(order: int, z: float) -> float:
    """I0(z) or I1(z) for real ``z >= 0``.

    Power series below ``z = 15``; above it the large-argument asymptotic
    expansion, truncated at its smallest term. Both branches stay within
    1e-12 relative error.
    """
    if order not in (0, 1):
        raise ValueError("only orders 0 and 1 are supported")
    z = float(z)
    if not z >= 0.0:
        raise ValueError(f"bessel_i needs z >= 0, got {z}")
    if z <= BESSEL_SWITCH:
        return _bessel_series(order, z)
    return _bessel_asymptotic(order, z)


def _bessel_series(order, z):
    q = 0.25 * z * z
    term = 1.0 if order == 0 else 0.5 * z
    total = term
    k = 0
    while True:
        k += 1
        term *= q / (k * (k + order))
        total += term
        if term <= 1e-17 * total:
            return total


def _bessel_asymptotic(order, z):
    mu = 4.0 * order * order
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        nxt = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
        if abs(nxt) >= abs(term) or abs(nxt) < 1e-17:
            break
        term = nxt
        total += term
    return math.exp(z) / math.sqrt(2.0 * math.pi * z) * total
