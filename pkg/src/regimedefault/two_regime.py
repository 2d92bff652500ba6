"""Closed-form two-regime solutions for a homogeneous generator.

K is explicit and p is the admissible root of a quadratic. J is a
cosh/sinh kernel integrated against the forcing by adaptive quadrature.
These run on code paths independent of the ODE solvers in :mod:`hjb`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .bond import PsiCurve, lower_bound
from .hjb import foc, solve_p_node
from .market import MarketSpec, RegimeCurve
from .numerics import quad

ROOT_CHECK_TOL = 1e-8


class FormulaDomainError(ArithmeticError):
    """The quadratic discriminant is negative."""


class RootMismatch(ArithmeticError):
    """The printed quadratic root is not a root of the first-order condition."""


def _need_two(spec):
    if spec.n_regimes != 2:
        raise ValueError("two-regime closed forms need N = 2")


@dataclass(frozen=True)
class CorollaryInputs:
    zeta: tuple[float, float]
    psi_ratio: tuple[float, float]  # psi_2/psi_1 - 1, psi_1/psi_2 - 1
    c: tuple[float, float]
    c_plus: float
    theta: tuple[float, float]
    delta: tuple[float, float]

    @classmethod
    def build(cls, spec: MarketSpec, psi_row, theta_row) -> "CorollaryInputs":
        _need_two(spec)
        a11, a22 = spec.gen_p[0, 0], spec.gen_p[1, 1]
        h = spec.h_hist
        c1, c2 = h[0] - a11, h[1] - a22
        ratio = (psi_row[1] / psi_row[0] - 1.0, psi_row[0] / psi_row[1] - 1.0)
        delta = tuple(_discriminant(theta_row[i], ratio[i], h[i], spec.gen_p[i, i])
                      for i in range(2))
        return cls(tuple(spec.zeta), ratio, (c1, c2), (c1 - c2) ** 2 + 4 * a11 * a22,
                   tuple(theta_row), delta)

    def c_plus_alt(self, spec: MarketSpec) -> float:
        """c_+ from the trace/determinant of the J-system matrix (consistency check)."""
        a11, a22 = spec.gen_p[0, 0], spec.gen_p[1, 1]
        c1, c2 = self.c
        tr, det = c1 + c2, c1 * c2 - a11 * a22
        return tr * tr - 4 * det


def _discriminant(th, ratio, h, aii):
    return (-4.0 * th * ratio * (h - th + aii * ratio)
            + (th - aii * ratio + h * ratio - th * ratio) ** 2)


def closed_k(spec: MarketSpec, t: float) -> tuple[float, float]:
    """Explicit post-default components ``(K(t,1), K(t,2))``."""
    _need_two(spec)
    a = (spec.gen_p[0, 0], spec.gen_p[1, 1])
    zeta = spec.zeta
    tau = spec.horizon - t
    s = a[0] + a[1]
    out = []
    for i in range(2):
        j = 1 - i
        if s == 0.0:
            out.append(zeta[i] * tau)
            continue
        em1 = math.expm1(s * tau)
        val = (zeta[j] * a[i] * (-em1 + s * tau)
               + zeta[i] * (a[j] ** 2 * tau + a[i] * (em1 + a[j] * tau))) / s ** 2
        out.append(val)
    return out[0], out[1]


def closed_p_regime(spec: MarketSpec, psi_row, th: float, regime: int) -> float:
    """Closed-form bond fraction for one regime at one time.

    ``theta = 0`` gives the linear root; otherwise the ``+sqrt(Delta)``
    quadratic root, rewritten in the cancellation-free form, and verified
    against the first-order condition.

    Raises:
        FormulaDomainError: negative discriminant.
        RootMismatch: the root is not admissible or does not zero the
            first-order condition.
    """
    i = regime
    h = spec.h_hist[i]
    aii = spec.gen_p[i, i]
    ratio = psi_row[1 - i] / psi_row[i] - 1.0
    if ratio == 0.0:
        # no jump exposure: theta - h/(1-p) = 0
        if th == 0.0:
            if h == 0.0:
                return 0.0
            raise FormulaDomainError("theta = 0 with no price dispersion has no root")
        p = 1.0 - h / th
    elif th == 0.0:
        p = -(h + aii * ratio) / ((h - aii) * ratio)
    else:
        delta = _discriminant(th, ratio, h, aii)
        if delta < 0:
            raise FormulaDomainError(f"discriminant {delta:.3g} < 0 (regime {i + 1})")
        b = (aii - h) * ratio + th * (ratio - 1.0)
        sq = math.sqrt(delta)
        if b >= 0:
            p = (b + sq) / (2.0 * th * ratio)
        else:
            # same root: (b + sq)/(2 a) = -2 c/(b - sq) with c the constant term
            const = th - h - aii * ratio
            p = 2.0 * const / (sq - b)
    rates = np.array([0.0, 0.0])
    rates[1 - i] = spec.gen_p[i, 1 - i]
    m = lower_bound(np.asarray(psi_row), i)
    f = foc(p, th, h, rates, np.asarray(psi_row), i)
    if not (m < p < 1.0) or abs(f) > ROOT_CHECK_TOL:
        raise RootMismatch(f"closed-form p={p!r} (regime {i + 1}) gives f={f:.3g}, bound M={m}")
    return p


def closed_p(spec: MarketSpec, psi: PsiCurve, t: float, theta_row=None,
             fallback: bool = False) -> tuple[float, float]:
    """``(p_1(t), p_2(t))`` from the closed form; ``theta_row`` defaults to theta at ``t``.

    With ``fallback=True`` a negative discriminant is reported through
    :mod:`warnings` and that regime is solved by root finding instead.
    """
    _need_two(spec)
    row = psi.at(t)
    if theta_row is None:
        from .bond import theta as theta_curve
        theta_row = theta_curve(spec, psi).at(t)
    out = []
    for i in range(2):
        try:
            out.append(closed_p_regime(spec, row, theta_row[i], i))
        except FormulaDomainError as exc:
            if not fallback:
                raise
            warnings.warn(f"{exc}; using the root solver at t={t:g}", RuntimeWarning)
            rates = np.array([0.0, 0.0])
            rates[1 - i] = spec.gen_p[i, 1 - i]
            out.append(solve_p_node(theta_row[i], spec.h_hist[i], rates, np.asarray(row), i))
    return out[0], out[1]


def forcing_g(spec: MarketSpec, p, th, K, ratio) -> np.ndarray:
    """``g_i = p_i theta_i + h_i (log(1-p_i) + K_i) - a_ii log(1 + p_i ratio_i)``."""
    a = np.array([spec.gen_p[0, 0], spec.gen_p[1, 1]])
    p, th, K, ratio = map(np.asarray, (p, th, K, ratio))
    return p * th + spec.h_hist * (np.log1p(-p) + K) - a * np.log1p(p * ratio)


def closed_j(spec: MarketSpec, psi: PsiCurve, K: RegimeCurve, p: RegimeCurve, t: float,
             theta: RegimeCurve | None = None, tol: float = 1e-8) -> tuple[float, float]:
    """Pre-default components ``(J(t,1), J(t,2))`` by quadrature of the closed form.

    With ``c_i = h_i - a_ii`` and ``c_+ = (c_1-c_2)**2 + 4 a_11 a_22``,

        J(t,i) = 1/(2 c_+) [ (-sqrt(c_+) cosh(x) + (c_j - c_i) sinh(x)) e^{t(c_1+c_2)/2} I_1
                           - 2 a_ii sinh(x) e^{t(c_1+c_2)/2} I_2 ],   x = t sqrt(c_+)/2

    where I_1, I_2 integrate ``e^{-s(sqrt(c_+) + c_1 + c_2)/2}`` times linear
    combinations of ``zeta + g`` over ``[t, R]``. The t- and s-exponents are
    merged before exponentiating.
    """
    _need_two(spec)
    R = spec.horizon
    if t >= R:
        return 0.0, 0.0
    if theta is None:
        from .bond import theta as theta_curve
        theta = theta_curve(spec, psi)
    a = (spec.gen_p[0, 0], spec.gen_p[1, 1])
    h = spec.h_hist
    c = (h[0] - a[0], h[1] - a[1])
    cp = (c[0] - c[1]) ** 2 + 4 * a[0] * a[1]
    sq = math.sqrt(cp)
    csum = c[0] + c[1]
    zeta = spec.zeta

    def phi(s):
        row = psi.at(s)
        ratio = (row[1] / row[0] - 1.0, row[0] / row[1] - 1.0)
        return zeta + forcing_g(spec, p.at(s), theta.at(s), K.at(s), ratio)

    if sq == 0.0:
        raise ArithmeticError("c_+ = 0: repeated eigenvalue, closed form degenerates")

    out = []
    for i in range(2):
        j = 1 - i
        sgn = 1.0 if i == 0 else -1.0
        dc = sgn * (c[1] - c[0])  # (c_j - c_i) in the 1-based formula
        hi_minus_ci = a[i]
        hj_minus_cj = a[j]
        x = t * sq / 2.0

        def integrand(s):
            ph = phi(s)
            # e^{t csum/2} e^{±x} e^{-s (sq + csum)/2} [e^{s sq}]: exponents merged
            base = (t - s) * csum / 2.0
            e_m = lambda extra: math.exp(base + extra)
            # kernel pieces with and without the e^{s sq} factor
            k0p, k0m = e_m(x - s * sq / 2.0), e_m(-x - s * sq / 2.0)
            k1p, k1m = e_m(x + s * sq / 2.0), e_m(-x + s * sq / 2.0)
            cosh0, sinh0 = 0.5 * (k0p + k0m), 0.5 * (k0p - k0m)
            cosh1, sinh1 = 0.5 * (k1p + k1m), 0.5 * (k1p - k1m)
            # first integral, times (-sq cosh(x) + dc sinh(x))
            first = (-sq * cosh1 + dc * sinh1) * (2.0 * hi_minus_ci * ph[j] - (dc + sq) * ph[i]) \
                - (-sq * cosh0 + dc * sinh0) * (2.0 * hi_minus_ci * ph[j] - (dc - sq) * ph[i])
            # second integral, times -2 a_ii sinh(x)
            second = sinh1 * ((dc - sq) * ph[j] + 2.0 * hj_minus_cj * ph[i]) \
                - sinh0 * ((sq + dc) * ph[j] + 2.0 * hj_minus_cj * ph[i])
            return first - 2.0 * hi_minus_ci * second

        out.append(quad(integrand, t, R, tol) / (2.0 * cp))
    return out[0], out[1]
