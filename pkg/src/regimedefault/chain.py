"""Continuous-time Markov chain utilities.

Transition matrices by Pade(6) scaling-and-squaring, exact path sampling with
exponential holding times, and the two-state occupation-time density.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import bessel_i, quad


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream ``(seed, index)``; path k of a run uses index k."""
    key = np.array([int(index) & 0xFFFFFFFFFFFFFFFF, int(seed) & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class PathStreams:
    """Re-keys one Philox generator to ``(seed, index)``; same draws as :func:`path_stream`.

    Building a fresh generator per path dominates the cost of short paths.
    :meth:`at` hands back the same object each time, so a stream is only
    valid until the next call.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bits = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self._gen = np.random.Generator(self._bits)

    def at(self, index: int) -> np.random.Generator:
        self._bits.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.zeros(4, dtype=np.uint64),
                      "key": np.array([int(index) & 0xFFFFFFFFFFFFFFFF, self.seed], dtype=np.uint64)},
            "buffer": np.zeros(4, dtype=np.uint64), "buffer_pos": 4, "has_uint32": 0, "uinteger": 0,
        }
        return self._gen


# Pade(6, 6) coefficients for exp.
_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a diagonal Pade(6) approximant."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    norm = np.max(np.sum(np.abs(a), axis=1)) if n else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5))) + 1) if norm > 0.5 else 0
    x = a / (2.0 ** s)
    eye = np.eye(n)
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    power = eye
    for k, c in enumerate(_PADE6):
        if k:
            power = power @ x
        num += c * power
        den += c * (-1) ** k * power
    out = np.linalg.solve(den, num)
    for _ in range(s):
        out = out @ out
    return out


def transition_matrix(generator: np.ndarray, dt: float) -> np.ndarray:
    """``P(dt) = exp(generator * dt)`` with rows renormalised to sum to 1."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    g = np.asarray(generator, dtype=float)
    if dt == 0:
        return np.eye(g.shape[0])
    p = expm(g * dt)
    p[(p < 0) & (p > -1e-14)] = 0.0
    return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ChainPath:
    """Piecewise-constant chain trajectory on ``[0, horizon]`` (regimes 0-based)."""

    initial_state: int
    jump_times: np.ndarray
    states: np.ndarray  # states[k] is the regime entered at jump_times[k]
    horizon: float

    def state_at(self, t: float) -> int:
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.initial_state if k == 0 else int(self.states[k - 1])

    def pieces(self):
        """Yield ``(start, end, regime)`` for each constant stretch."""
        start, state = 0.0, self.initial_state
        for t, s in zip(self.jump_times, self.states):
            yield start, float(t), state
            start, state = float(t), int(s)
        yield start, self.horizon, state

    def occupation(self, n_regimes: int) -> np.ndarray:
        occ = np.zeros(n_regimes)
        for a, b, s in self.pieces():
            occ[s] += b - a
        return occ


def sample_path(generator: np.ndarray, initial: int, horizon: float,
                rng: np.random.Generator) -> ChainPath:
    """Exact chain path: Exponential(-a_ii) holding times, jump i->j w.p. a_ij/(-a_ii)."""
    g = np.asarray(generator, dtype=float)
    times, states = [], []
    t, i = 0.0, int(initial)
    two = g.shape[0] == 2
    while True:
        rate = -g[i, i]
        if rate <= 0:
            break
        t += rng.standard_exponential() / rate
        if t >= horizon:
            break
        if two:
            # the only target; the uniform is still drawn to keep streams aligned
            rng.random()
            i = 1 - i
            times.append(t)
            states.append(i)
            continue
        probs = np.clip(g[i], 0.0, None)
        probs[i] = 0.0
        u = rng.random() * probs.sum()
        j = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        j = min(j, len(probs) - 1)
        while probs[j] == 0.0:
            j -= 1
        times.append(t)
        states.append(j)
        i = j
    return ChainPath(int(initial), np.array(times), np.array(states, dtype=int), float(horizon))


@dataclass(frozen=True)
class OccupationDensity:
    """Law of the time spent in the starting regime of a two-state chain over ``[0, R]``.

    An atom of mass ``atom`` at ``x = R`` (no exit before R) plus an
    absolutely continuous part with density :meth:`pdf` on ``(0, R)``.
    """

    rate_out: float
    rate_back: float
    R: float

    @property
    def atom(self) -> float:
        return math.exp(-self.rate_out * self.R)

    def pdf(self, x: float) -> float:
        a, b, R = self.rate_out, self.rate_back, self.R
        if x <= 0.0 or x >= R:
            # limits of the continuous part at the end points
            if x == 0.0:
                return a * math.exp(-b * R)
            if x == R:
                return a * math.exp(-a * R) * (1.0 + b * R)
            return 0.0
        y = R - x
        z = 2.0 * math.sqrt(a * b * x * y)
        return math.exp(-(a * x + b * y)) * (
            a * bessel_i(0, z) + math.sqrt(a * b * x / y) * bessel_i(1, z))

    def expect(self, g, tol: float = 1e-12) -> float:
        """``E[g(X)]``: the atom is applied analytically, the rest by quadrature."""
        return self.atom * g(self.R) + quad(lambda x: g(x) * self.pdf(x), 0.0, self.R, tol)

    def total_mass(self, tol: float = 1e-12) -> float:
        return self.expect(lambda x: 1.0, tol)


def occupation_density_2state(a12: float, a21: float, R: float, start: int) -> OccupationDensity:
    """Occupation-time law in the starting regime (``start`` is 1 or 2)."""
    if not (a12 > 0 and a21 > 0):
        raise ValueError("transition rates must be strictly positive")
    if not R > 0:
        raise ValueError("R must be positive")
    if start == 1:
        return OccupationDensity(a12, a21, R)
    if start == 2:
        return OccupationDensity(a21, a12, R)
    raise ValueError("start must be 1 or 2")
