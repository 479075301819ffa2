"""Numerical building blocks: stable log-domain helpers, special functions
used for p-values, and reproducible counter-based random streams."""

from __future__ import annotations

import math
import sys

import numpy as np

_EPS = 1e-15
_TINY = sys.float_info.min / sys.float_info.epsilon
_MAX_ITER = 10_000


def logsumexp(v) -> float:
    """``log(sum(exp(v)))`` computed with a max shift."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    m = float(np.max(v))
    if m == -math.inf:
        return -math.inf
    return m + math.log(float(np.sum(np.exp(v - m))))


def softmax(v, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis``; accepts vectors or stacked rows."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - np.max(v, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def _gamma_series(a: float, x: float) -> float:
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    # modified Lentz evaluation of the upper tail Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def reg_lower_incomplete_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x).

    Uses the power series below ``a + 1`` and the continued fraction for the
    complement above it.
    """
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    if not x >= 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        p = _gamma_series(a, x)
    else:
        p = 1.0 - _gamma_continued_fraction(a, x)
    return min(1.0, max(0.0, p))


def chi2_sf(statistic: float, df: int) -> float:
    """Upper tail probability of a chi-squared distribution."""
    if statistic <= 0.0:
        return 1.0
    return 1.0 - reg_lower_incomplete_gamma(df / 2.0, statistic / 2.0)


def standard_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the limiting Kolmogorov distribution,
    ``2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)``."""
    if lam <= 0.0:
        return 1.0
    if lam < 0.2:
        # series alternates too slowly here; the tail is 1 to double precision
        return 1.0
    total = 0.0
    for k in range(1, 200):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < 1e-18:
            break
    return min(1.0, max(0.0, 2.0 * total))


class RandomStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by the Philox generator so that separate keys give independent
    sequences regardless of the order in which they are consumed. ``child``
    derives a sub-stream deterministically from this stream's key.
    """

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple = ()):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = tuple(int(p) for p in _path)
        self._generator = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.key))
        )

    @property
    def key(self) -> tuple:
        return (self.seed, self.stream_id) + self._path

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def child(self, *ids: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id, self._path + tuple(ids))

    def get_state(self) -> dict:
        return self._generator.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._generator.bit_generator.state = state

    def normal(self, size) -> np.ndarray:
        return self._generator.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def __repr__(self) -> str:
        return f"RandomStream(key={self.key})"


def draw_normal(stream: RandomStream, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    return stream.normal(n)
