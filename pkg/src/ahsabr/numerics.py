"""Scalar special functions, Bachelier pricing/inversion and the tridiagonal solver.

Everything here is a pure function; all other modules build on this one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfcx

from .errors import PriceOutOfBounds, SingularPivot

SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)


def norm_pdf(x):
    """Standard normal density exp(-x^2/2)/sqrt(2*pi). Accepts scalars or arrays."""
    with np.errstate(over="ignore"):
        # x^2 overflowing to inf still maps to the correct density of 0
        return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def norm_cdf(x):
    """Standard normal CDF via the complementary error function."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(-float(x) * _INV_SQRT2)
    from scipy.special import erfc

    return 0.5 * erfc(-np.asarray(x, dtype=float) * _INV_SQRT2)


def mills_ratio(x):
    """Phi(-x)/phi(x) for x >= 0, stable for arbitrarily large x.

    Uses the scaled complementary error function, so neither the tail CDF nor
    the density is ever formed on its own (both underflow past x ~ 38).
    """
    return _SQRT_HALF_PI * erfcx(np.asarray(x, dtype=float) * _INV_SQRT2)


def bachelier_price(F, k, sigma, T, kind="call"):
    """Undiscounted Bachelier (normal) option price.

    sigma is the annualized normal volatility; at k == F both call and put
    equal sigma * sqrt(T / (2*pi)).
    """
    if sigma <= 0.0 or T <= 0.0:
        raise ValueError("bachelier_price requires sigma > 0 and T > 0")
    s = sigma * math.sqrt(T)
    m = F - k
    d = m / s
    call = m * norm_cdf(d) + s * norm_pdf(d)
    if kind == "call":
        return call
    if kind == "put":
        # parity keeps call - put == F - k exact to the last bit
        return call - m
    raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")


def bachelier_implied_vol(price, F, k, T, kind="call"):
    """Invert the Bachelier formula for the annualized normal volatility.

    The reproduced price matches the input to ~1e-12 relative.  Raises
    PriceOutOfBounds if the price does not sit strictly above intrinsic
    (any larger finite price is attainable in the normal model).
    """
    if T <= 0.0:
        raise ValueError("bachelier_implied_vol requires T > 0")
    if kind not in ("call", "put"):
        raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")
    if not math.isfinite(price):
        raise PriceOutOfBounds(f"price {price} is not finite")
    # work with the call time value; put converts through parity
    call = price if kind == "call" else price + (F - k)
    intrinsic = max(F - k, 0.0)
    time_value = call - intrinsic
    if time_value <= 0.0:
        raise PriceOutOfBounds(
            f"price {price} is at or below intrinsic for strike {k}"
        )
    sqrt_t = math.sqrt(T)
    if k == F:
        return price * SQRT_2PI / sqrt_t

    def objective(sigma):
        return bachelier_price(F, k, sigma, T, "call") - call

    lo = 1e-300
    hi = max(abs(F - k) / sqrt_t, time_value * SQRT_2PI / sqrt_t)
    for _ in range(200):
        if objective(hi) > 0.0:
            break
        hi *= 2.0
    else:  # pragma: no cover - cannot trigger for finite prices
        raise PriceOutOfBounds(f"price {price} exceeds any attainable value")
    sigma = brentq(objective, lo, hi, rtol=8.9e-16, maxiter=200)
    # Newton polish; vega = sqrt(T)*phi(d) is exact
    for _ in range(2):
        d = (F - k) / (sigma * sqrt_t)
        vega = sqrt_t * norm_pdf(d)
        if vega <= 0.0:
            break
        step = objective(sigma) / vega
        if sigma - step > 0.0:
            sigma -= step
    return sigma


@dataclass(frozen=True)
class TridiagonalSystem:
    """Tridiagonal linear system: lower/upper have length N-1, diag/rhs length N."""

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        n = len(self.diag)
        if len(self.rhs) != n or len(self.lower) != n - 1 or len(self.upper) != n - 1:
            raise ValueError("inconsistent tridiagonal system dimensions")


def thomas_solve(sys: TridiagonalSystem) -> np.ndarray:
    """Solve a tridiagonal system by the Thomas algorithm (no pivoting).

    Assembled pricing systems are strictly diagonally dominant so pivoting is
    unnecessary; a SingularPivot guard remains as defense in depth.
    """
    n = len(sys.diag)
    lower = np.asarray(sys.lower, dtype=float)
    diag = np.asarray(sys.diag, dtype=float)
    upper = np.asarray(sys.upper, dtype=float)
    rhs = np.asarray(sys.rhs, dtype=float)

    c = np.empty(n - 1) if n > 1 else np.empty(0)
    d = np.empty(n)
    piv = diag[0]
    if abs(piv) < 1e-300:
        raise SingularPivot("zero pivot at row 0")
    if n > 1:
        c[0] = upper[0] / piv
    d[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i - 1] * c[i - 1]
        if abs(piv) < 1e-300:
            raise SingularPivot(f"zero pivot at row {i}")
        if i < n - 1:
            c[i] = upper[i] / piv
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / piv

    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x
