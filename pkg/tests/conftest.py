"""Shared fixtures and grid-construction helpers for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

import ahsabr as ah
from ahsabr.ah_engine import Grid, kappa, local_vol

# published recalibration cases: source smile and expected one-step parameters
HAGAN_SOURCE = dict(alpha=0.0217, beta=0.40, rho=-0.2378, nu=0.2612, shift=0.03)
HAGAN_FORWARD = 0.003
HAGAN_EXPIRY = 10.0
HAGAN_STEP = 0.00125
HAGAN_CASES = [
    # (target_beta, target_shift, expected alpha, rho, nu)
    (0.40, 0.03, 0.0206, -0.2684, 0.2754),
    (0.60, 0.03, 0.0408, -0.3588, 0.2950),
    (0.20, 0.03, 0.0104, -0.1753, 0.2567),
    (0.40, 0.0325, 0.0201, -0.2557, 0.2717),
    (0.40, 0.0275, 0.0211, -0.2818, 0.2791),
]

# Eurodollar fixture: published parameters and quoting grid
ED_PARAMS = dict(alpha=0.002079, beta=0.05, rho=0.3571, nu=1.0862, shift=0.06)
ED_FORWARD = 0.0025
# quote date 2021-01-04 to the March 2023 contract expiry
ED_EXPIRY = 2.186
ED_GRID = (-0.05, 0.25, 241)
ED_ATM_PRICE_POINTS = 0.1350


def draw_parameters(rng):
    """One randomized draw from the documented inversion ranges."""
    return dict(
        alpha=float(rng.uniform(0.001, 0.05)),
        beta=float(rng.choice([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])),
        rho=float(rng.uniform(-0.9, 0.9)),
        nu=float(rng.uniform(0.01, 1.5)),
        T=float(rng.uniform(0.25, 30.0)),
    )


def inversion_setup(F, alpha, beta, rho, nu, T, b0=0.03, width=12.0, per_sd=2.0):
    """Uniform grid for an inversion draw: step = ATM sd / per_sd, width steps
    each side, with the shift grown until the lower wing clears the natural
    boundary at -shift.  For beta = 1 the required shift has no finite fixed
    point at extreme alpha*sqrt(T), so the lower width backs off instead."""
    width_lo = width
    while True:
        b = b0
        fitted = False
        for _ in range(60):
            sig_tot = alpha * (F + b) ** beta * math.sqrt(T)
            h = sig_tot / per_sd
            need = (width_lo + 1.5) * h - F
            if need <= b:
                fitted = True
                break
            b = need * 1.01
        if fitted:
            break
        width_lo -= 1.0
        if width_lo < 5.0:
            raise RuntimeError("no feasible inversion grid for this draw")
    sig_tot = alpha * (F + b) ** beta * math.sqrt(T)
    h = sig_tot / per_sd
    lo = F - width_lo * h
    hi = F + width * h
    count = int(round((hi - lo) / h)) + 1
    params = ah.SabrParams(alpha=alpha, beta=beta, rho=rho, nu=nu, shift=b)
    return params, ah.build_uniform_grid(lo, hi, max(count, 7), F)


def _decay_length(k, F, params, T, sigma):
    """Length scale of the one-step kernel decay at strike k."""
    theta2 = local_vol(k, F, params) ** 2 * kappa(k, F, sigma, T)
    return math.sqrt(0.5 * T * theta2)


def stretched_grid(F, params, T, sigma=None, inner_sds=8.0, per_sd=2.0,
                   target=18.0, max_wing=600):
    """Grid that spans inner_sds ATM standard deviations uniformly and then
    marches each wing in decay-length steps until the accumulated decay
    exponent reaches `target` (tail mass ~ exp(-target)).

    Returns (grid, reached) where reached is False when the lower wing hit
    the natural boundary (or its floating-point resolution) first.
    """
    b = params.shift
    if sigma is None:
        sigma = params.alpha * (F + b) ** params.beta
    s = sigma * math.sqrt(T)
    h = s / per_sd
    u_floor = 1e-13 * (F + b)  # below this, k + shift is lost to rounding
    lo = max(F - inner_sds * s, -b + max(0.5 * h, 4.0 * u_floor))
    n_lo = int(math.floor((F - lo) / h))
    n_hi = int(round(inner_sds * per_sd))
    inner = list(F + h * np.arange(-n_lo, n_hi + 1))

    k, step, exponent = inner[-1], h, 0.0
    wing_hi = []
    for _ in range(max_wing):
        length = _decay_length(k, F, params, T, sigma)
        step = min(max(h, 0.5 * length), 1.35 * step)
        k += step
        exponent += step / max(length, 1e-300)
        wing_hi.append(k)
        if exponent >= target:
            break

    k, step, exponent = inner[0], h, 0.0
    wing_lo, reached = [], False
    for _ in range(max_wing):
        if k + b <= 4.0 * u_floor:
            break
        length = _decay_length(k, F, params, T, sigma)
        step = min(max(u_floor, 0.5 * length), 1.35 * step, 0.5 * (k + b))
        k_new = k - step
        if not -b < k_new < k:
            break
        k = k_new
        exponent += step / max(length, 1e-300)
        wing_lo.append(k)
        if exponent >= target:
            reached = True
            break

    strikes = np.array(list(reversed(wing_lo)) + inner + wing_hi)
    grid = Grid(strikes=strikes, forward_index=len(wing_lo) + n_lo)
    return grid, reached


def _mass_grid_at_shift(F, alpha, beta, rho, nu, T, b0, sigma_mult, target):
    """Grow the shift until the lower tail decays on-grid.  Always possible
    for beta < 1; at beta = 1 the span scales with the shift itself, so the
    grid stays truncated at the boundary's floating-point resolution."""
    b = b0
    params = grid = None
    reached = False
    for _ in range(40):
        params = ah.SabrParams(alpha=alpha, beta=beta, rho=rho, nu=nu, shift=b)
        sigma = sigma_mult * alpha * (F + b) ** beta
        try:
            grid, reached = stretched_grid(F, params, T, sigma=sigma,
                                           target=target)
        except (ValueError, ah.errors.ForwardTooCloseToBoundary):
            grid, reached = None, False
        if grid is not None and (reached or beta >= 1.0):
            break
        b *= 4.0
    if grid is None:
        raise RuntimeError("no feasible mass grid for this draw")
    return params, grid, reached


def mass_setup(F, alpha, beta, rho, nu, T, b0=0.03):
    """Parameters and grid for the density-mass check.

    Two passes: the first sizes the grid with the local-vol ATM estimate, the
    second resizes it with the self-consistent ATM vol from the first solve
    (the smile can move sigma_ATM well off alpha*(F+b)^beta, which scales the
    kappa wings).
    """
    params, grid, reached = _mass_grid_at_shift(
        F, alpha, beta, rho, nu, T, b0, sigma_mult=1.0, target=18.0
    )
    surface = ah.price_self_consistent(grid, params, T)
    mult = surface.slice.atm_normal_vol / (
        alpha * (F + params.shift) ** beta
    )
    params, grid, reached = _mass_grid_at_shift(
        F, alpha, beta, rho, nu, T, b0, sigma_mult=mult, target=25.0
    )
    return params, grid, reached


@pytest.fixture(scope="session")
def ed_surface():
    """Solved Eurodollar-fixture surface on the published 241-point grid."""
    params = ah.SabrParams(**ED_PARAMS)
    grid = ah.build_uniform_grid(*ED_GRID, ED_FORWARD)
    return ah.price_self_consistent(grid, params, ED_EXPIRY)
