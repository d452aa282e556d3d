"""
Parabolic cylinder functions and the edge quantization condition.

The half-line fiber operator -1/2 d^2/dx^2 + 1/2 (x - kappa)^2 with a
Dirichlet condition at x = 0 has eigenfunctions proportional to
D_{alpha - 1/2}(sqrt(2) (x - kappa)), so its eigenvalues are the roots in
alpha of

    D_{alpha - 1/2}(-sqrt(2) kappa) = 0.

This module evaluates D_nu(z) for real order and argument and solves that
condition. It shares no code with the finite-difference solver in band.py,
which makes it usable as an independent check on it.

Evaluation
----------
- |z| <= SERIES_CROSSOVER: D_nu(z) = exp(-z^2/4) u(z), where u solves
  u'' - z u' + nu u = 0. u is summed as the even and odd power series of the
  two confluent hypergeometric solutions, seeded with D_nu(0) and D_nu'(0).
- |z| > SERIES_CROSSOVER: the large-argument expansion, with the extra
  exponentially growing term on the negative axis. Both sums are cut at their
  smallest term.

Every evaluation returns an error estimate built from the rounding level of
the summed terms plus the size of the first omitted term.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import rgamma

from errors import PrecisionError, RangeError, ResolutionError
from logging_config import get_logger

logger = get_logger(__name__)

# Supported input range
PCF_ORDER_LIMIT = 50.0
PCF_ARG_LIMIT = 40.0

# Series below this |z|, large-argument expansion above it
SERIES_CROSSOVER = 8.0
SERIES_FALLBACK_LIMIT = 30.0
MAX_SERIES_TERMS = 4000
MAX_ASYMPTOTIC_TERMS = 200

# Absolute error below which a value is accepted even if its relative
# precision is gone (e.g. at a zero of D_nu).
PCF_ABS_TOL = 1e-10

# Root refinement
DEFAULT_BRACKET_RESOLUTION = 0.05
# Roots are refined in nu = alpha - 1/2; far right nu drops below 1e-15
# and only the relative tolerance may stop the search.
ROOT_NU_XTOL = 1e-300
ROOT_RESIDUAL_TOL = 1e-10

_EPS = np.finfo(float).eps
_SQRT_PI = np.sqrt(np.pi)
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class PcfEvaluation:
    """A single value of D_nu(z).

    Attributes:
        order: The order nu.
        argument: The argument z.
        value: D_nu(z).
        estimated_abs_error: Error bound estimate, always finite and >= 0.
        method: "series" or "asymptotic".
    """
    order: float
    argument: float
    value: float
    estimated_abs_error: float
    method: str


@dataclass(frozen=True)
class QuantizationRootSet:
    """Roots alpha of D_{alpha - 1/2}(-sqrt(2) kappa) in (1/2, alpha_max].

    Attributes:
        kappa: Scaled momentum.
        roots: Roots in ascending order.
        bracket_resolution: Spacing of the alpha grid used for bracketing.
        residuals: |D| at each root divided by the larger |D| at the ends of
            its grid bracket.
        alpha_max: Upper end of the searched interval.
        offsets: alpha - 1/2 for each root, resolved below the spacing of
            floats near 1/2.
    """
    kappa: float
    roots: Tuple[float, ...]
    bracket_resolution: float
    residuals: Tuple[float, ...]
    alpha_max: float
    offsets: Tuple[float, ...] = ()

    @property
    def residual_tolerance(self) -> float:
        return ROOT_RESIDUAL_TOL


def _series_values(nu: np.ndarray, z: float) -> Tuple[np.ndarray, np.ndarray]:
    """Power series of D_nu(z) for an array of orders at one argument."""
    c0 = 2.0 ** (nu / 2.0) * _SQRT_PI * rgamma((1.0 - nu) / 2.0)
    c1 = -(2.0 ** ((nu + 1.0) / 2.0)) * _SQRT_PI * rgamma(-nu / 2.0)
    z2 = z * z
    even = c0.astype(float)
    odd = c1 * z
    total = even + odd
    abs_total = np.abs(even) + np.abs(odd)
    nu_max = float(np.max(nu)) if nu.size else 0.0
    k = 0
    n_terms = 1
    while True:
        # c_{k+2} = (k - nu) c_k / ((k+1)(k+2)), applied to both parities
        even = even * (k - nu) * z2 / ((k + 1) * (k + 2))
        odd = odd * (k + 1 - nu) * z2 / ((k + 2) * (k + 3))
        k += 2
        n_terms += 1
        step = np.abs(even) + np.abs(odd)
        total = total + even + odd
        abs_total = abs_total + step
        if k > nu_max and k > z2 and np.all(step <= _EPS * abs_total):
            break
        if n_terms > MAX_SERIES_TERMS:
            raise PrecisionError(
                f"Series for D_nu({z}) did not converge in {MAX_SERIES_TERMS} terms")
    envelope = np.exp(-z2 / 4.0)
    values = envelope * total
    errors = envelope * (4.0 * _EPS * abs_total * np.sqrt(n_terms) + step) + 2.0 * _EPS * np.abs(values)
    return values, errors


def _asymptotic_sum(ratio_num, nu: np.ndarray, x2: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sums sum_s t_s with t_{s+1} = t_s * ratio_num(s) / ((s+1) 2 x^2).

    Stops each entry at its smallest term (optimal truncation). Growth in the
    first |nu|/2 + 1 terms is the polynomial part of the expansion and does
    not stop the sum.

    Returns:
        (sum, abs_sum, first_omitted_term) per entry.
    """
    term = np.ones(nu.shape, dtype=float)
    total = term.copy()
    abs_total = np.abs(term)
    omitted = np.zeros_like(term)
    active = np.ones(term.shape, dtype=bool)
    polynomial_part = np.abs(nu) / 2.0 + 1.0
    for s in range(MAX_ASYMPTOTIC_TERMS):
        nxt = term * ratio_num(s) / ((s + 1) * 2.0 * x2)
        growing = (np.abs(nxt) >= np.abs(term)) & (s > polynomial_part)
        stop = active & (growing | (np.abs(nxt) <= _EPS * abs_total))
        omitted = np.where(stop, np.abs(nxt), omitted)
        active = active & ~stop
        if not np.any(active):
            break
        total = np.where(active, total + nxt, total)
        abs_total = np.where(active, abs_total + np.abs(nxt), abs_total)
        term = np.where(active, nxt, term)
    omitted = np.where(active, np.abs(term), omitted)
    return total, abs_total, omitted


def _asymptotic_values(nu: np.ndarray, z: float) -> Tuple[np.ndarray, np.ndarray]:
    """Large-|z| expansion of D_nu(z) for an array of orders."""
    x = abs(z)
    x2 = x * x
    decaying, dec_abs, dec_omit = _asymptotic_sum(
        lambda s: -(2 * s - nu) * (2 * s + 1 - nu), nu, x2)
    small = x ** nu * np.exp(-x2 / 4.0)
    if z > 0:
        values = small * decaying
        errors = small * (dec_omit + 4.0 * _EPS * dec_abs) + 2.0 * _EPS * np.abs(values)
        return values, errors
    growing, grow_abs, grow_omit = _asymptotic_sum(
        lambda s: (nu + 1 + 2 * s) * (nu + 2 + 2 * s), nu, x2)
    first = np.cos(np.pi * nu) * small
    second = _SQRT_2PI * rgamma(-nu) * x ** (-nu - 1.0) * np.exp(x2 / 4.0)
    values = first * decaying + second * growing
    errors = (np.abs(first) * (dec_omit + 4.0 * _EPS * dec_abs)
              + np.abs(second) * (grow_omit + 4.0 * _EPS * grow_abs)
              + 2.0 * _EPS * np.abs(values))
    return values, errors


def _check_range(nu: np.ndarray, z: float) -> None:
    if not np.isfinite(z) or not np.all(np.isfinite(nu)):
        raise RangeError("Order and argument of D_nu(z) must be finite")
    if abs(z) > PCF_ARG_LIMIT:
        raise RangeError(f"|z| = {abs(z)} exceeds the supported limit {PCF_ARG_LIMIT}")
    if nu.size and float(np.max(np.abs(nu))) > PCF_ORDER_LIMIT:
        raise RangeError(f"|nu| exceeds the supported limit {PCF_ORDER_LIMIT}")


def _evaluate(nu: np.ndarray, z: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values, errors and a mask of entries that were summed as a series."""
    _check_range(nu, z)
    if abs(z) <= SERIES_CROSSOVER:
        values, errors = _series_values(nu, z)
        return values, errors, np.ones(nu.shape, dtype=bool)
    used_series = np.zeros(nu.shape, dtype=bool)
    values, errors = _asymptotic_values(nu, z)
    # large orders are outside the expansion's regime; the series still fits
    # in double precision up to SERIES_FALLBACK_LIMIT
    poor = errors > np.maximum(PCF_ABS_TOL, 1e-12 * np.abs(values))
    if np.any(poor) and abs(z) <= SERIES_FALLBACK_LIMIT:
        s_values, s_errors = _series_values(nu[poor], z)
        better = s_errors < errors[poor]
        idx = np.flatnonzero(poor)[better]
        values[idx] = s_values[better]
        errors[idx] = s_errors[better]
        used_series[idx] = True
    return values, errors, used_series


def pcf_values(nu, z: float) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluates D_nu(z) for many orders at one argument.

    No precision check is made here; callers that need signs near a zero
    (root finding) use this entry point.

    Args:
        nu: Orders, scalar or array.
        z: Argument.

    Returns:
        (values, estimated_abs_errors) as arrays shaped like ``nu``.
    """
    values, errors, _ = _evaluate(np.atleast_1d(np.asarray(nu, dtype=float)), float(z))
    return values, errors


def pcf_D(nu: float, z: float) -> PcfEvaluation:
    """Evaluates the parabolic cylinder function D_nu(z).

    Args:
        nu: Order, |nu| <= 50.
        z: Argument, |z| <= 40.

    Returns:
        The value with its estimated absolute error.

    Raises:
        RangeError: If an input is outside the supported range.
        PrecisionError: If cancellation left no significant digit and the
            error estimate exceeds PCF_ABS_TOL.
    """
    values, errors, used_series = _evaluate(np.atleast_1d(np.asarray(nu, dtype=float)), float(z))
    value, error = float(values[0]), float(errors[0])
    if not np.isfinite(value) or not np.isfinite(error):
        raise PrecisionError(f"D_{nu}({z}) overflowed")
    if error > abs(value) and error > PCF_ABS_TOL:
        raise PrecisionError(
            f"D_{nu}({z}) lost all significant digits (value {value:.3e}, error {error:.3e})")
    method = "series" if used_series[0] else "asymptotic"
    return PcfEvaluation(order=float(nu), argument=float(z), value=value,
                         estimated_abs_error=error, method=method)


def _boundary_value(nu: float, z: float) -> float:
    return float(pcf_values(nu, z)[0][0])


def _refine_offset(a: float, b: float, z: float) -> float:
    """Root nu of D_nu(z) in [a, b]."""
    return float(brentq(_boundary_value, a, b, args=(z,), xtol=ROOT_NU_XTOL, rtol=4 * _EPS, maxiter=200))


def _alpha_from_offset(nu: float) -> float:
    """1/2 + nu, rounded up to the next float when the sum would collapse to 1/2."""
    return max(0.5 + nu, float(np.nextafter(0.5, 1.0))) if nu > 0 else 0.5 + nu


def quantization_roots(kappa: float, alpha_max: float,
                       bracket_resolution: float = DEFAULT_BRACKET_RESOLUTION) -> QuantizationRootSet:
    """Finds all eigenvalues alpha_n(kappa) up to alpha_max from D_{alpha-1/2}.

    The alpha grid starts at 1/2 itself: D_0 = exp(-z^2/4) never vanishes, so
    a sign change in the first cell brackets a root just above 1/2.

    Args:
        kappa: Scaled momentum.
        alpha_max: Upper end of the search, > 1/2.
        bracket_resolution: Spacing of the bracketing grid.

    Returns:
        The ordered roots with their normalized residuals.

    Raises:
        RangeError: For alpha_max <= 1/2, a non-positive resolution or an
            argument outside the supported range.
    """
    if alpha_max <= 0.5:
        raise RangeError(f"alpha_max must exceed 1/2, got {alpha_max}")
    if bracket_resolution <= 0:
        raise RangeError("bracket_resolution must be positive")
    z = -np.sqrt(2.0) * kappa
    count = int(np.ceil((alpha_max - 0.5) / bracket_resolution))
    nus = bracket_resolution * np.arange(count + 1)
    nus[-1] = min(nus[-1], alpha_max - 0.5)
    values, _ = pcf_values(nus, z)

    offsets: List[float] = []
    residuals: List[float] = []
    for i in range(count):
        fa, fb = float(values[i]), float(values[i + 1])
        if fa == 0.0 and i > 0:
            continue
        if np.sign(fa) == np.sign(fb) and fb != 0.0:
            continue
        if fb == 0.0:
            nu = float(nus[i + 1])
        else:
            nu = _refine_offset(float(nus[i]), float(nus[i + 1]), z)
        scale = max(abs(fa), abs(fb))
        residuals.append(abs(_boundary_value(nu, z)) / scale if scale > 0 else 0.0)
        offsets.append(nu)
    logger.debug("kappa=%.4f: %d roots below %.3f", kappa, len(offsets), alpha_max)
    return QuantizationRootSet(kappa=float(kappa), roots=tuple(_alpha_from_offset(nu) for nu in offsets),
                               bracket_resolution=float(bracket_resolution),
                               residuals=tuple(residuals), alpha_max=float(alpha_max),
                               offsets=tuple(offsets))


def check_root_count(root_set: QuantizationRootSet, expected: int) -> None:
    """Raises ResolutionError when fewer roots than expected were bracketed.

    Two roots in one bracket cancel their sign changes; the finite-difference
    solver supplies the expected count.
    """
    if len(root_set.roots) != expected:
        finer = root_set.bracket_resolution / 4.0
        raise ResolutionError(
            f"Found {len(root_set.roots)} roots at kappa={root_set.kappa}, expected {expected}; "
            f"retry with bracket_resolution={finer:g}")
