"""
Constants of the positive-commutator estimate on Landau band windows.

Everything here is computed from sampled dispersion branches: the band
separation theta_n and its infimum delta_n, the velocity bounds nu_-(D)
and nu_+(D) of a spectral window D, nu(n, lambda), and the budget that
tells how strong a perturbation may be before the commutator bound is lost.

Branches are strictly decreasing, so every preimage alpha_n'^{-1}(D) is an
interval. Its endpoints are found by root-finding on a cubic spline of the
branch samples and infima over kappa are taken over the branch samples
inside the interval, its endpoints and, where the sampling is sparse, extra
spline points.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

from band import KAPPA_MAX, KAPPA_MIN, DispersionBranch, solve_fiber
from errors import CoverageError, DomainError, EmptyWindowError
from logging_config import get_logger

logger = get_logger(__name__)

SIGMA_DIVISOR = 4.0
ADMISSIBLE_DENOMINATOR = 2 ** 9
MIN_PREIMAGE_SAMPLES = 8
AUGMENT_POINTS = 16
ROOT_XTOL = 1e-12
COMPACT_STEP = 0.5
THRESHOLD_BISECTIONS = 60
EDGE_EXPONENT_LIMIT = 0.5


@dataclass(frozen=True)
class LandauBandWindow:
    """The window (n+1/2+lambda, n+3/2-lambda'] of band n.

    The upper end is closed only when lambda' = 0.
    """
    n: int
    lam: float = 0.0
    lam_prime: float = 0.0

    def __post_init__(self):
        if self.n < 0:
            raise DomainError(f"Band index must be non-negative, got {self.n}")
        if self.lam < 0 or self.lam_prime < 0 or self.lam + self.lam_prime >= 1:
            raise DomainError(f"Need lambda, lambda' >= 0 and lambda + lambda' < 1, "
                              f"got {self.lam}, {self.lam_prime}")

    @property
    def lower(self) -> float:
        return self.n + 0.5 + self.lam

    @property
    def upper(self) -> float:
        return self.n + 1.5 - self.lam_prime

    @property
    def upper_closed(self) -> bool:
        return self.lam_prime == 0

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, value: float) -> bool:
        if self.upper_closed:
            return self.lower < value <= self.upper
        return self.lower < value < self.upper


@dataclass(frozen=True)
class SpectralWindow:
    """A spectral interval with the range of |alpha'| over its preimage.

    Attributes:
        lower: Left end of the interval.
        upper: Right end of the interval.
        band: Parent band n with [lower, upper] inside L_n.
        nu_minus: Infimum of |alpha'_n'(kappa)| over the preimage.
        nu_plus: Supremum of |alpha'_n'(kappa)| over the preimage.
        branches: Band indices whose preimage is not empty.
        preimages: Preimage interval per contributing band.
    """
    lower: float
    upper: float
    band: int
    nu_minus: float
    nu_plus: float
    branches: Tuple[int, ...]
    preimages: Tuple[Tuple[float, float], ...]

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class MourreBudget:
    """Constants of the commutator estimate on L_n^{lambda, lambda'}."""
    n: int
    lam: float
    lam_prime: float
    sigma: float
    delta_n: float
    nu: float
    delta_admissible: float
    commutator_lower_bound: float

    def bracket(self, eps: float, amplitude: float) -> float:
        """1 - ((eps+A)^2/sigma^2 + 4 sqrt(n+2) sqrt(eps+A) / (sqrt(sigma) nu))."""
        total = eps + amplitude
        return 1.0 - (total ** 2 / self.sigma ** 2
                      + 4.0 * np.sqrt(self.n + 2) * np.sqrt(total) / (np.sqrt(self.sigma) * self.nu))

    def bound(self, eps: float, amplitude: float) -> float:
        """Lower bound nu * bracket on the filtered commutator."""
        return self.nu * self.bracket(eps, amplitude)

    def admits(self, amplitude: float, eps: float) -> bool:
        return amplitude < self.delta_admissible and eps < self.delta_admissible

    def to_dict(self) -> Dict[str, float]:
        return {
            "n": self.n,
            "lambda": self.lam,
            "lambda_prime": self.lam_prime,
            "sigma": self.sigma,
            "delta_n": self.delta_n,
            "nu": self.nu,
            "delta_admissible": self.delta_admissible,
            "commutator_lower_bound": self.commutator_lower_bound,
        }


@dataclass(frozen=True)
class SubspaceClass:
    """Edge or bulk classification of the states with k below or above sigma_e B^gamma."""
    n: int
    gamma: float
    sigma_e: float
    B: float
    classification: str
    k_threshold: float
    kappa_threshold: float

    @property
    def is_edge(self) -> bool:
        return self.classification == "edge"


@dataclass(frozen=True)
class ThresholdRecord:
    """Smallest window margins admissible for a perturbation bound delta."""
    n: int
    delta: float
    feasible: bool
    lam: Optional[float]
    lam_prime: Optional[float]
    interval: Optional[Tuple[float, float]]
    reason: str = ""

    def to_dict(self) -> Dict:
        return asdict(self)


def _branch_map(branches: Iterable[DispersionBranch]) -> Dict[int, DispersionBranch]:
    return {b.band: b for b in branches}


def _require(branches: Dict[int, DispersionBranch], bands: Iterable[int]) -> None:
    missing = [f"band {n}" for n in bands if n not in branches]
    if missing:
        raise CoverageError(f"Missing branches: {', '.join(missing)}", missing)


def _spline(branch: DispersionBranch, values: Optional[np.ndarray] = None) -> CubicSpline:
    if branch.kappa.size < 2:
        raise CoverageError(f"Band {branch.band} has a single sample", [f"band {branch.band}"])
    return CubicSpline(branch.kappa, branch.alpha if values is None else values)


def _check_covered(branch: DispersionBranch, kappa: float) -> None:
    lo, hi = branch.kappa_range
    if not lo - 1e-12 <= kappa <= hi + 1e-12:
        raise CoverageError(f"kappa={kappa} outside the samples [{lo}, {hi}] of band {branch.band}",
                            [f"band {branch.band}: {kappa}"])


def _invert(spline: CubicSpline, value: float, lo: float, hi: float) -> float:
    return float(brentq(lambda k: spline(k) - value, lo, hi, xtol=ROOT_XTOL))


def theta(n: int, kappa: float, n1: int, n2: int, branches: Sequence[DispersionBranch]) -> float:
    """|alpha_n1 - alpha_n2| at kappa if both values lie in L_n, else 1."""
    if n1 == n2:
        raise DomainError("theta needs two different bands")
    by_band = _branch_map(branches)
    _require(by_band, (n1, n2))
    window = LandauBandWindow(n)
    values = []
    for m in (n1, n2):
        _check_covered(by_band[m], kappa)
        values.append(float(_spline(by_band[m])(kappa)))
    if window.contains(values[0]) and window.contains(values[1]):
        return abs(values[0] - values[1])
    return 1.0


def compact_range(n: int, step: float = COMPACT_STEP) -> Tuple[float, float]:
    """Marches outward from kappa = 0 until theta_n is identically 1 outside.

    At the left end every alpha_n' with n' <= n exceeds n+3/2; at the right
    end every alpha_n' with n' < n is below n+1/2.

    Returns:
        (kappa_lo, kappa_hi); (0, 0) for n = 0, which has no band pairs.

    Raises:
        CoverageError: If the march leaves the supported kappa range.
    """
    if n == 0:
        return 0.0, 0.0
    kappa_lo = 0.0
    while solve_fiber(kappa_lo, n)[0].eigenvalue <= n + 1.5:
        kappa_lo -= step
        if kappa_lo < KAPPA_MIN:
            raise CoverageError(f"No left end for band {n} above kappa={KAPPA_MIN}", [f"left of {KAPPA_MIN}"])
    kappa_hi = 0.0
    while solve_fiber(kappa_hi, n - 1)[-1].eigenvalue >= n + 0.5:
        kappa_hi += step
        if kappa_hi > KAPPA_MAX:
            raise CoverageError(f"No right end for band {n} below kappa={KAPPA_MAX}", [f"right of {KAPPA_MAX}"])
    logger.debug("Compact range of band %d: [%g, %g]", n, kappa_lo, kappa_hi)
    return kappa_lo, kappa_hi


def preimage(band: int, interval: Tuple[float, float], branch: DispersionBranch) -> Tuple[float, float]:
    """Refined kappa-interval alpha_band^{-1}([a, b]) of a decreasing branch.

    Args:
        band: Band index of ``branch``.
        interval: (a, b) with a <= b.
        branch: Sampled branch; its range must contain the whole preimage.

    Returns:
        (kappa_left, kappa_right), with alpha(kappa_left) = b and
        alpha(kappa_right) = a.

    Raises:
        CoverageError: If the preimage reaches past either end of the samples.
    """
    a, b = interval
    spline = _spline(branch)
    lo, hi = branch.kappa_range
    top, bottom = float(spline(lo)), float(spline(hi))
    if top <= b:
        raise CoverageError(f"Preimage of [{a}, {b}] under band {band} extends left of kappa={lo}",
                            [f"band {band}: left of {lo}"])
    if bottom >= a:
        raise CoverageError(f"Preimage of [{a}, {b}] under band {band} extends right of kappa={hi}",
                            [f"band {band}: right of {hi}"])
    return _invert(spline, b, lo, hi), _invert(spline, a, lo, hi)


def _preimage_speeds(branch: DispersionBranch, left: float, right: float) -> np.ndarray:
    inside = (branch.kappa > left) & (branch.kappa < right)
    speed = np.abs(branch.alpha_prime_fh[inside])
    spline = _spline(branch, branch.alpha_prime_fh)
    extra = [left, right]
    if np.count_nonzero(inside) < MIN_PREIMAGE_SAMPLES:
        extra = np.linspace(left, right, AUGMENT_POINTS)
    return np.concatenate([speed, np.abs(spline(np.asarray(extra)))])


def _parent_band(lower: float, upper: float) -> int:
    if upper <= 0.5:
        raise EmptyWindowError(f"No branch takes values in [{lower}, {upper}]")
    n = max(int(np.ceil(upper - 1.5 - 1e-12)), 0)
    if not (n + 0.5 < lower <= upper <= n + 1.5):
        raise DomainError(f"[{lower}, {upper}] does not lie inside a single L_n")
    return n


def nu_window(interval: Tuple[float, float], branches: Sequence[DispersionBranch]) -> SpectralWindow:
    """Range of |alpha'| over all preimages of a window inside some L_n.

    Args:
        interval: (a, b), treated as closed.
        branches: Branches 0..n covering every preimage.

    Raises:
        DomainError: If the interval is not inside one L_n.
        CoverageError: If a branch is missing or too short.
        EmptyWindowError: If no branch takes values in the interval.
    """
    lower, upper = float(interval[0]), float(interval[1])
    n = _parent_band(lower, upper)
    by_band = _branch_map(branches)
    _require(by_band, range(n + 1))
    speeds, contributing, preimages = [], [], []
    for m in range(n + 1):
        left, right = preimage(m, (lower, upper), by_band[m])
        speeds.append(_preimage_speeds(by_band[m], left, right))
        contributing.append(m)
        preimages.append((left, right))
    speed = np.concatenate(speeds)
    return SpectralWindow(lower=lower, upper=upper, band=n, nu_minus=float(speed.min()),
                          nu_plus=float(speed.max()), branches=tuple(contributing),
                          preimages=tuple(preimages))


def nu_n_lambda(n: int, lam: float, branches: Sequence[DispersionBranch]) -> float:
    """nu(n, lambda) = nu_-(L_n^lambda)."""
    if not 0 < lam < 1:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    window = LandauBandWindow(n, lam)
    return nu_window((window.lower, window.upper), branches).nu_minus


def _level_interval(branch: DispersionBranch, n: int) -> Tuple[float, float]:
    """kappa-interval on which alpha_band lies in L_n, clipped to the samples.

    An empty set comes back as an interval with right < left.
    """
    spline = _spline(branch)
    lo, hi = branch.kappa_range
    top, bottom = float(spline(lo)), float(spline(hi))
    if bottom > n + 1.5 or top < n + 0.5:
        return hi, lo
    left = _invert(spline, n + 1.5, lo, hi) if top > n + 1.5 else lo
    right = _invert(spline, n + 0.5, lo, hi) if bottom < n + 0.5 else hi
    return left, right


def _pair_infimum(branch_a: DispersionBranch, branch_b: DispersionBranch, n: int) -> float:
    la, ra = _level_interval(branch_a, n)
    lb, rb = _level_interval(branch_b, n)
    left, right = max(la, lb), min(ra, rb)
    if right < left:
        return 1.0
    sa, sb = _spline(branch_a), _spline(branch_b)

    def gap(k: float) -> float:
        return float(abs(sa(k) - sb(k)))

    points = np.concatenate([[left, right], branch_a.kappa[(branch_a.kappa > left) & (branch_a.kappa < right)]])
    values = np.array([gap(k) for k in points])
    best = float(values.min())
    if right > left:
        k0 = float(points[int(np.argmin(values))])
        span = max(branch_a.spacing, 1e-6)
        refined = minimize_scalar(gap, bounds=(max(left, k0 - span), min(right, k0 + span)),
                                  method="bounded", options={"xatol": ROOT_XTOL})
        best = min(best, float(refined.fun))
    return best


def delta_n(n: int, branches: Sequence[DispersionBranch], scan_spacing: Optional[float] = None) -> float:
    """Infimum of theta_n over kappa and band pairs n' != n'' <= n, capped at 1.

    The sampled range must be wide enough: at its left end every alpha_n'
    (n' <= n) exceeds n+3/2 and at its right end every alpha_n' (n' < n)
    is below n+1/2, so theta_n = 1 outside.

    Args:
        n: Band index.
        branches: Branches 0..n on a common kappa range.
        scan_spacing: Optional finer spacing; the branches are resampled by
            spline before the pair infima are taken.

    Raises:
        CoverageError: Naming the endpoint that fails its exit condition.
    """
    if n == 0:
        return 1.0
    by_band = _branch_map(branches)
    _require(by_band, range(n + 1))
    for m in range(n + 1):
        branch = by_band[m]
        lo, hi = branch.kappa_range
        if branch.alpha[0] <= n + 1.5:
            raise CoverageError(f"alpha_{m}({lo}) <= {n + 1.5}: extend the range left of kappa={lo}",
                                [f"left of {lo}"])
        if m < n and branch.alpha[-1] >= n + 0.5:
            raise CoverageError(f"alpha_{m}({hi}) >= {n + 0.5}: extend the range right of kappa={hi}",
                                [f"right of {hi}"])
    if scan_spacing is not None:
        by_band = {m: _resample(b, scan_spacing) for m, b in by_band.items()}
    result = 1.0
    for n1 in range(n + 1):
        for n2 in range(n1 + 1, n + 1):
            result = min(result, _pair_infimum(by_band[n1], by_band[n2], n))
    logger.debug("delta_%d = %.10f", n, result)
    return min(result, 1.0)


def _resample(branch: DispersionBranch, spacing: float) -> DispersionBranch:
    lo, hi = branch.kappa_range
    kappa = np.linspace(lo, hi, int(round((hi - lo) / spacing)) + 1)
    alpha = _spline(branch)(kappa)
    slope = _spline(branch, branch.alpha_prime_fh)(kappa)
    return DispersionBranch(band=branch.band, kappa=kappa, alpha=alpha, alpha_prime_fh=slope,
                            alpha_prime_fd=np.gradient(alpha, kappa),
                            phi_prime_0=np.sqrt(2 * np.abs(slope)),
                            fh_integral=-slope)


def mourre_budget(n: int, lam: float, lam_prime: float, branches: Sequence[DispersionBranch],
                  delta: Optional[float] = None) -> MourreBudget:
    """Budget of the commutator estimate on L_n^{lambda, lambda'}.

    Args:
        n: Band index.
        lam: lambda > 0.
        lam_prime: lambda' > 0 with lambda + lambda' < 1.
        branches: Branches 0..n; their range must satisfy the delta_n exit
            conditions unless ``delta`` is given.
        delta: Precomputed delta_n.

    Raises:
        DomainError: For parameters outside the domain.
    """
    if lam <= 0 or lam_prime <= 0 or lam + lam_prime >= 1:
        raise DomainError(f"Need lambda, lambda' > 0 and lambda + lambda' < 1, got {lam}, {lam_prime}")
    d_n = delta_n(n, branches) if delta is None else float(delta)
    sigma = min(lam, lam_prime, d_n) / SIGMA_DIVISOR
    nu = nu_n_lambda(n, lam / 2, branches)
    admissible = min(sigma * nu ** 2 / (ADMISSIBLE_DENOMINATOR * (n + 2)), sigma / 4, 0.5)
    return MourreBudget(n=n, lam=float(lam), lam_prime=float(lam_prime), sigma=sigma, delta_n=d_n,
                        nu=nu, delta_admissible=admissible, commutator_lower_bound=nu / 2)


def classify_subspace(n: int, sigma_e: float, gamma: float, B: float) -> SubspaceClass:
    """Edge (gamma <= 1/2) or bulk (gamma > 1/2) space of band n."""
    if sigma_e <= 0 or gamma <= 0 or B <= 0:
        raise DomainError(f"Need sigma_e, gamma, B > 0, got {sigma_e}, {gamma}, {B}")
    kind = "edge" if gamma <= EDGE_EXPONENT_LIMIT else "bulk"
    return SubspaceClass(n=n, gamma=gamma, sigma_e=sigma_e, B=B, classification=kind,
                         k_threshold=sigma_e * B ** gamma,
                         kappa_threshold=sigma_e * B ** (gamma - 0.5))


@dataclass(frozen=True)
class PhysicalWindow:
    """Commutator bounds sqrt(B) nu_pm(D/B) of an energy window D in physical units."""
    lower: float
    upper: float
    B: float
    speed_minus: float
    speed_plus: float
    window: SpectralWindow


def scaled_window(energy_interval: Tuple[float, float], B: float, branches: Sequence[DispersionBranch],
                  delta: Optional[float] = None) -> PhysicalWindow:
    """Velocity bounds of an unscaled window inside ((n+1/2)B, (n+3/2)B].

    Raises:
        DomainError: If B <= 0, or the window is wider than delta_n B.
    """
    if B <= 0:
        raise DomainError(f"B must be positive, got {B}")
    lower, upper = energy_interval
    window = nu_window((lower / B, upper / B), branches)
    d_n = delta_n(window.band, branches) if delta is None else delta
    if upper - lower >= d_n * B:
        raise DomainError(f"Window width {upper - lower} is not below delta_{window.band} B = {d_n * B}")
    root = np.sqrt(B)
    return PhysicalWindow(lower=float(lower), upper=float(upper), B=float(B),
                          speed_minus=root * window.nu_minus, speed_plus=root * window.nu_plus,
                          window=window)


def admissible_thresholds(n: int, delta: float, branches: Sequence[DispersionBranch],
                          delta_value: Optional[float] = None) -> ThresholdRecord:
    """Smallest lambda_n, lambda'_n in (0, 1/2) admissible for perturbations up to delta.

    lambda_n is the smallest margin with
    min(lambda_n, delta_n) nu(n, lambda_n/2)^2 > 2^9 (n+2) delta, found by
    bisection since the left side is non-decreasing; lambda'_n solves the
    same condition with nu(n, 1/4) in closed form.
    """
    if not 0 < delta < 0.5:
        raise DomainError(f"delta must lie in (0, 1/2), got {delta}")
    d_n = delta_n(n, branches) if delta_value is None else float(delta_value)
    target = ADMISSIBLE_DENOMINATOR * (n + 2) * delta

    def margin(lam: float) -> float:
        return min(lam, d_n) * nu_n_lambda(n, lam / 2, branches) ** 2 - target

    upper_lam = 0.5 - 1e-12
    if margin(upper_lam) <= 0:
        return ThresholdRecord(n, delta, False, None, None, None,
                               f"no lambda below 1/2 satisfies the condition for delta={delta}")
    nu_quarter = nu_n_lambda(n, 0.25, branches)
    lam_prime = target / nu_quarter ** 2
    if lam_prime >= min(0.5, d_n):
        return ThresholdRecord(n, delta, False, None, None, None,
                               f"no lambda' below 1/2 satisfies the condition for delta={delta}")
    # nu(n, lambda/2) <= nu(n, 1/4) for lambda <= 1/2, so lambda_n >= lambda'_n
    lo, hi = lam_prime, upper_lam
    for _ in range(THRESHOLD_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if margin(mid) > 0:
            hi = mid
        else:
            lo = mid
    lam_prime = float(np.nextafter(lam_prime, 1.0))
    window = LandauBandWindow(n, hi, lam_prime)
    return ThresholdRecord(n, delta, True, hi, lam_prime, (window.lower, window.upper))


def unscaled_interval(n: int, lam: float, lam_prime: float, B: float) -> Tuple[float, float]:
    """(B(n+1/2+lambda), B(n+3/2-lambda'))."""
    if B <= 0:
        raise DomainError(f"B must be positive, got {B}")
    window = LandauBandWindow(n, lam, lam_prime)
    return B * window.lower, B * window.upper


def budget_table(n_values: Iterable[int], lam: float, lam_prime: float,
                 branches: Sequence[DispersionBranch]) -> List[MourreBudget]:
    return [mourre_budget(n, lam, lam_prime, branches) for n in n_values]
