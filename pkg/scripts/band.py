"""
Fiber eigensolver and dispersion branches of the magnetic half-plane.

In scaled units the half-plane Hamiltonian decomposes over the momentum
kappa along the edge into the fiber operators

    H(kappa) = -1/2 d^2/dx^2 + 1/2 (x - kappa)^2,   x > 0,  phi(0) = 0,

whose eigenvalues alpha_n(kappa) are the dispersion branches. This module
solves the fibers by finite differences, samples the branches on kappa
grids, checks the known properties of the branches numerically and maps
them back to physical units.

Discretization
--------------
- 3-point Laplacian on x_j = j h, Dirichlet rows at x = 0 and x = x_max
  eliminated, so the problem is a symmetric tridiagonal eigenproblem solved
  with scipy.linalg.eigh_tridiagonal.
- Each fiber is solved at spacings 2h, h and h/2. The reported eigenvalue
  and boundary derivative are Richardson-extrapolated from (h, h/2); the
  (2h, h) extrapolant only serves as an accuracy check.
- phi'(0) comes from a one-sided fourth-order stencil.
- Gauge: the first lobe of every eigenfunction is positive, which makes the
  eigenfunctions real and continuous in kappa.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import factorial
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal

from errors import AccuracyError, CoverageError, DomainError, RangeError, ResolutionError
from logging_config import get_logger
from specfun import check_root_count, quantization_roots

logger = get_logger(__name__)

# Grid defaults
DEFAULT_SPACING = 0.005
TRUNCATION_MARGIN = 12.0
MIN_NUM_POINTS = 100

# Supported problem range
MAX_BAND_INDEX = 12
KAPPA_MIN, KAPPA_MAX = -10.0, 20.0
MAX_SCAN_SPACING = 0.1

# Accuracy
EXTRAPOLATION_TOL = 1e-6
MONOTONE_FLOOR = 1e-9
GAUGE_THRESHOLD = 1e-3

# Lemma checks
LEMMA_KAPPA_RANGE = (-4.0, 8.0)
LEMMA_MAX_SPACING = 0.05
LEMMA_MAX_BAND = 3
DECAY_FLOOR = 1e-6
ENVELOPE_ENTRY_KAPPA = 5.0
BERRY_STEP = 1e-5


@dataclass(frozen=True)
class FiberGrid:
    """Uniform grid x_j = j * h on [0, x_max] with h = x_max / num_points.

    Attributes:
        x_max: Truncation point; a second Dirichlet wall sits there.
        num_points: Number of intervals.
    """
    x_max: float
    num_points: int

    @property
    def spacing(self) -> float:
        return self.x_max / self.num_points

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.num_points + 1)

    def with_points(self, num_points: int) -> "FiberGrid":
        return FiberGrid(self.x_max, int(num_points))

    def check(self, kappa: float) -> None:
        """Raises ResolutionError if the grid cannot hold the fiber at kappa."""
        if self.num_points < MIN_NUM_POINTS:
            raise ResolutionError(f"FiberGrid needs at least {MIN_NUM_POINTS} points, got {self.num_points}")
        needed = max(kappa, 0.0) + TRUNCATION_MARGIN
        if self.x_max < needed - 1e-12:
            raise ResolutionError(f"x_max={self.x_max} is too small for kappa={kappa}; need >= {needed}")


def fiber_grid_for(kappas: Iterable[float], spacing: float = DEFAULT_SPACING) -> FiberGrid:
    """Smallest default grid valid for every kappa given."""
    x_max = max(max(float(k), 0.0) for k in kappas) + TRUNCATION_MARGIN
    return FiberGrid(x_max, max(MIN_NUM_POINTS, int(np.ceil(x_max / spacing))))


@dataclass(frozen=True)
class EigenSolution:
    """One fiber eigenpair.

    Attributes:
        kappa: Scaled momentum.
        band: Band index n.
        eigenvalue: Extrapolated alpha_n(kappa).
        x: Grid nodes of the stored eigenfunction.
        eigenfunction: L2-normalized real eigenfunction on ``x`` (spacing h).
        boundary_derivative: Extrapolated phi_n'(0, kappa).
        norm_residual: |int phi^2 - 1| on the stored grid.
        eigen_residual: ||H phi - alpha_h phi|| / ||phi|| with the 3-point
            operator and the discrete eigenvalue of the stored grid.
        fh_integral: Extrapolated int (x - kappa) phi^2 dx.
    """
    kappa: float
    band: int
    eigenvalue: float
    x: np.ndarray = field(repr=False)
    eigenfunction: np.ndarray = field(repr=False)
    boundary_derivative: float
    norm_residual: float
    eigen_residual: float
    fh_integral: float


@dataclass(frozen=True)
class DispersionBranch:
    """Samples of one band function kappa -> alpha_n(kappa).

    Attributes:
        band: Band index n.
        kappa: Sample points, uniformly spaced and increasing.
        alpha: alpha_n at the samples.
        alpha_prime_fh: -1/2 phi'(0)^2 at the samples.
        alpha_prime_fd: Finite-difference derivative of ``alpha`` (NaN for a
            single-sample branch).
        phi_prime_0: Boundary derivative phi_n'(0, kappa).
        fh_integral: int (x - kappa) phi_n^2 dx at the samples.
    """
    band: int
    kappa: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_prime_fh: np.ndarray = field(repr=False)
    alpha_prime_fd: np.ndarray = field(repr=False)
    phi_prime_0: np.ndarray = field(repr=False)
    fh_integral: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> float:
        return float(self.kappa[1] - self.kappa[0]) if self.kappa.size > 1 else 0.0

    @property
    def kappa_range(self) -> Tuple[float, float]:
        return float(self.kappa[0]), float(self.kappa[-1])

    def samples(self) -> List[Tuple[float, float, float, float, float]]:
        """(kappa, alpha, alpha'_fh, alpha'_fd, phi'(0)) per sample."""
        return list(zip(self.kappa.tolist(), self.alpha.tolist(), self.alpha_prime_fh.tolist(),
                        self.alpha_prime_fd.tolist(), self.phi_prime_0.tolist()))

    def monotonicity_violations(self, floor: float = MONOTONE_FLOOR) -> int:
        """Number of sample steps where alpha grows by more than ``floor``."""
        return int(np.sum(np.diff(self.alpha) > floor))


@dataclass(frozen=True)
class UnscaledView:
    """A branch in physical units: E_n(k) = B alpha_n(k / sqrt(B)).

    Attributes:
        B: Magnetic field strength.
        band: Band index n.
        k: Physical momentum sqrt(B) * kappa.
        energy: B * alpha.
        speed: Group speed along the edge, sqrt(B) * |alpha'|.
    """
    B: float
    band: int
    k: np.ndarray = field(repr=False)
    energy: np.ndarray = field(repr=False)
    speed: np.ndarray = field(repr=False)


@dataclass
class ClaimRecord:
    """Outcome of one numerical check of a branch property."""
    claim: str
    band: int
    passed: bool
    value: float
    expected: float
    detail: str = ""


@dataclass
class LemmaReport:
    """Pass/fail records per sub-claim plus informational figures."""
    records: List[ClaimRecord]
    informational: Dict[str, Dict[int, float]]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failures(self) -> List[ClaimRecord]:
        return [r for r in self.records if not r.passed]


@dataclass(frozen=True)
class LemmaTolerances:
    value: float = 1e-8
    derivative: float = 1e-6
    fd_abs: float = 1e-5
    fd_rel: float = 1e-3
    decay_ratio_min: float = 0.8
    envelope_epsilon: float = 0.2
    envelope_slack: float = 1e-6


def fiber_operator(kappa: float, grid: FiberGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Diagonals of the discretized fiber operator on the interior nodes.

    Args:
        kappa: Scaled momentum.
        grid: Fiber grid.

    Returns:
        (diag, off) of the symmetric tridiagonal matrix for x_1 .. x_{N-1}.
    """
    h = grid.spacing
    x = grid.x[1:-1]
    diag = 1.0 / h ** 2 + 0.5 * (x - kappa) ** 2
    off = np.full(x.size - 1, -0.5 / h ** 2)
    return diag, off


def _fix_gauge(phi: np.ndarray) -> np.ndarray:
    """Flips the sign so that the first significant lobe is positive."""
    significant = np.abs(phi) > GAUGE_THRESHOLD * np.max(np.abs(phi))
    first = int(np.argmax(significant))
    return -phi if phi[first] < 0 else phi


def _boundary_derivative(phi: np.ndarray, h: float) -> float:
    # one-sided fourth-order stencil at x = 0
    return float((-25 * phi[0] + 48 * phi[1] - 36 * phi[2] + 16 * phi[3] - 3 * phi[4]) / (12 * h))


def fiber_modes(kappa: float, count: int, grid: FiberGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Lowest ``count`` discrete eigenpairs on a single grid.

    Returns:
        (eigenvalues, modes) with modes of shape (num_points + 1, count),
        zero at both walls, normalized so that sum(phi**2) * h = 1 and
        gauge-fixed.
    """
    diag, off = fiber_operator(kappa, grid)
    values, vectors = eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))
    h = grid.spacing
    full = np.zeros((grid.num_points + 1, count))
    full[1:-1, :] = vectors
    for j in range(count):
        phi = full[:, j] / np.sqrt(np.sum(full[:, j] ** 2) * h)
        full[:, j] = _fix_gauge(phi)
    return values, full


def _richardson(value_a: float, h_a: float, value_b: float, h_b: float) -> float:
    """Cancels the O(h^2) term between spacings h_a > h_b."""
    return (h_a ** 2 * value_b - h_b ** 2 * value_a) / (h_a ** 2 - h_b ** 2)


def solve_fiber(kappa: float, n_max: int, grid: Optional[FiberGrid] = None) -> List[EigenSolution]:
    """Solves the fiber at ``kappa`` for bands 0 .. n_max.

    Args:
        kappa: Scaled momentum in [-10, 20].
        n_max: Highest band index, at most 12.
        grid: Fiber grid; defaults to fiber_grid_for([kappa]).

    Returns:
        One EigenSolution per band, in band order.

    Raises:
        RangeError: For n_max or kappa outside the supported range.
        ResolutionError: If the grid violates its invariants for kappa.
        AccuracyError: If the (2h, h) and (h, h/2) extrapolants differ by
            more than EXTRAPOLATION_TOL.
    """
    if not 0 <= n_max <= MAX_BAND_INDEX:
        raise RangeError(f"n_max must lie in [0, {MAX_BAND_INDEX}], got {n_max}")
    if not KAPPA_MIN <= kappa <= KAPPA_MAX:
        raise RangeError(f"kappa must lie in [{KAPPA_MIN}, {KAPPA_MAX}], got {kappa}")
    grid = grid or fiber_grid_for([kappa])
    grid.check(kappa)
    count = n_max + 1
    coarse = grid.with_points(grid.num_points // 2)
    fine = grid.with_points(2 * grid.num_points)
    h_c, h, h_f = coarse.spacing, grid.spacing, fine.spacing

    vals_c, _ = fiber_modes(kappa, count, coarse)
    vals, vecs = fiber_modes(kappa, count, grid)
    vals_f, vecs_f = fiber_modes(kappa, count, fine)

    x, x_f = grid.x, fine.x
    diag, off = fiber_operator(kappa, grid)
    solutions = []
    for n in range(count):
        alpha = _richardson(vals[n], h, vals_f[n], h_f)
        check = _richardson(vals_c[n], h_c, vals[n], h)
        if abs(alpha - check) > EXTRAPOLATION_TOL:
            raise AccuracyError(
                f"Extrapolated alpha_{n}({kappa}) unstable: {alpha:.10f} vs {check:.10f}; "
                f"use num_points >= {2 * grid.num_points}",
                suggested_num_points=2 * grid.num_points)
        phi, phi_f = vecs[:, n], vecs_f[:, n]
        slope = _richardson(_boundary_derivative(phi, h), h, _boundary_derivative(phi_f, h_f), h_f)
        fh = _richardson(np.sum((x - kappa) * phi ** 2) * h, h,
                         np.sum((x_f - kappa) * phi_f ** 2) * h_f, h_f)
        inner = phi[1:-1]
        applied = diag * inner
        applied[:-1] += off * inner[1:]
        applied[1:] += off * inner[:-1]
        residual = np.linalg.norm(applied - vals[n] * inner) / np.linalg.norm(inner)
        solutions.append(EigenSolution(
            kappa=float(kappa), band=n, eigenvalue=float(alpha), x=x, eigenfunction=phi,
            boundary_derivative=float(slope),
            norm_residual=float(abs(np.sum(phi ** 2) * h - 1.0)),
            eigen_residual=float(residual), fh_integral=float(fh)))
    logger.debug("kappa=%.4f alphas=%s", kappa, [round(s.eigenvalue, 8) for s in solutions])
    return solutions


def group_velocity_fh(sol: EigenSolution) -> float:
    """alpha_n'(kappa) = -1/2 phi_n'(0, kappa)^2."""
    return -0.5 * sol.boundary_derivative ** 2


def _fd_derivative(alpha: np.ndarray, spacing: float) -> np.ndarray:
    if alpha.size == 1:
        return np.array([np.nan])
    if alpha.size == 2:
        return np.gradient(alpha, spacing)
    result = np.gradient(alpha, spacing, edge_order=2)
    if alpha.size >= 5:
        result[2:-2] = (alpha[:-4] - 8 * alpha[1:-3] + 8 * alpha[3:-1] - alpha[4:]) / (12 * spacing)
    return result


def group_velocity_fd(branch: DispersionBranch, kappa: float, order: int = 4) -> float:
    """Central finite difference of alpha at the sample closest to ``kappa``.

    Args:
        branch: Sampled branch.
        kappa: A sample point strictly inside the branch range.
        order: 4 for the five-point stencil (falls back to 3 points next to
            the range ends), 2 for the three-point stencil.

    Raises:
        RangeError: If kappa is not an interior sample.
    """
    h = branch.spacing
    lo, hi = branch.kappa_range
    if h == 0.0 or not lo < kappa < hi:
        raise RangeError(f"kappa={kappa} is not strictly inside [{lo}, {hi}]")
    i = int(round((kappa - lo) / h))
    if i <= 0 or i >= branch.kappa.size - 1 or abs(branch.kappa[i] - kappa) > 0.5 * h + 1e-12:
        raise RangeError(f"kappa={kappa} is not an interior sample of the branch")
    a = branch.alpha
    if order == 4 and 2 <= i <= a.size - 3:
        return float((a[i - 2] - 8 * a[i - 1] + 8 * a[i + 1] - a[i + 2]) / (12 * h))
    return float((a[i + 1] - a[i - 1]) / (2 * h))


def _scan_kappas(kappa_min: float, kappa_max: float, spacing: float) -> np.ndarray:
    """Uniform grid from kappa_min to kappa_max with a step of at most ``spacing``."""
    count = int(np.ceil((kappa_max - kappa_min) / spacing - 1e-9))
    if count <= 0:
        return np.array([float(kappa_min)])
    kappas = np.linspace(kappa_min, kappa_max, count + 1)
    step = (kappa_max - kappa_min) / count
    if abs(step - spacing) > 1e-12 * spacing:
        logger.info("kappa step %.6g does not divide [%g, %g]; using %.6g", spacing, kappa_min, kappa_max, step)
    return kappas


def dispersion_scan(n_max: int, kappa_min: float, kappa_max: float, spacing: float,
                    workers: int = 1, grid_spacing: float = DEFAULT_SPACING) -> List[DispersionBranch]:
    """Samples branches 0 .. n_max on a uniform kappa grid.

    All fibers share one FiberGrid sized for kappa_max, so the discretization
    error varies smoothly along the branch.

    Args:
        n_max: Highest band index.
        kappa_min: First sample.
        kappa_max: Last sample (equal to kappa_min for a single column).
        spacing: Largest kappa step, at most 0.1; the step is shrunk so the
            grid ends exactly at kappa_max.
        workers: Thread count of the parallel map over kappa.
        grid_spacing: x spacing h of the fiber grid.

    Returns:
        One DispersionBranch per band.
    """
    if kappa_min > kappa_max:
        raise RangeError(f"kappa_min={kappa_min} exceeds kappa_max={kappa_max}")
    if spacing <= 0 or (kappa_max > kappa_min and spacing > MAX_SCAN_SPACING):
        raise RangeError(f"spacing must lie in (0, {MAX_SCAN_SPACING}], got {spacing}")
    kappas = _scan_kappas(kappa_min, kappa_max, spacing)
    step = float(kappas[-1] - kappas[0]) / (kappas.size - 1) if kappas.size > 1 else spacing
    grid = fiber_grid_for(kappas, grid_spacing)

    def solve(kappa: float) -> List[EigenSolution]:
        return solve_fiber(float(kappa), n_max, grid)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            columns = list(executor.map(solve, kappas))
    else:
        columns = [solve(k) for k in kappas]

    branches = []
    for n in range(n_max + 1):
        alpha = np.array([col[n].eigenvalue for col in columns])
        slope = np.array([col[n].boundary_derivative for col in columns])
        branches.append(DispersionBranch(
            band=n, kappa=kappas.copy(), alpha=alpha,
            alpha_prime_fh=-0.5 * slope ** 2,
            alpha_prime_fd=_fd_derivative(alpha, step),
            phi_prime_0=slope,
            fh_integral=np.array([col[n].fh_integral for col in columns])))
    logger.info("Scanned bands 0..%d on %d kappa samples in [%g, %g]",
                n_max, kappas.size, kappa_min, kappa_max)
    return branches


def branch_by_band(branches: Sequence[DispersionBranch], n: int) -> DispersionBranch:
    for branch in branches:
        if branch.band == n:
            return branch
    raise CoverageError(f"No branch for band {n}", missing=[f"band {n}"])


def convexity_report(branches: Sequence[DispersionBranch]) -> Dict[int, float]:
    """Minimum second difference of alpha_n per band (informational)."""
    report = {}
    for b in branches:
        if b.alpha.size >= 3:
            report[b.band] = float(np.min(np.diff(b.alpha, 2)) / b.spacing ** 2)
    return report


def gap_report(branches: Sequence[DispersionBranch]) -> Dict[int, float]:
    """Minimum of alpha_{n+1} - alpha_n per band n over shared samples (informational)."""
    by_band = {b.band: b for b in branches}
    return {n: float(np.min(by_band[n + 1].alpha - by_band[n].alpha))
            for n in sorted(by_band) if n + 1 in by_band}


def lemma_derivative_at_zero(n: int) -> float:
    """Closed form alpha_n'(0) = -(2n+2)! / (n! (n+1)! sqrt(pi) 4^n)."""
    return -factorial(2 * n + 2) / (factorial(n) * factorial(n + 1) * np.sqrt(np.pi) * 4.0 ** n)


def _coverage_gaps(branch: DispersionBranch, lo: float, hi: float) -> List[str]:
    missing = []
    k_lo, k_hi = branch.kappa_range
    if k_lo > lo + 1e-9:
        missing.append(f"band {branch.band}: [{lo}, {k_lo}]")
    if k_hi < hi - 1e-9:
        missing.append(f"band {branch.band}: [{k_hi}, {hi}]")
    if branch.spacing > LEMMA_MAX_SPACING + 1e-12:
        missing.append(f"band {branch.band}: spacing {branch.spacing} > {LEMMA_MAX_SPACING}")
    return missing


def _sample_index(branch: DispersionBranch, kappa: float) -> int:
    return int(np.argmin(np.abs(branch.kappa - kappa)))


def _check_value_at_zero(branch: DispersionBranch, tol: LemmaTolerances) -> List[ClaimRecord]:
    n = branch.band
    i = _sample_index(branch, 0.0)
    expected_alpha = 2 * n + 1.5
    expected_slope = lemma_derivative_at_zero(n)
    return [
        ClaimRecord("i:value", n, abs(branch.alpha[i] - expected_alpha) <= tol.value,
                    float(branch.alpha[i]), expected_alpha),
        ClaimRecord("i:derivative", n, abs(branch.alpha_prime_fh[i] - expected_slope) <= tol.derivative,
                    float(branch.alpha_prime_fh[i]), expected_slope),
    ]


def _check_negativity(branch: DispersionBranch, tol: LemmaTolerances) -> List[ClaimRecord]:
    n = branch.band
    fh, fd = branch.alpha_prime_fh, branch.alpha_prime_fd
    inner = slice(1, -1)
    allowed = np.maximum(tol.fd_abs, tol.fd_rel * np.abs(fh[inner]))
    gap = np.abs(fh[inner] - fd[inner])
    worst = float(np.max(gap - allowed)) if gap.size else 0.0
    fh_identity = float(np.max(np.abs(branch.fh_integral + fh)))
    return [
        ClaimRecord("ii:negative", n, bool(np.all(fh < 0)), float(np.max(fh)), 0.0,
                    "max of alpha'_fh"),
        ClaimRecord("ii:fh_vs_fd", n, worst <= 0.0, float(np.max(gap)) if gap.size else 0.0,
                    tol.fd_abs, "largest |fh - fd|"),
        ClaimRecord("ii:fh_integral", n, fh_identity <= tol.derivative, fh_identity, 0.0,
                    "max |int (x-kappa) phi^2 + alpha'|"),
        ClaimRecord("ii:monotone", n, branch.monotonicity_violations() == 0,
                    float(branch.monotonicity_violations()), 0.0, "increasing steps"),
    ]


def decay_fit(branch: DispersionBranch, floor: float = DECAY_FLOOR) -> Tuple[float, int]:
    """Slope of log(alpha_n - n - 1/2) against (kappa - sqrt(n))^2.

    Uses samples with kappa >= sqrt(n) + 2 whose excess over the Landau
    level is above ``floor``.

    Returns:
        (slope, number of samples used).
    """
    n = branch.band
    shift = np.sqrt(n)
    excess = branch.alpha - (n + 0.5)
    mask = (branch.kappa >= shift + 2.0) & (excess > floor)
    if np.count_nonzero(mask) < 3:
        return float("nan"), int(np.count_nonzero(mask))
    slope, _ = np.polyfit((branch.kappa[mask] - shift) ** 2, np.log(excess[mask]), 1)
    return float(slope), int(np.count_nonzero(mask))


def _check_lower_bound(branch: DispersionBranch, tol: LemmaTolerances) -> List[ClaimRecord]:
    n = branch.band
    excess = branch.alpha - (n + 0.5)
    slope, used = decay_fit(branch)
    ratio = slope / -0.25 if np.isfinite(slope) else float("nan")
    return [
        ClaimRecord("iii:lower_bound", n, bool(np.all(excess > -MONOTONE_FLOOR)), float(np.min(excess)), 0.0,
                    "min of alpha - n - 1/2, floor applied"),
        ClaimRecord("iii:decay", n, bool(np.isfinite(ratio) and ratio >= tol.decay_ratio_min),
                    ratio, 1.0, f"fitted slope {slope:.4f} from {used} samples"),
    ]


def _check_envelope(branch: DispersionBranch, solutions: Sequence[EigenSolution],
                    tol: LemmaTolerances) -> List[ClaimRecord]:
    n = branch.band
    eps = tol.envelope_epsilon
    sols = sorted((s for s in solutions if s.band == n and s.kappa >= ENVELOPE_ENTRY_KAPPA - 1e-9),
                  key=lambda s: s.kappa)
    records = []
    if sols:
        ratios = []
        for s in sols:
            near = s.x <= 1.0
            weight = np.exp(0.5 * (1 - eps) * (s.x[near] - s.kappa) ** 2)
            ratios.append(float(np.max(s.eigenfunction[near] ** 2 * weight)))
        constant = ratios[0]
        worst = max(ratios)
        records.append(ClaimRecord("iv:density", n, worst <= constant * (1 + tol.envelope_slack) + 1e-300,
                                   worst, constant, "C fitted at the entry kappa"))
    mask = branch.kappa >= ENVELOPE_ENTRY_KAPPA - 1e-9
    if np.any(mask):
        ratio = np.abs(branch.alpha_prime_fh[mask]) * np.exp(0.5 * (1 - eps) * branch.kappa[mask] ** 2)
        constant = float(ratio[0])
        records.append(ClaimRecord("iv:velocity", n, float(np.max(ratio)) <= constant * (1 + tol.envelope_slack),
                                   float(np.max(ratio)), constant, "C fitted at the entry kappa"))
    return records


def _check_left_growth(branch: DispersionBranch) -> List[ClaimRecord]:
    n = branch.band
    mask = branch.kappa < 0
    margin = np.abs(branch.alpha_prime_fh[mask]) - np.abs(branch.kappa[mask])
    violations = int(np.sum(margin <= 0))
    left = float(branch.alpha[_sample_index(branch, LEMMA_KAPPA_RANGE[0])])
    zero = float(branch.alpha[_sample_index(branch, 0.0)])
    return [
        ClaimRecord("v:speed", n, violations == 0, float(violations), 0.0, "samples with |alpha'| <= |kappa|"),
        ClaimRecord("v:growth", n, left > zero, left, zero, "alpha_n(-4) vs alpha_n(0)"),
    ]


def verify_lemma(branches: Sequence[DispersionBranch],
                 solutions: Optional[Sequence[EigenSolution]] = None,
                 tolerances: Optional[LemmaTolerances] = None) -> LemmaReport:
    """Checks the listed properties of alpha_n numerically, band by band.

    Args:
        branches: Branches 0..3 covering kappa in [-4, 8] at spacing <= 0.05.
        solutions: Eigen solutions at kappa >= 5 for the density envelope
            check; solved here at kappa = 5, 5.5, ..., 8 when omitted.
        tolerances: Check tolerances.

    Returns:
        The report with one record per sub-claim and band.

    Raises:
        CoverageError: If the branches miss part of the required range.
    """
    tol = tolerances or LemmaTolerances()
    lo, hi = LEMMA_KAPPA_RANGE
    missing = []
    for n in range(LEMMA_MAX_BAND + 1):
        try:
            missing += _coverage_gaps(branch_by_band(branches, n), lo, hi)
        except CoverageError as e:
            missing += list(e.missing)
    if missing:
        raise CoverageError("Branches do not cover the lemma range: " + "; ".join(missing), missing)
    if solutions is None:
        kappas = np.arange(ENVELOPE_ENTRY_KAPPA, hi + 1e-9, 0.5)
        grid = fiber_grid_for(kappas)
        solutions = [s for k in kappas for s in solve_fiber(float(k), LEMMA_MAX_BAND, grid)]

    records: List[ClaimRecord] = []
    for n in range(LEMMA_MAX_BAND + 1):
        branch = branch_by_band(branches, n)
        records += _check_value_at_zero(branch, tol)
        records += _check_negativity(branch, tol)
        records += _check_lower_bound(branch, tol)
        records += _check_envelope(branch, solutions, tol)
        records += _check_left_growth(branch)
    report = LemmaReport(records=records, informational={
        "min_second_difference": convexity_report(branches),
        "min_band_gap": gap_report(branches),
    })
    logger.info("Lemma checks: %d records, %d failed", len(records), len(report.failures()))
    return report


@dataclass(frozen=True)
class CrossCheckRecord:
    kappa: float
    band: int
    fd_value: float
    root: float

    @property
    def difference(self) -> float:
        return abs(self.fd_value - self.root)


def cross_validate(kappas: Iterable[float], n_max: int,
                   bracket_resolution: float = 0.05) -> List[CrossCheckRecord]:
    """Compares finite-difference eigenvalues with quantization roots.

    Raises:
        ResolutionError: If a bracket swallowed two roots.
    """
    kappas = [float(k) for k in kappas]
    grid = fiber_grid_for(kappas)
    records = []
    for kappa in kappas:
        sols = solve_fiber(kappa, n_max, grid)
        root_set = quantization_roots(kappa, sols[-1].eigenvalue + 0.25, bracket_resolution)
        check_root_count(root_set, n_max + 1)
        records += [CrossCheckRecord(kappa, s.band, s.eigenvalue, r) for s, r in zip(sols, root_set.roots)]
    return records


def unscale(branch: DispersionBranch, B: float) -> UnscaledView:
    """Maps a branch to physical units for field strength B.

    Raises:
        DomainError: If B <= 0.
    """
    if not B > 0:
        raise DomainError(f"B must be positive, got {B}")
    root = np.sqrt(B)
    return UnscaledView(B=float(B), band=branch.band, k=root * branch.kappa,
                        energy=B * branch.alpha, speed=root * np.abs(branch.alpha_prime_fh))


def rescale(view: UnscaledView) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of ``unscale``: (kappa, alpha)."""
    return view.k / np.sqrt(view.B), view.energy / view.B


def berry_term(n: int, kappa: float, grid: Optional[FiberGrid] = None, step: float = BERRY_STEP) -> float:
    """int phi_n d(phi_n)/dkappa dx by a symmetric difference on one grid.

    Vanishes for real gauge-fixed eigenfunctions; the returned value is the
    numerical residue.
    """
    grid = grid or fiber_grid_for([kappa + step])
    _, base = fiber_modes(kappa, n + 1, grid)
    _, plus = fiber_modes(kappa + step, n + 1, grid)
    _, minus = fiber_modes(kappa - step, n + 1, grid)
    return float(np.sum(base[:, n] * (plus[:, n] - minus[:, n])) * grid.spacing / (2 * step))
