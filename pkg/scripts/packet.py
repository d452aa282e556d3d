"""
Band-limited wave packets of the free half-plane Hamiltonian.

A packet of band n is psi(x, kappa) = f(kappa) phi_n(x, kappa) and lives
entirely in the band representation: the envelope f on a uniform kappa
grid plus the band function alpha_n and its slope on the same grid. Free
evolution multiplies f by exp(-i alpha_n t), Y = i d/dkappa acts on f
alone (the eigenfunctions are real, so the band connection vanishes), and
the commutator i[Y, H0] = x - p_y has the expectation -int alpha_n' |f|^2.
"""

import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from band import DispersionBranch, branch_by_band, fiber_grid_for, fiber_modes
from errors import AccuracyWarning, CoverageError, DomainError, RangeError
from logging_config import get_logger
from mourre import SpectralWindow, nu_window, preimage

logger = get_logger(__name__)

DEFAULT_KAPPA_SPACING = 0.002
GAUSSIAN_SPAN = 10.0
GAUSSIAN_COVERAGE = 4.0
CELLS_PER_WIDTH = 10
CELLS_PER_WINDOW = 20
WINDOW_PAD_CELLS = 2
SMOOTHNESS_TOL = 1e-8
DEFAULT_DRIFT_TOL = 1e-3
DEFAULT_DRIFT_TIMES = np.linspace(0.0, 5.0, 21)
MASS_NODES = 64
EDGE_TARGET_FACTOR = 0.5
BULK_TARGET_RATE = 0.4


@dataclass(frozen=True)
class WavePacket:
    """Envelope f of a band-n packet at time t.

    Attributes:
        band: Band index n.
        kappa: Uniform kappa grid.
        envelope: Complex f on the grid, normalized so sum |f|^2 dkappa = 1.
        t: Time the envelope refers to.
        alpha: alpha_n on the grid.
        slope: alpha_n' on the grid, the derivative of the interpolant behind
            ``alpha``.
        shape: "gaussian", "window" or "custom".
    """
    band: int
    kappa: np.ndarray = field(repr=False)
    envelope: np.ndarray = field(repr=False)
    t: float
    alpha: np.ndarray = field(repr=False)
    slope: np.ndarray = field(repr=False)
    shape: str = "custom"

    @property
    def spacing(self) -> float:
        return float(self.kappa[1] - self.kappa[0])

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.envelope) ** 2

    @property
    def norm(self) -> float:
        return float(np.sum(self.density) * self.spacing)

    @property
    def mean_kappa(self) -> float:
        return float(np.sum(self.kappa * self.density) * self.spacing)

    @property
    def support(self) -> Tuple[float, float]:
        """kappa-range where |f| is above 1e-12 of its maximum."""
        mask = np.abs(self.envelope) > 1e-12 * np.max(np.abs(self.envelope))
        return float(self.kappa[mask][0]), float(self.kappa[mask][-1])


@dataclass(frozen=True)
class PacketSuperposition:
    """Packets of different bands with disjoint kappa supports.

    Attributes:
        components: One packet per band.
        weights: Real amplitudes with sum of squares 1.
    """
    components: Tuple[WavePacket, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        spans = sorted(p.support for p in self.components)
        for (_, right), (left, _) in zip(spans, spans[1:]):
            if left <= right:
                raise DomainError("Superposed packets must have disjoint kappa supports")

    @property
    def t(self) -> float:
        return self.components[0].t

    @property
    def norm(self) -> float:
        return float(sum(w ** 2 * p.norm for w, p in zip(self.weights, self.components)))


AnyPacket = Union[WavePacket, PacketSuperposition]


@dataclass
class DriftRecord:
    """Time series of <Y> for a window packet and the sandwich verdict."""
    times: np.ndarray
    y_expectation: np.ndarray
    slope: float
    window: SpectralWindow
    nu_minus: float
    nu_plus: float
    tolerance: float
    velocity: float
    passed: bool

    def to_dict(self) -> dict:
        return {"slope": self.slope, "nu_minus": self.nu_minus, "nu_plus": self.nu_plus,
                "velocity": self.velocity, "tolerance": self.tolerance, "pass": self.passed}


@dataclass(frozen=True)
class EdgeBulkContrast:
    """Speed bounds of edge (kappa <= sigma_e) and bulk (kappa >= sigma_e B^eps) states.

    ``passed`` compares the bulk bound with the fitted decay envelope. The
    fixed targets edge >= EDGE_TARGET_FACTOR sqrt(B) and
    bulk <= sqrt(B) exp(-BULK_TARGET_RATE sigma_e^2 sqrt(B)) are checked
    separately and reported in ``edge_meets_target`` and
    ``bulk_meets_target``.
    """
    n: int
    sigma_e: float
    B: float
    eps: float
    bulk_threshold: float
    edge_bound: float
    bulk_bound: float
    bulk_envelope: float
    passed: bool
    edge_target: float = float("nan")
    bulk_target: float = float("nan")
    edge_meets_target: bool = False
    bulk_meets_target: bool = False


def band_interpolant(branch: DispersionBranch) -> CubicHermiteSpline:
    """alpha_n with slopes alpha'_fh at the samples."""
    if branch.kappa.size < 2:
        raise CoverageError(f"Band {branch.band} has a single sample", [f"band {branch.band}"])
    return CubicHermiteSpline(branch.kappa, branch.alpha, branch.alpha_prime_fh)


def _check_inside(branch: DispersionBranch, lo: float, hi: float) -> None:
    k_lo, k_hi = branch.kappa_range
    missing = []
    if lo < k_lo:
        missing.append(f"band {branch.band}: [{lo}, {k_lo}]")
    if hi > k_hi:
        missing.append(f"band {branch.band}: [{k_hi}, {hi}]")
    if missing:
        raise CoverageError("Packet support leaves the branch samples: " + "; ".join(missing), missing)


def _normalized(envelope: np.ndarray, spacing: float) -> np.ndarray:
    return envelope / np.sqrt(np.sum(np.abs(envelope) ** 2) * spacing)


def _packet(branch: DispersionBranch, kappa: np.ndarray, envelope: np.ndarray, shape: str) -> WavePacket:
    spline = band_interpolant(branch)
    spacing = float(kappa[1] - kappa[0])
    return WavePacket(band=branch.band, kappa=kappa, envelope=_normalized(envelope.astype(complex), spacing),
                      t=0.0, alpha=spline(kappa), slope=spline(kappa, 1), shape=shape)


def _window_envelope(kappa: np.ndarray, left: float, right: float, spacing: float) -> np.ndarray:
    """Indicator of [left, right] with a one-cell raised-cosine rolloff on each side."""
    envelope = np.zeros_like(kappa)
    envelope[(kappa >= left) & (kappa <= right)] = 1.0
    for edge, outside in ((left, kappa < left), (right, kappa > right)):
        distance = np.abs(kappa - edge)
        ramp = outside & (distance < spacing)
        envelope[ramp] = 0.5 * (1.0 + np.cos(np.pi * distance[ramp] / spacing))
    return envelope


def make_packet(n: int, center: float, width: float, shape: str, branches: Sequence[DispersionBranch],
                window: Optional[Tuple[float, float]] = None,
                spacing: float = DEFAULT_KAPPA_SPACING) -> WavePacket:
    """Builds a normalized band-n packet at t = 0.

    Args:
        n: Band index.
        center: kappa_0 of a Gaussian; ignored for windows.
        width: Standard deviation of |f|^2 for a Gaussian; ignored for windows.
        shape: "gaussian", or "window" for the indicator of alpha_n^{-1}(window).
        branches: Branches containing band n.
        window: Spectral interval (a, b) for shape "window".
        spacing: Upper bound on the kappa spacing.

    Raises:
        CoverageError: If the packet leaves the branch samples.
        DomainError: For an unknown shape or missing window.
    """
    branch = branch_by_band(branches, n)
    if shape == "gaussian":
        if width <= 0:
            raise DomainError(f"Gaussian width must be positive, got {width}")
        _check_inside(branch, center - GAUSSIAN_COVERAGE * width, center + GAUSSIAN_COVERAGE * width)
        k_lo, k_hi = branch.kappa_range
        lo = max(center - GAUSSIAN_SPAN * width, k_lo)
        hi = min(center + GAUSSIAN_SPAN * width, k_hi)
        step = min(spacing, width / CELLS_PER_WIDTH)
        kappa = np.linspace(lo, hi, int(np.ceil((hi - lo) / step)) + 1)
        envelope = np.exp(-((kappa - center) ** 2) / (4 * width ** 2))
        return _packet(branch, kappa, envelope, shape)
    if shape == "window":
        if window is None:
            raise DomainError("A window packet needs a spectral interval")
        left, right = preimage(n, window, branch)
        step = min(spacing, max(right - left, 1e-9) / CELLS_PER_WINDOW)
        pad = WINDOW_PAD_CELLS * step
        _check_inside(branch, left - pad, right + pad)
        count = int(np.ceil((right - left + 2 * pad) / step)) + 1
        kappa = left - pad + step * np.arange(count)
        return _packet(branch, kappa, _window_envelope(kappa, left, right, step), shape)
    raise DomainError(f"Unknown packet shape: {shape}")


def window_packets(window: Tuple[float, float], branches: Sequence[DispersionBranch],
                   spacing: float = DEFAULT_KAPPA_SPACING) -> PacketSuperposition:
    """Window packets of every band whose preimage of ``window`` is not empty.

    The amplitudes make the superposition a flat spectral density over the
    union of the preimages.
    """
    spectral = nu_window(window, branches)
    components = [make_packet(m, 0.0, 0.0, "window", branches, window, spacing) for m in spectral.branches]
    lengths = np.array([right - left for left, right in spectral.preimages])
    weights = np.sqrt(lengths / lengths.sum()) if lengths.sum() > 0 else np.full(lengths.size, 1 / np.sqrt(lengths.size))
    return PacketSuperposition(tuple(components), tuple(float(w) for w in weights))


def evolve_free(p: AnyPacket, t: float) -> AnyPacket:
    """Multiplies the envelope by exp(-i alpha_n t)."""
    if isinstance(p, PacketSuperposition):
        return replace(p, components=tuple(evolve_free(c, t) for c in p.components))
    return replace(p, envelope=p.envelope * np.exp(-1j * p.alpha * t), t=p.t + t)


def _is_smooth(p: WavePacket) -> bool:
    amplitude = np.abs(p.envelope)
    if max(amplitude[0], amplitude[-1]) > SMOOTHNESS_TOL * amplitude.max():
        return False
    spectrum = np.abs(np.fft.rfft(amplitude)) ** 2
    return spectrum[spectrum.size // 2:].sum() <= SMOOTHNESS_TOL * spectrum.sum()


def _y_spectral(p: WavePacket) -> float:
    frequencies = 2 * np.pi * np.fft.fftfreq(p.kappa.size, p.spacing)
    derivative = np.fft.ifft(1j * frequencies * np.fft.fft(p.envelope))
    return float(np.real(np.sum(np.conj(p.envelope) * 1j * derivative)) * p.spacing)


def _y_phase(p: WavePacket) -> float:
    f = p.envelope
    steps = np.angle(f[1:] * np.conj(f[:-1]))
    weights = 0.5 * (np.abs(f[1:]) ** 2 + np.abs(f[:-1]) ** 2)
    return float(-np.sum(weights * steps))


def y_expectation(p: AnyPacket) -> float:
    """<Y> = Re int conj(f) i f' dkappa.

    Window envelopes use neighbour phase differences; other shapes use the
    FFT derivative and warn with AccuracyWarning when the envelope is not
    smooth on the grid.
    """
    if isinstance(p, PacketSuperposition):
        return float(sum(w ** 2 * y_expectation(c) for w, c in zip(p.weights, p.components)))
    if p.shape == "window":
        return _y_phase(p)
    if not _is_smooth(p):
        warnings.warn(f"Envelope of band {p.band} is not smooth on its grid; <Y> is inaccurate",
                      AccuracyWarning, stacklevel=2)
    return _y_spectral(p)


def velocity_expectation(p: AnyPacket) -> float:
    """<x - p_y> = -int alpha_n' |f|^2 dkappa."""
    if isinstance(p, PacketSuperposition):
        return float(sum(w ** 2 * velocity_expectation(c) for w, c in zip(p.weights, p.components)))
    return float(-np.sum(p.slope * p.density) * p.spacing)


def drift_experiment(p: AnyPacket, window: SpectralWindow, times: Optional[Sequence[float]] = None,
                     tol: float = DEFAULT_DRIFT_TOL) -> DriftRecord:
    """Fits the drift of <Y> and checks -nu_+ (1+tol) <= slope <= -nu_- (1-tol).

    A violated sandwich is reported through ``passed``, not raised.
    """
    times = np.asarray(DEFAULT_DRIFT_TIMES if times is None else times, dtype=float)
    series = np.array([y_expectation(evolve_free(p, t)) for t in times])
    slope = float(np.polyfit(times, series, 1)[0])
    passed = -window.nu_plus * (1 + tol) <= slope <= -window.nu_minus * (1 - tol)
    if not passed:
        logger.warning("Drift slope %.8f outside [%.8f, %.8f]", slope, -window.nu_plus, -window.nu_minus)
    return DriftRecord(times=times, y_expectation=series, slope=slope, window=window,
                       nu_minus=window.nu_minus, nu_plus=window.nu_plus, tolerance=tol,
                       velocity=velocity_expectation(p), passed=bool(passed))


def edge_bulk_contrast(n: int, sigma_e: float, B: float, eps: float,
                       branches: Sequence[DispersionBranch]) -> EdgeBulkContrast:
    """Edge lower bound sqrt(B) inf_{kappa <= sigma_e} |alpha_n'| and bulk upper
    bound sqrt(B) sup_{kappa >= sigma_e B^eps} |alpha_n'|.

    The bulk bound is compared with sqrt(B) C exp(-(1-eps) kappa_b^2 / 2),
    C being the largest |alpha_n'| exp((1-eps) kappa^2 / 2) over kappa >= 0.
    """
    if B < 1:
        raise DomainError(f"B must be at least 1, got {B}")
    if not 0 < eps < 0.5:
        raise DomainError(f"eps must lie in (0, 1/2), got {eps}")
    if sigma_e <= 0:
        raise DomainError(f"sigma_e must be positive, got {sigma_e}")
    branch = branch_by_band(branches, n)
    threshold = sigma_e * B ** eps
    lo, hi = branch.kappa_range
    if not lo <= sigma_e <= hi or threshold > hi:
        raise CoverageError(f"Band {n} samples [{lo}, {hi}] miss sigma_e={sigma_e} or {threshold}",
                            [f"band {n}: {sigma_e}", f"band {n}: {threshold}"])
    speed = np.abs(branch.alpha_prime_fh)
    root = np.sqrt(B)
    edge = root * float(speed[branch.kappa <= sigma_e].min())
    bulk = root * float(speed[branch.kappa >= threshold].max())
    right = branch.kappa >= 0
    constant = float(np.max(speed[right] * np.exp(0.5 * (1 - eps) * branch.kappa[right] ** 2)))
    envelope = root * constant * np.exp(-0.5 * (1 - eps) * threshold ** 2)
    passed = edge > 0 and bulk <= envelope * (1 + 1e-9)
    edge_target = EDGE_TARGET_FACTOR * root
    bulk_target = root * np.exp(-BULK_TARGET_RATE * sigma_e ** 2 * root)
    if edge < edge_target:
        logger.warning("Edge bound %.6g is below %.6g = %g sqrt(B)", edge, edge_target, EDGE_TARGET_FACTOR)
    return EdgeBulkContrast(n=n, sigma_e=sigma_e, B=B, eps=eps, bulk_threshold=threshold,
                            edge_bound=edge, bulk_bound=bulk, bulk_envelope=float(envelope),
                            passed=bool(passed),
                            edge_target=float(edge_target), bulk_target=float(bulk_target),
                            edge_meets_target=bool(edge >= edge_target),
                            bulk_meets_target=bool(bulk <= bulk_target))


def _tail_masses(p: WavePacket, x_from: float, x_to: float) -> Tuple[np.ndarray, np.ndarray]:
    """Fiber mass of phi_n(., kappa) in [x_from, x_to] on up to MASS_NODES kappa nodes."""
    lo, hi = p.support
    nodes = np.linspace(lo, hi, MASS_NODES) if hi > lo else np.array([lo])
    grid = fiber_grid_for(nodes)
    if not 0 <= x_from <= grid.x_max:
        raise RangeError(f"x={x_from} outside the fiber grid [0, {grid.x_max}]")
    x = grid.x
    inside = (x >= x_from) & (x <= x_to)
    masses = np.array([np.sum(fiber_modes(k, p.band + 1, grid)[1][inside, p.band] ** 2) * grid.spacing
                       for k in nodes])
    return nodes, masses


def _fiber_mass(p: AnyPacket, x_from: float, x_to: float) -> float:
    if isinstance(p, PacketSuperposition):
        return float(sum(w ** 2 * _fiber_mass(c, x_from, x_to) for w, c in zip(p.weights, p.components)))
    nodes, masses = _tail_masses(p, x_from, x_to)
    profile = np.interp(p.kappa, nodes, masses)
    return float(np.sum(p.density * profile) * p.spacing)


def edge_mass_profile(p: AnyPacket, X: float) -> float:
    """Probability of x > X, the packet's mass beyond distance X from the edge.

    Raises:
        RangeError: If X lies outside the fiber grid.
    """
    return _fiber_mass(p, X, np.inf)


def near_edge_mass(p: AnyPacket) -> float:
    """Probability of x in [0, 1], the region within one magnetic length of the edge."""
    return _fiber_mass(p, 0.0, 1.0)


def near_edge_mass_bound(sigma_e: float, gamma: float, B: float, eps: float) -> float:
    """exp(-(1-eps)(sigma_e^2 B^(2 gamma - 1) - 1)) for a bulk space H_{n,b}(sigma_e, gamma)."""
    if sigma_e <= 0 or gamma <= 0 or B <= 0 or not 0 < eps < 1:
        raise DomainError(f"Invalid parameters sigma_e={sigma_e}, gamma={gamma}, B={B}, eps={eps}")
    return float(np.exp(-(1 - eps) * (sigma_e ** 2 * B ** (2 * gamma - 1) - 1)))


def packet_series(p: AnyPacket, times: Sequence[float]) -> List[Tuple[float, float]]:
    """(t, <Y>(t)) rows of the free evolution."""
    return [(float(t), y_expectation(evolve_free(p, t))) for t in times]
