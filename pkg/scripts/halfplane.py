"""
Time evolution on a truncated half-plane with a weak impurity potential.

The scaled Hamiltonian H = -1/2 d^2/dx^2 + 1/2 (p_y - x)^2 + W(x, y) acts on
the grid x in [0, Xmax] (Dirichlet at both ends) times a periodic y-circle
of length Ly. Along y the state is kept in Fourier modes kappa_m, where
the free part is the fiber operator of band.py, so one time step is

    fiber half step / exp(-i W dt) / fiber half step

with each fiber half step a Crank-Nicolson solve. All modes share one
block-diagonal banded system, solved with scipy.linalg.solve_banded.

The energy filter compresses H to the span of low-lying fiber modes and
applies a Gaussian of H through a Chebyshev expansion, following the
three-term recurrence of polynomial spectral filters.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from numpy.polynomial import chebyshev
from scipy.linalg import solve_banded

from band import DispersionBranch, FiberGrid, branch_by_band, dispersion_scan, fiber_modes, fiber_operator
from errors import ConfigError, DomainError, EmptyFilterError, ResolutionError, StabilityError
from logging_config import get_logger
from mourre import LandauBandWindow, MourreBudget, mourre_budget, nu_window, preimage
from packet import WavePacket, band_interpolant, make_packet

logger = get_logger(__name__)

# Geometry
DEFAULT_X_MAX = 14.0
DEFAULT_NX = 560
MIN_NY = 16
SEAM_CELLS = 5
SEAM_MASS_LIMIT = 0.1

# Stepping
DEFAULT_DT = 0.005
NORM_DRIFT_LIMIT = 1e-6

# Energy filter
FILTER_SPAN = 12.0
FILTER_TAIL_TOL = 1e-6
FILTER_START_DEGREE = 16
FILTER_MAX_DEGREE = 1 << 14
EMPTY_FILTER_NORM = 1e-8

# Transport verdict
COMMUTATOR_TOL = 0.05
EHRENFEST_TOL = 0.05
SCAN_RANGE = (-4.0, 8.0)
SCAN_SPACING = 0.05


@dataclass(frozen=True)
class HalfPlaneGrid:
    """Uniform (x, y) grid: nx intervals on [0, x_max] and ny periodic points on [0, Ly)."""
    nx: int
    ny: int
    x_max: float
    Ly: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 2 or self.x_max <= 0 or self.Ly <= 0:
            raise ConfigError(f"Invalid grid nx={self.nx}, ny={self.ny}, Xmax={self.x_max}, Ly={self.Ly}")

    @property
    def dx(self) -> float:
        return self.x_max / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.nx + 1)

    @property
    def y(self) -> np.ndarray:
        return self.dy * np.arange(self.ny)

    @property
    def kappa(self) -> np.ndarray:
        """Momenta of the y-Fourier modes in numpy FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.ny, self.dy)

    @property
    def fiber_grid(self) -> FiberGrid:
        return FiberGrid(self.x_max, self.nx)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.nx + 1, self.ny


@dataclass(frozen=True)
class ImpurityField:
    """Lattice of bumps with random amplitudes, sampled on a HalfPlaneGrid.

    Attributes:
        amplitude: delta_W; the sampled values never exceed it in modulus.
        fluctuation_exponent: a, the bump radius scales as B^(1/2 - a).
        density_exponent: b, the site spacing scales as B^(1/2 - b).
        site_spacing: Spacing of the sites at B = 1.
        seed: Seed of the amplitude draw.
        B: Field strength the exponents refer to.
        values: W on the grid, shape (nx + 1, ny).
    """
    amplitude: float
    fluctuation_exponent: float
    density_exponent: float
    site_spacing: float
    seed: int
    B: float
    values: np.ndarray = field(repr=False)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @classmethod
    def constant(cls, grid: HalfPlaneGrid, value: float) -> "ImpurityField":
        return cls(abs(value), 0.0, 0.5, 1.0, 0, 1.0, np.full(grid.shape, float(value)))


@dataclass(frozen=True)
class FieldState:
    """Wave function psi on the grid at time t; rows x = 0 and x = Xmax are zero."""
    psi: np.ndarray = field(repr=False)
    t: float
    grid: HalfPlaneGrid
    B: float = 1.0

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.dx * self.grid.dy)


@dataclass
class FilterReport:
    """Outcome of energy_filter; ``state`` is renormalized."""
    state: FieldState
    retained_fraction: float
    energy_mean: float
    energy_var: float
    degree: int
    basis_size: int


@dataclass
class SimulationConfig:
    """Run parameters of a transport experiment; ``amplitude`` None means half of delta_admissible."""
    n: int = 0
    lam: float = 0.2
    lam_prime: float = 0.2
    amplitude: Optional[float] = None
    seed: int = 0
    dt: float = DEFAULT_DT
    T: float = 2.0
    grid_nx: int = DEFAULT_NX
    grid_ny: Optional[int] = None
    Xmax: float = DEFAULT_X_MAX
    Ly: Optional[float] = None
    filter_width: Optional[float] = None
    seeds: int = 1
    site_spacing: float = 1.0
    fluctuation_exponent: float = 0.0
    density_exponent: float = 0.5
    B: float = 1.0
    record_every: int = 10
    allow_unsafe_amplitude: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


CONFIG_KEYS = {"lambda": "lam", "lambda_prime": "lam_prime"}


@dataclass
class TransportReport:
    """Recorded observables of one transport run and its verdict."""
    times: np.ndarray
    y_mean: np.ndarray
    velocity: np.ndarray
    energy_mean: np.ndarray
    energy_var: np.ndarray
    norm: np.ndarray
    seam_mass: np.ndarray
    window: LandauBandWindow
    budget: MourreBudget
    amplitude: float
    seed: int
    retained_fraction: float
    commutator_mean: float
    threshold: float
    ehrenfest_residual: float
    commutator_pass: bool
    monotone_pass: bool
    ehrenfest_pass: bool
    seam_pass: bool

    @property
    def passed(self) -> bool:
        return self.commutator_pass and self.monotone_pass

    @property
    def flagged(self) -> bool:
        return not (self.ehrenfest_pass and self.seam_pass)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.times, "y_mean": self.y_mean, "velocity_mean": self.velocity,
            "energy_mean": self.energy_mean, "energy_var": self.energy_var, "norm": self.norm,
        })

    def verdict(self) -> Dict[str, Any]:
        return {
            "n": self.window.n, "lambda": self.window.lam, "lambda_prime": self.window.lam_prime,
            "amplitude": self.amplitude, "seed": self.seed, "budget": self.budget.to_dict(),
            "retained_fraction": self.retained_fraction, "commutator_mean": self.commutator_mean,
            "threshold": self.threshold, "ehrenfest_residual": self.ehrenfest_residual,
            "commutator_pass": self.commutator_pass, "monotone_pass": self.monotone_pass,
            "ehrenfest_pass": self.ehrenfest_pass, "seam_pass": self.seam_pass,
            "flagged": self.flagged, "pass": self.passed,
        }


@dataclass
class EnsembleReport:
    """Commutator averages of a Monte Carlo ensemble over impurity seeds."""
    reports: List[TransportReport]

    @property
    def commutator_means(self) -> np.ndarray:
        return np.array([r.commutator_mean for r in self.reports])

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def summary(self) -> Dict[str, Any]:
        means = self.commutator_means
        return {
            "seeds": [r.seed for r in self.reports],
            "commutator_means": means.tolist(),
            "min": float(means.min()), "mean": float(means.mean()), "std": float(means.std()),
            "threshold": self.reports[0].threshold,
            "passed": int(sum(r.passed for r in self.reports)),
            "flagged": int(sum(r.flagged for r in self.reports)),
            "pass": self.passed,
        }


def _bump(r: np.ndarray, radius: float) -> np.ndarray:
    """(1 - (r/R)^2)^3 inside r < R, a C^2 bump."""
    s = np.clip(1.0 - (r / radius) ** 2, 0.0, None)
    return s ** 3


def generate_impurity(grid: HalfPlaneGrid, amplitude: float, seed: int, site_spacing: float = 1.0,
                      fluctuation_exponent: float = 0.0, density_exponent: float = 0.5,
                      B: float = 1.0) -> ImpurityField:
    """Samples W = sum_i u_i bump(|r - r_i|) with u_i uniform in [-amplitude, amplitude].

    Sites sit on a square lattice of spacing site_spacing B^(1/2 - b), the
    bump radius is min(spacing/2, site_spacing B^(1/2 - a) / 2), and the
    y-spacing is adjusted so the lattice is periodic in y.

    Raises:
        DomainError: For a negative amplitude or invalid exponents.
        ResolutionError: If the site spacing is below two grid cells.
    """
    if amplitude < 0:
        raise DomainError(f"Impurity amplitude must be non-negative, got {amplitude}")
    if fluctuation_exponent < 0 or density_exponent < 0.5 or B <= 0 or site_spacing <= 0:
        raise DomainError("Need a >= 0, b >= 1/2, B > 0 and a positive site spacing")
    spacing = site_spacing * B ** (0.5 - density_exponent)
    if spacing < 2 * max(grid.dx, grid.dy):
        raise ResolutionError(f"Site spacing {spacing:.4g} is below two grid cells "
                              f"(dx={grid.dx:.4g}, dy={grid.dy:.4g})")
    radius = min(0.5 * spacing, 0.5 * site_spacing * B ** (0.5 - fluctuation_exponent))
    sites_x = np.arange(0.5 * spacing, grid.x_max, spacing)
    count_y = max(1, int(round(grid.Ly / spacing)))
    sites_y = (grid.Ly / count_y) * np.arange(count_y)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-amplitude, amplitude, size=(sites_x.size, sites_y.size))

    x, y = grid.x, grid.y
    values = np.zeros(grid.shape)
    for i, sx in enumerate(sites_x):
        rows = np.nonzero(np.abs(x - sx) < radius)[0]
        dx2 = (x[rows] - sx) ** 2
        for j, sy in enumerate(sites_y):
            dy = np.abs(y - sy)
            dy = np.minimum(dy, grid.Ly - dy)
            cols = np.nonzero(dy < radius)[0]
            r = np.sqrt(dx2[:, None] + dy[cols][None, :] ** 2)
            values[np.ix_(rows, cols)] += weights[i, j] * _bump(r, radius)
    values = np.clip(values, -amplitude, amplitude)
    logger.debug("Impurity field: %d sites, radius %.3g, sup %.3g", weights.size, radius, np.abs(values).max())
    return ImpurityField(amplitude=float(amplitude), fluctuation_exponent=float(fluctuation_exponent),
                         density_exponent=float(density_exponent), site_spacing=float(site_spacing),
                         seed=int(seed), B=float(B), values=values)


def _modes(state: FieldState) -> np.ndarray:
    """y-Fourier coefficients psi_m(x) = sum_y psi e^{-i kappa_m y} dy / sqrt(Ly)."""
    grid = state.grid
    return np.fft.fft(state.psi, axis=1) * grid.dy / np.sqrt(grid.Ly)


def _from_modes(modes: np.ndarray, grid: HalfPlaneGrid) -> np.ndarray:
    return np.fft.ifft(modes * np.sqrt(grid.Ly) / grid.dy, axis=1)


def _fiber_diagonals(grid: HalfPlaneGrid) -> Tuple[np.ndarray, float]:
    """Diagonals of all fiber operators, shape (nx - 1, ny), and the common off-diagonal."""
    fgrid = grid.fiber_grid
    diag = np.stack([fiber_operator(k, fgrid)[0] for k in grid.kappa], axis=1)
    return diag, -0.5 / grid.dx ** 2


class SplitStepper:
    """Strang splitting of H = fibers + W for a fixed grid, field and dt."""

    def __init__(self, grid: HalfPlaneGrid, impurity: Optional[ImpurityField], dt: float):
        self.grid = grid
        self.dt = dt
        self.diag, self.off = _fiber_diagonals(grid)
        a = 0.25j * dt
        inner, modes = self.diag.shape
        ab = np.zeros((3, inner * modes), dtype=complex)
        ab[1] = 1.0 + a * self.diag.T.ravel()
        coupling = np.full(inner * modes, a * self.off)
        block_start = np.arange(inner * modes) % inner == 0
        ab[0, 1:] = np.where(block_start[1:], 0.0, coupling[1:])
        ab[2, :-1] = np.where(block_start[1:], 0.0, coupling[:-1])
        self.ab = ab
        self.half_scale = a
        values = impurity.values if impurity is not None else np.zeros(grid.shape)
        self.phase = np.exp(-1j * values * dt)

    def _fiber_half_step(self, modes: np.ndarray) -> np.ndarray:
        inner = modes[1:-1]
        applied = self.diag * inner
        applied[:-1] += self.off * inner[1:]
        applied[1:] += self.off * inner[:-1]
        rhs = (inner - self.half_scale * applied).T.ravel()
        solved = solve_banded((1, 1), self.ab, rhs, check_finite=False)
        out = np.zeros_like(modes)
        out[1:-1] = solved.reshape(modes.shape[1], -1).T
        return out

    def step(self, psi: np.ndarray) -> np.ndarray:
        scale = np.sqrt(self.grid.Ly) / self.grid.dy
        modes = self._fiber_half_step(np.fft.fft(psi, axis=1) / scale)
        psi = np.fft.ifft(modes * scale, axis=1) * self.phase
        modes = self._fiber_half_step(np.fft.fft(psi, axis=1) / scale)
        psi = np.fft.ifft(modes * scale, axis=1)
        psi[0] = 0.0
        psi[-1] = 0.0
        return psi


def evolve(state: FieldState, impurity: Optional[ImpurityField], dt: float, steps: int,
           stepper: Optional[SplitStepper] = None) -> FieldState:
    """Advances the state by ``steps`` Strang steps of size dt.

    Raises:
        StabilityError: If the norm changes by more than NORM_DRIFT_LIMIT in a step.
    """
    if dt <= 0 or steps < 0:
        raise DomainError(f"Need dt > 0 and steps >= 0, got {dt}, {steps}")
    stepper = stepper or SplitStepper(state.grid, impurity, dt)
    cell = state.grid.dx * state.grid.dy
    psi = state.psi.astype(complex)
    norm = np.sum(np.abs(psi) ** 2) * cell
    if not np.isfinite(norm):
        raise StabilityError(f"State at t={state.t} is not finite; reduce dt to {dt / 2}", suggested_dt=dt / 2)
    for k in range(steps):
        psi = stepper.step(psi)
        new_norm = np.sum(np.abs(psi) ** 2) * cell
        if not np.isfinite(new_norm) or abs(new_norm - norm) > NORM_DRIFT_LIMIT * max(norm, 1e-300):
            raise StabilityError(f"Norm drift {abs(new_norm - norm):.3e} at step {k}; reduce dt to {dt / 2}",
                                 suggested_dt=dt / 2)
        norm = new_norm
    return replace(state, psi=psi, t=state.t + steps * dt)


def apply_hamiltonian(state: FieldState, impurity: Optional[ImpurityField] = None) -> np.ndarray:
    """H psi with the finite-difference fibers and the multiplication by W."""
    grid = state.grid
    diag, off = _fiber_diagonals(grid)
    modes = _modes(state)
    inner = modes[1:-1]
    applied = np.zeros_like(modes)
    applied[1:-1] = diag * inner
    applied[1:-2] += off * inner[1:]
    applied[2:-1] += off * inner[:-1]
    result = _from_modes(applied, grid)
    if impurity is not None:
        result = result + impurity.values * state.psi
    result[0] = 0.0
    result[-1] = 0.0
    return result


def energy_moments(state: FieldState, impurity: Optional[ImpurityField] = None) -> Tuple[float, float]:
    """(<H>, <H^2> - <H>^2) of a normalized state."""
    cell = state.grid.dx * state.grid.dy
    applied = apply_hamiltonian(state, impurity)
    mean = float(np.real(np.sum(np.conj(state.psi) * applied)) * cell)
    square = float(np.sum(np.abs(applied) ** 2) * cell)
    return mean, max(square - mean ** 2, 0.0)


def _y_density(state: FieldState) -> np.ndarray:
    return np.sum(np.abs(state.psi) ** 2, axis=0) * state.grid.dx


def y_angle(state: FieldState) -> float:
    """Angle of the circular mean of the y-density."""
    grid = state.grid
    return float(np.angle(np.sum(_y_density(state) * np.exp(2j * np.pi * grid.y / grid.Ly))))


def y_mean(state: FieldState) -> float:
    """Circular mean of y in [0, Ly)."""
    return float((y_angle(state) * state.grid.Ly / (2 * np.pi)) % state.grid.Ly)


def commutator_expectation(state: FieldState) -> float:
    """<x - p_y> / <psi, psi>; the same with or without W."""
    grid = state.grid
    weight = np.abs(_modes(state)) ** 2
    shift = grid.x[:, None] - grid.kappa[None, :]
    return float(np.sum(shift * weight) / np.sum(weight))


def seam_mass(state: FieldState, cells: int = SEAM_CELLS) -> float:
    """Mass within ``cells`` rows of the y = 0 seam, on both sides."""
    density = _y_density(state)
    return float((density[:cells].sum() + density[-cells:].sum()) * state.grid.dy)


def _sample_envelope(p: WavePacket, kappa: np.ndarray) -> np.ndarray:
    real = np.interp(kappa, p.kappa, p.envelope.real, left=0.0, right=0.0)
    imag = np.interp(kappa, p.kappa, p.envelope.imag, left=0.0, right=0.0)
    return real + 1j * imag


def _embed_values(band: int, values: np.ndarray, grid: HalfPlaneGrid, y0: float) -> FieldState:
    fgrid = grid.fiber_grid
    modes = np.zeros(grid.shape, dtype=complex)
    for m, (k, f) in enumerate(zip(grid.kappa, values)):
        if f != 0:
            modes[:, m] = f * np.exp(-1j * k * y0) * fiber_modes(k, band + 1, fgrid)[1][:, band]
    state = FieldState(psi=_from_modes(modes, grid), t=0.0, grid=grid)
    if state.norm == 0:
        raise ResolutionError("Packet support misses every y-Fourier mode of the grid")
    return replace(state, psi=state.psi / np.sqrt(state.norm))


def embed_packet(p: WavePacket, grid: HalfPlaneGrid, y0: float = 0.0) -> FieldState:
    """Samples a band packet on the grid modes, shifted by y0 along y.

    The x-profiles are the finite-difference eigenvectors of the grid, so
    without W each mode only picks up a phase.
    """
    return _embed_values(p.band, _sample_envelope(p, grid.kappa), grid, y0)


def band_reference(p: WavePacket, grid: HalfPlaneGrid, t: float, y0: float = 0.0) -> FieldState:
    """Embedded packet evolved exactly: each mode times exp(-i alpha_n(kappa_m) t)."""
    alpha = np.interp(grid.kappa, p.kappa, p.alpha)
    state = _embed_values(p.band, _sample_envelope(p, grid.kappa) * np.exp(-1j * alpha * t), grid, y0)
    return replace(state, t=p.t + t)


def _low_energy_basis(grid: HalfPlaneGrid, cutoff: float) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    fgrid = grid.fiber_grid
    count = min(int(np.ceil(cutoff)) + 1, grid.nx - 1)
    basis = []
    for m, k in enumerate(grid.kappa):
        values, vectors = fiber_modes(k, count, fgrid)
        keep = values < cutoff
        if np.any(keep):
            basis.append((m, values[keep], vectors[:, keep]))
    return basis


def _compressed_hamiltonian(grid: HalfPlaneGrid, basis, impurity: Optional[ImpurityField]) -> np.ndarray:
    energies = np.concatenate([values for _, values, _ in basis])
    H = np.diag(energies).astype(complex)
    if impurity is None or not np.any(impurity.values):
        return H
    spectrum = np.fft.fft(impurity.values, axis=1) / grid.ny
    offsets = np.cumsum([0] + [v.size for _, v, _ in basis])
    for a, (m, _, Va) in enumerate(basis):
        for b, (mp, _, Vb) in enumerate(basis):
            coupling = spectrum[:, (m - mp) % grid.ny][:, None] * Vb
            H[offsets[a]:offsets[a + 1], offsets[b]:offsets[b + 1]] += Va.T @ coupling * grid.dx
    return H


def _chebyshev_apply(H: np.ndarray, vector: np.ndarray, lower: float, upper: float,
                     func) -> Tuple[np.ndarray, int]:
    half, mid = 0.5 * (upper - lower), 0.5 * (upper + lower)
    degree = FILTER_START_DEGREE
    while True:
        coefs = chebyshev.chebinterpolate(lambda s: func(mid + half * s), degree)
        if np.max(np.abs(coefs[-3:])) <= FILTER_TAIL_TOL:
            break
        degree *= 2
        if degree > FILTER_MAX_DEGREE:
            raise ResolutionError(f"Chebyshev degree above {FILTER_MAX_DEGREE} for the filter")
    scaled = (H - mid * np.eye(H.shape[0])) / half
    v_prev, v_cur = vector, scaled @ vector
    result = coefs[0] * v_prev + coefs[1] * v_cur
    for c in coefs[2:]:
        v_prev, v_cur = v_cur, 2 * scaled @ v_cur - v_prev
        result = result + c * v_cur
    return result, degree


def energy_filter(state: FieldState, center: float, width: float,
                  impurity: Optional[ImpurityField] = None) -> FilterReport:
    """Applies exp(-(H - center)^2 / (2 width^2)) and renormalizes.

    H is compressed to the fiber modes with energy below
    max(center + 12 width, n + 5/2), n the Landau band of ``center``.

    Raises:
        DomainError: If width <= 0.
        EmptyFilterError: If less than EMPTY_FILTER_NORM of the norm survives.
    """
    if width <= 0:
        raise DomainError(f"Filter width must be positive, got {width}")
    grid = state.grid
    n = max(int(np.ceil(center - 1.5)), 0)
    cutoff = max(center + FILTER_SPAN * width, n + 2.5)
    basis = _low_energy_basis(grid, cutoff)
    H = _compressed_hamiltonian(grid, basis, impurity)
    modes = _modes(state)
    coefficients = np.concatenate([V.T @ modes[:, m] * grid.dx for m, _, V in basis])
    bound = impurity.sup_norm if impurity is not None else 0.0
    energies = np.concatenate([v for _, v, _ in basis])
    lower, upper = energies.min() - bound - 1e-9, energies.max() + bound + 1e-9
    filtered, degree = _chebyshev_apply(H, coefficients, lower, upper,
                                        lambda e: np.exp(-((e - center) ** 2) / (2 * width ** 2)))
    out = np.zeros_like(modes)
    start = 0
    for m, values, V in basis:
        out[:, m] = V @ filtered[start:start + values.size]
        start += values.size
    result = replace(state, psi=_from_modes(out, grid))
    retained = result.norm / state.norm
    if retained < EMPTY_FILTER_NORM:
        raise EmptyFilterError(f"Filter around {center} with width {width} keeps {retained:.3e} of the state")
    result = replace(result, psi=result.psi / np.sqrt(result.norm))
    mean, var = energy_moments(result, impurity)
    logger.debug("Filter degree %d on %d modes, retained %.6f, <H>=%.6f var=%.3e",
                 degree, H.shape[0], retained, mean, var)
    return FilterReport(state=result, retained_fraction=float(retained), energy_mean=mean,
                        energy_var=var, degree=degree, basis_size=H.shape[0])


def load_config(source: Union[str, Path, Mapping[str, Any]]) -> SimulationConfig:
    """Reads a flat key=value file (or a mapping) into a SimulationConfig.

    Values are parsed with yaml.safe_load; blank lines and # comments are
    skipped; ``amplitude = auto`` means half of delta_admissible and
    ``grid_ny = auto`` keeps two y-cells per impurity site.

    Raises:
        ConfigError: For malformed lines, unknown keys or bad values.
    """
    if isinstance(source, Mapping):
        raw = dict(source)
    else:
        raw = {}
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config {source}: {e}") from e
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{number}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            try:
                raw[key] = yaml.safe_load(value) if value else None
            except yaml.YAMLError as e:
                raise ConfigError(f"{source}:{number}: cannot parse value {value!r}") from e
    known = {f.name for f in fields(SimulationConfig)}
    values = {}
    for key, value in raw.items():
        name = CONFIG_KEYS.get(key, key)
        if name not in known:
            raise ConfigError(f"Unknown config key: {key}")
        values[name] = value
    for name in ("amplitude", "grid_ny", "Ly", "filter_width"):
        if values.get(name) == "auto":
            values[name] = None
    try:
        config = SimulationConfig(**values)
        for name in ("n", "seed", "grid_nx", "seeds", "record_every"):
            setattr(config, name, int(getattr(config, name)))
        for name in ("lam", "lam_prime", "dt", "T", "Xmax", "site_spacing",
                     "fluctuation_exponent", "density_exponent", "B"):
            setattr(config, name, float(getattr(config, name)))
        for name in ("amplitude", "Ly", "filter_width"):
            if getattr(config, name) is not None:
                setattr(config, name, float(getattr(config, name)))
        if config.grid_ny is not None:
            config.grid_ny = int(config.grid_ny)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid config value: {e}") from e
    if not isinstance(config.allow_unsafe_amplitude, bool):
        raise ConfigError("allow_unsafe_amplitude must be true or false")
    if config.dt <= 0 or config.T <= 0 or config.record_every < 1 or config.seeds < 1:
        raise ConfigError("dt, T, record_every and seeds must be positive")
    for name in ("Ly", "filter_width", "grid_ny"):
        if getattr(config, name) is not None and getattr(config, name) <= 0:
            raise ConfigError(f"{name} must be positive or auto, got {getattr(config, name)}")
    return config


def _auto_ny(config: SimulationConfig, Ly: float) -> int:
    """Smallest power of two keeping two y-cells per impurity site."""
    spacing = config.site_spacing * config.B ** (0.5 - config.density_exponent)
    return int(2 ** np.ceil(np.log2(max(MIN_NY, 2 * Ly / spacing))))


@dataclass
class TransportSetup:
    """Everything a run needs besides the impurity draw."""
    config: SimulationConfig
    window: LandauBandWindow
    budget: MourreBudget
    amplitude: float
    packet: WavePacket
    grid: HalfPlaneGrid
    y_start: float
    filter_width: float


def prepare_transport(config: SimulationConfig,
                      branches: Optional[Sequence[DispersionBranch]] = None) -> TransportSetup:
    """Budget, initial packet and geometry of a transport run.

    Raises:
        ConfigError: For an invalid band window, or if the amplitude is not
            below delta_admissible and the override flag is not set.
    """
    try:
        window = LandauBandWindow(config.n, config.lam, config.lam_prime)
        if window.lam <= 0 or window.lam_prime <= 0:
            raise DomainError(f"lambda and lambda_prime must be positive, got {window.lam}, {window.lam_prime}")
    except DomainError as e:
        raise ConfigError(f"Invalid band window: {e}") from e
    branches = branches or dispersion_scan(config.n, SCAN_RANGE[0], SCAN_RANGE[1], SCAN_SPACING)
    budget = mourre_budget(config.n, config.lam, config.lam_prime, branches)
    amplitude = 0.5 * budget.delta_admissible if config.amplitude is None else config.amplitude
    if amplitude >= budget.delta_admissible and not config.allow_unsafe_amplitude:
        raise ConfigError(f"amplitude {amplitude:.6g} is not below delta_admissible "
                          f"{budget.delta_admissible:.6g}; set allow_unsafe_amplitude=true to run anyway")
    if amplitude >= budget.delta_admissible:
        logger.warning("Running with amplitude %.6g >= delta_admissible %.6g", amplitude, budget.delta_admissible)
    branch = branch_by_band(branches, config.n)
    center = window.midpoint
    kappa0 = preimage(config.n, (center, center), branch)[0]
    speed = abs(float(band_interpolant(branch)(kappa0, 1)))
    width = budget.sigma / (2 * speed)
    packet = make_packet(config.n, kappa0, width, "gaussian", branches)
    y_width = 1.0 / (2 * width)
    nu_plus = nu_window((window.lower, window.upper), branches).nu_plus
    Ly = config.Ly
    if Ly is None:
        Ly = max(4 + 2 * config.T * nu_plus, 8 * y_width + config.T * nu_plus)
    grid = HalfPlaneGrid(config.grid_nx, config.grid_ny or _auto_ny(config, Ly), config.Xmax, Ly)
    if Ly < 8 * y_width:
        logger.warning("Ly=%.4g is below eight packet widths (%.4g); expect seam crossings", Ly, 8 * y_width)
    y_start = Ly - 4 * y_width
    filter_width = budget.sigma / 2 if config.filter_width is None else config.filter_width
    return TransportSetup(config=config, window=window, budget=budget, amplitude=float(amplitude),
                          packet=packet, grid=grid, y_start=y_start % Ly, filter_width=filter_width)


def run_transport(setup: TransportSetup, seed: int) -> TransportReport:
    """One transport run for one impurity seed."""
    config, grid = setup.config, setup.grid
    impurity = generate_impurity(grid, setup.amplitude, seed, config.site_spacing,
                                 config.fluctuation_exponent, config.density_exponent, config.B)
    state = embed_packet(setup.packet, grid, setup.y_start)
    filtered = energy_filter(state, setup.window.midpoint, setup.filter_width, impurity)
    state = filtered.state
    stepper = SplitStepper(grid, impurity, config.dt)
    total = int(round(config.T / config.dt))
    rows = []
    step = 0
    while True:
        mean, var = energy_moments(state, impurity)
        rows.append((state.t, y_angle(state), commutator_expectation(state), mean, var,
                     state.norm, seam_mass(state)))
        if step >= total:
            break
        chunk = min(config.record_every, total - step)
        state = evolve(state, impurity, config.dt, chunk, stepper)
        step += chunk
    table = np.array(rows)
    times = table[:, 0]
    y_series = np.unwrap(table[:, 1]) * grid.Ly / (2 * np.pi)
    velocity = table[:, 2]
    commutator = float(np.mean(velocity))
    threshold = setup.budget.commutator_lower_bound * filtered.retained_fraction - COMMUTATOR_TOL
    if times.size >= 3:
        drift = (y_series[2:] - y_series[:-2]) / (times[2:] - times[:-2])
        residual = float(np.max(np.abs(drift + velocity[1:-1])))
    else:
        residual = 0.0
    report = TransportReport(
        times=times, y_mean=y_series, velocity=velocity, energy_mean=table[:, 3], energy_var=table[:, 4],
        norm=table[:, 5], seam_mass=table[:, 6], window=setup.window, budget=setup.budget,
        amplitude=setup.amplitude, seed=int(seed), retained_fraction=filtered.retained_fraction,
        commutator_mean=commutator, threshold=threshold, ehrenfest_residual=residual,
        commutator_pass=commutator >= threshold,
        monotone_pass=bool(np.all(np.diff(y_series) < 0)),
        ehrenfest_pass=residual <= EHRENFEST_TOL,
        seam_pass=bool(np.max(table[:, 6]) < SEAM_MASS_LIMIT))
    if report.flagged:
        logger.warning("Seed %d flagged: Ehrenfest residual %.3g, max seam mass %.3g",
                       seed, residual, float(np.max(table[:, 6])))
    logger.info("Seed %d: <x - p_y> = %.6f, threshold %.6f, pass=%s", seed, commutator, threshold, report.passed)
    return report


def transport_experiment(config: SimulationConfig,
                         branches: Optional[Sequence[DispersionBranch]] = None) -> TransportReport:
    """Filtered edge packet under H0 + W for the configured seed."""
    return run_transport(prepare_transport(config, branches), config.seed)


def transport_ensemble(config: SimulationConfig, seeds: Optional[Sequence[int]] = None,
                       branches: Optional[Sequence[DispersionBranch]] = None,
                       workers: int = 1) -> EnsembleReport:
    """Runs the experiment for several impurity seeds sharing one setup.

    Seeds default to config.seed, config.seed + 1, ... (config.seeds of them).
    """
    setup = prepare_transport(config, branches)
    seeds = list(seeds) if seeds is not None else [config.seed + i for i in range(config.seeds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            reports = list(executor.map(lambda s: run_transport(setup, s), seeds))
    else:
        reports = [run_transport(setup, s) for s in seeds]
    return EnsembleReport(reports)
