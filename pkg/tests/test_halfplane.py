"""Unit tests for the half-plane time stepper, the energy filter and transport runs.

Grids are coarse so the suite stays fast; the free evolution of an embedded
band packet (each mode only picks up exp(-i alpha t)) is the main oracle.
"""

import sys
import os
import math
import pytest
import numpy as np

# Add scripts directory to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'scripts')))

from errors import ConfigError, DomainError, EmptyFilterError, ResolutionError, StabilityError
from halfplane import (FieldState, HalfPlaneGrid, ImpurityField, SimulationConfig, apply_hamiltonian,
                       band_reference, commutator_expectation, embed_packet, energy_filter,
                       energy_moments, evolve, generate_impurity, load_config, prepare_transport,
                       seam_mass, transport_ensemble, transport_experiment, y_mean)
from mourre import nu_window
from packet import band_interpolant, make_packet, velocity_expectation


@pytest.fixture(scope="module")
def grid():
    # kappa spacing 0.05
    return HalfPlaneGrid(140, 128, 14.0, 2 * math.pi / 0.05)


@pytest.fixture(scope="module")
def packet(branches):
    return make_packet(0, 1.0, 0.1, "gaussian", branches)


@pytest.fixture(scope="module")
def state(packet, grid):
    return embed_packet(packet, grid, grid.Ly / 2)


@pytest.fixture(scope="module")
def transport_config():
    return load_config({"n": 0, "lambda": 0.45, "lambda_prime": 0.45, "T": 2.0, "dt": 0.02,
                        "grid_nx": 140, "grid_ny": 64, "site_spacing": 4.0, "record_every": 10})


def test_grid_geometry() -> None:
    """Spacings, shapes and the FFT momenta follow nx, ny, Xmax and Ly."""
    g = HalfPlaneGrid(140, 64, 14.0, 32.0)
    assert g.dx == pytest.approx(0.1)
    assert g.dy == pytest.approx(0.5)
    assert g.shape == (141, 64)
    assert g.kappa[1] == pytest.approx(2 * math.pi / 32.0)
    with pytest.raises(ConfigError):
        HalfPlaneGrid(2, 64, 14.0, 32.0)


def test_generate_impurity_zero_amplitude() -> None:
    """delta_W = 0 gives an identically zero field."""
    g = HalfPlaneGrid(140, 64, 14.0, 32.0)
    field = generate_impurity(g, 0.0, seed=3, site_spacing=2.0)
    assert not np.any(field.values)
    assert field.sup_norm == 0.0


def test_generate_impurity_is_reproducible_and_bounded() -> None:
    """The same seed gives identical fields and the sup norm never exceeds delta_W."""
    g = HalfPlaneGrid(140, 64, 14.0, 32.0)
    first = generate_impurity(g, 0.05, seed=7, site_spacing=2.0)
    again = generate_impurity(g, 0.05, seed=7, site_spacing=2.0)
    other = generate_impurity(g, 0.05, seed=8, site_spacing=2.0)
    assert np.array_equal(first.values, again.values)
    assert not np.array_equal(first.values, other.values)
    assert 0 < first.sup_norm <= 0.05
    assert first.values.shape == g.shape


def test_generate_impurity_rejects_bad_parameters() -> None:
    """Sites closer than two cells and invalid exponents raise."""
    g = HalfPlaneGrid(140, 16, 14.0, 16.0)
    with pytest.raises(ResolutionError):
        generate_impurity(g, 0.05, seed=0, site_spacing=1.0)
    with pytest.raises(DomainError):
        generate_impurity(g, -0.1, seed=0, site_spacing=4.0)
    with pytest.raises(DomainError):
        generate_impurity(g, 0.1, seed=0, site_spacing=4.0, density_exponent=0.4)


def test_embedded_packet_is_normalized_and_centred(state, grid) -> None:
    """The embedding has unit norm, zero walls and its circular mean at y0."""
    assert state.norm == pytest.approx(1.0, abs=1e-12)
    assert np.all(state.psi[0] == 0) and np.all(state.psi[-1] == 0)
    assert y_mean(state) == pytest.approx(grid.Ly / 2, abs=1e-6)
    assert seam_mass(state) < 1e-6


def test_embed_packet_needs_a_grid_mode(branches) -> None:
    """A packet between the grid momenta cannot be embedded."""
    narrow = make_packet(0, 1.0, 0.01, "gaussian", branches)
    with pytest.raises(ResolutionError):
        embed_packet(narrow, HalfPlaneGrid(140, 16, 14.0, 2.0))


def test_energy_and_commutator_of_an_embedded_packet(state, packet) -> None:
    """<H> matches the band energy and <x - p_y> matches -int alpha' |f|^2."""
    mean, var = energy_moments(state)
    band_energy = float(np.sum(packet.alpha * packet.density) * packet.spacing)
    assert mean == pytest.approx(band_energy, abs=5e-3)
    assert var > 0
    assert commutator_expectation(state) == pytest.approx(velocity_expectation(packet), abs=5e-3)


def test_apply_hamiltonian_keeps_the_walls(state, grid) -> None:
    """H psi vanishes on the Dirichlet rows and adds W psi pointwise."""
    field = ImpurityField.constant(grid, 0.25)
    plain = apply_hamiltonian(state)
    shifted = apply_hamiltonian(state, field)
    assert np.all(shifted[0] == 0) and np.all(shifted[-1] == 0)
    assert shifted[1:-1] == pytest.approx(plain[1:-1] + 0.25 * state.psi[1:-1], abs=1e-10)


def test_evolve_conserves_norm_with_impurity(state, grid) -> None:
    """A strong field still leaves the norm at 1 and the walls at 0."""
    field = generate_impurity(grid, 0.5, seed=1, site_spacing=4.0)
    later = evolve(state, field, 0.02, 50)
    assert later.t == pytest.approx(1.0)
    assert later.norm == pytest.approx(1.0, abs=1e-8)
    assert np.all(later.psi[0] == 0) and np.all(later.psi[-1] == 0)


def test_constant_potential_is_a_global_phase(state, grid) -> None:
    """W = c gives the free evolution times exp(-i c t)."""
    free = evolve(state, None, 0.02, 25)
    shifted = evolve(state, ImpurityField.constant(grid, 0.3), 0.02, 25)
    assert shifted.psi == pytest.approx(free.psi * np.exp(-0.3j * 0.5), abs=1e-10)


def test_free_evolution_matches_band_evolution(branches) -> None:
    """Without W the grid evolution follows exp(-i alpha_0 t) mode by mode."""
    fine = HalfPlaneGrid(1120, 64, 14.0, 2 * math.pi / 0.1)
    p = make_packet(0, 1.0, 0.3, "gaussian", branches)
    start = embed_packet(p, fine, fine.Ly / 2)
    evolved = evolve(start, None, 0.005, 200)
    reference = band_reference(p, fine, 1.0, fine.Ly / 2)
    distance = math.sqrt(np.sum(np.abs(evolved.psi - reference.psi) ** 2) * fine.dx * fine.dy)
    assert distance <= 1e-4


def test_free_drift_lies_between_the_window_speeds(state, band0) -> None:
    """Without W the slope of the y-mean is inside [-nu_+, -nu_-] of the energies the packet spans."""
    spline = band_interpolant(band0)
    window = nu_window((float(spline(1.4)), float(spline(0.6))), [band0])
    times = np.linspace(0.0, 1.0, 6)
    means = [y_mean(state)]
    current = state
    for _ in times[1:]:
        current = evolve(current, None, 0.02, 10)
        means.append(y_mean(current))
    slope = np.polyfit(times, means, 1)[0]
    assert -window.nu_plus - 1e-3 <= slope <= -window.nu_minus + 1e-3


def test_free_evolution_converges_in_space_and_time(branches) -> None:
    """Halving dx and dt together shrinks the distance to the band evolution."""
    p = make_packet(0, 1.0, 0.3, "gaussian", branches)
    distances = []
    for nx, dt in ((140, 0.02), (280, 0.01), (560, 0.005)):
        g = HalfPlaneGrid(nx, 64, 14.0, 2 * math.pi / 0.1)
        evolved = evolve(embed_packet(p, g, g.Ly / 2), None, dt, int(round(0.5 / dt)))
        reference = band_reference(p, g, 0.5, g.Ly / 2)
        distances.append(math.sqrt(np.sum(np.abs(evolved.psi - reference.psi) ** 2) * g.dx * g.dy))
    assert distances[0] > distances[1] > distances[2]
    assert distances[1] / distances[2] > 2.0

def test_free_drift_follows_the_commutator(state) -> None:
    """Without W the y-mean moves by -<x - p_y> t."""
    velocity = commutator_expectation(state)
    later = evolve(state, None, 0.02, 50)
    assert commutator_expectation(later) == pytest.approx(velocity, abs=1e-8)
    assert y_mean(later) - y_mean(state) == pytest.approx(-velocity, abs=0.05)


def test_evolve_time_step_convergence(state, grid) -> None:
    """Halving dt shrinks the change of the state about fourfold."""
    x, y = np.meshgrid(grid.x, grid.y, indexing="ij")
    values = 0.5 * np.cos(2 * np.pi * y / grid.Ly) * np.exp(-((x - 2.0) ** 2) / 4)
    field = ImpurityField(0.5, 0.0, 0.5, 1.0, 0, 1.0, values)
    runs = [evolve(state, field, dt, int(round(0.4 / dt))).psi for dt in (0.04, 0.02, 0.01)]
    first = np.linalg.norm(runs[0] - runs[1])
    second = np.linalg.norm(runs[1] - runs[2])
    assert first / second > 2.5


def test_evolve_reports_instability(state) -> None:
    """A non-finite norm raises StabilityError with a halved step."""
    psi = state.psi.copy()
    psi[5, 5] = np.nan
    with pytest.raises(StabilityError) as excinfo:
        evolve(FieldState(psi=psi, t=0.0, grid=state.grid), None, 0.02, 1)
    assert excinfo.value.suggested_dt == pytest.approx(0.01)
    with pytest.raises(DomainError):
        evolve(state, None, 0.0, 1)


def test_evolve_reports_a_blow_up_during_the_step(state) -> None:
    """A state that turns non-finite inside a step raises StabilityError, not ValueError."""
    broken = ImpurityField.constant(state.grid, np.inf)
    with pytest.raises(StabilityError) as excinfo:
        evolve(state, broken, 0.02, 2)
    assert excinfo.value.suggested_dt == pytest.approx(0.01)


def test_wide_energy_filter_is_nearly_the_identity(state) -> None:
    """A filter much wider than the packet's energy spread keeps the state."""
    center, _ = energy_moments(state)
    report = energy_filter(state, center, 1.5)
    assert report.retained_fraction >= 0.99
    overlap = abs(np.sum(np.conj(state.psi) * report.state.psi) * state.grid.dx * state.grid.dy)
    assert overlap >= 1 - 1e-4
    assert report.state.norm == pytest.approx(1.0, abs=1e-10)


def test_narrow_energy_filter_bounds_the_variance(state) -> None:
    """After filtering with width w the energy variance is at most 1.1 w^2."""
    center, var = energy_moments(state)
    report = energy_filter(state, center, 0.02)
    assert report.energy_var <= 1.1 * 0.02 ** 2
    assert report.energy_var < var
    assert 0 < report.retained_fraction < 1
    assert report.energy_mean == pytest.approx(center, abs=0.03)


def test_energy_filter_errors(state) -> None:
    """A filter far from the packet's energies is empty; w <= 0 is rejected."""
    with pytest.raises(EmptyFilterError):
        energy_filter(state, 5.0, 0.05)
    with pytest.raises(DomainError):
        energy_filter(state, 1.0, 0.0)


def test_load_config_from_file(tmp_path) -> None:
    """key = value lines with comments parse into a SimulationConfig."""
    path = tmp_path / "run.cfg"
    path.write_text("# transport run\nn = 1\nlambda = 0.3\nlambda_prime = 0.1  # margin\n"
                    "amplitude = auto\ngrid_ny = auto\nLy = 40\ndt = 1e-3\n"
                    "allow_unsafe_amplitude = true\n", encoding="utf-8")
    config = load_config(path)
    assert config.n == 1
    assert config.lam == 0.3 and config.lam_prime == 0.1
    assert config.amplitude is None and config.grid_ny is None
    assert config.Ly == 40.0 and config.dt == 1e-3
    assert config.allow_unsafe_amplitude is True
    assert config.to_dict()["lam"] == 0.3


def test_load_config_rejects_bad_input(tmp_path) -> None:
    """Unknown keys, malformed lines and bad values raise ConfigError."""
    with pytest.raises(ConfigError, match="Unknown config key"):
        load_config({"colour": 1})
    bad = tmp_path / "bad.cfg"
    bad.write_text("n 0\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config({"dt": "abc"})
    with pytest.raises(ConfigError):
        load_config({"dt": -1.0})
    for key in ("Ly", "filter_width", "grid_ny"):
        with pytest.raises(ConfigError, match=key):
            load_config({key: 0})
    assert load_config({"Ly": "auto", "filter_width": "auto"}).Ly is None
    with pytest.raises(ConfigError):
        load_config({"allow_unsafe_amplitude": "maybe"})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_unsafe_amplitude_needs_the_override(branches) -> None:
    """An amplitude at or above delta_admissible is rejected unless overridden."""
    with pytest.raises(ConfigError, match="delta_admissible"):
        prepare_transport(SimulationConfig(amplitude=1.0), branches)
    setup = prepare_transport(SimulationConfig(amplitude=1.0, allow_unsafe_amplitude=True), branches)
    assert setup.amplitude == 1.0
    assert setup.amplitude >= setup.budget.delta_admissible


def test_prepare_transport_rejects_bad_windows(branches) -> None:
    """Margins outside the band window are config errors."""
    with pytest.raises(ConfigError, match="band window"):
        prepare_transport(SimulationConfig(lam=0.6, lam_prime=0.6), branches)
    with pytest.raises(ConfigError, match="band window"):
        prepare_transport(SimulationConfig(lam=0.0), branches)


def test_prepare_transport_geometry(branches) -> None:
    """The automatic y-resolution keeps two cells per impurity site."""
    setup = prepare_transport(SimulationConfig(), branches)
    assert setup.amplitude == pytest.approx(0.5 * setup.budget.delta_admissible)
    assert setup.grid.dy <= 0.5
    assert setup.grid.ny & (setup.grid.ny - 1) == 0
    assert 0 <= setup.y_start < setup.grid.Ly
    assert setup.filter_width == pytest.approx(setup.budget.sigma / 2)


def test_transport_experiment_passes(transport_config, branches) -> None:
    """A weak field keeps the drift: commutator above threshold and <Y> decreasing."""
    report = transport_experiment(transport_config, branches)
    assert report.passed
    assert report.commutator_mean >= report.threshold
    assert np.all(np.diff(report.y_mean) < 0)
    assert np.all(np.abs(report.norm - 1.0) <= 1e-8)
    assert report.times[-1] == pytest.approx(2.0)
    frame = report.to_frame()
    assert list(frame.columns) == ["t", "y_mean", "velocity_mean", "energy_mean", "energy_var", "norm"]
    assert report.verdict()["pass"] is True


def test_transport_ensemble_of_sixteen_seeds(transport_config, branches) -> None:
    """Every seed keeps its commutator average above the threshold."""
    config = load_config({**transport_config.to_dict(), "seeds": 16})
    ensemble = transport_ensemble(config, branches=branches, workers=2)
    summary = ensemble.summary()
    assert summary["seeds"] == list(range(16))
    assert ensemble.passed
    assert summary["min"] >= summary["threshold"]
    assert summary["passed"] == 16
