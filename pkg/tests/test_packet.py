"""Unit tests for band-limited wave packets and their free drift.

Free evolution only rotates the envelope phase, so <Y> moves linearly with
slope -<x - p_y>; window packets must drift with a speed between nu_- and nu_+.
"""

import sys
import os
import math
import pytest
import numpy as np

# Add scripts directory to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'scripts')))

from errors import AccuracyWarning, CoverageError, DomainError, RangeError
from mourre import nu_window, preimage
from packet import (PacketSuperposition, WavePacket, drift_experiment, edge_bulk_contrast,
                    edge_mass_profile, evolve_free, make_packet, near_edge_mass, near_edge_mass_bound,
                    packet_series, velocity_expectation, window_packets, y_expectation)


@pytest.fixture(scope="module")
def gaussian(branches):
    return make_packet(0, 1.0, 0.1, "gaussian", branches)


def test_gaussian_packet_is_normalized_and_centred(gaussian) -> None:
    """A Gaussian envelope has unit norm and mean kappa at its centre."""
    assert gaussian.norm == pytest.approx(1.0, abs=1e-12)
    assert gaussian.mean_kappa == pytest.approx(1.0, abs=1e-10)
    assert gaussian.t == 0.0
    assert gaussian.shape == "gaussian"
    assert np.all(gaussian.slope < 0)


def test_make_packet_rejects_bad_requests(branches) -> None:
    """Unknown shapes, missing windows, bad widths and uncovered centres raise."""
    with pytest.raises(DomainError):
        make_packet(0, 1.0, 0.1, "lorentzian", branches)
    with pytest.raises(DomainError):
        make_packet(0, 0.0, 0.0, "window", branches)
    with pytest.raises(DomainError):
        make_packet(0, 1.0, 0.0, "gaussian", branches)
    with pytest.raises(CoverageError):
        make_packet(0, 7.9, 0.1, "gaussian", branches)


def test_window_packet_covers_the_preimage(branches, band0) -> None:
    """The window envelope is flat on alpha_0^{-1}([0.9, 1.0]) and vanishes outside."""
    p = make_packet(0, 0.0, 0.0, "window", branches, (0.9, 1.0))
    left, right = preimage(0, (0.9, 1.0), band0)
    lo, hi = p.support
    assert lo == pytest.approx(left, abs=2 * p.spacing)
    assert hi == pytest.approx(right, abs=2 * p.spacing)
    assert p.norm == pytest.approx(1.0, abs=1e-12)


def test_evolve_free_is_a_phase_group(gaussian) -> None:
    """t = 0 is the identity, the norm is kept and evolutions compose."""
    assert np.array_equal(evolve_free(gaussian, 0.0).envelope, gaussian.envelope)
    later = evolve_free(gaussian, 3.0)
    assert later.t == 3.0
    assert later.norm == pytest.approx(1.0, abs=1e-12)
    twice = evolve_free(evolve_free(gaussian, 1.0), 2.0)
    assert twice.envelope == pytest.approx(later.envelope, abs=1e-12)


def test_y_expectation_of_real_envelope_is_zero(gaussian) -> None:
    """A real symmetric envelope has <Y> = 0."""
    assert y_expectation(gaussian) == pytest.approx(0.0, abs=1e-10)


def test_y_expectation_moves_with_the_velocity(gaussian) -> None:
    """<Y>(t) - <Y>(0) = -t <x - p_y> under free evolution."""
    velocity = velocity_expectation(gaussian)
    assert velocity > 0
    for t in (0.5, 2.0):
        shift = y_expectation(evolve_free(gaussian, t)) - y_expectation(gaussian)
        assert shift == pytest.approx(-t * velocity, abs=1e-6)


def test_y_expectation_warns_on_rough_envelopes() -> None:
    """A box envelope with a custom shape is flagged as inaccurate."""
    kappa = np.linspace(0.0, 1.0, 101)
    box = WavePacket(band=0, kappa=kappa, envelope=np.ones(101, dtype=complex), t=0.0,
                     alpha=np.zeros(101), slope=np.zeros(101), shape="custom")
    with pytest.warns(AccuracyWarning):
        y_expectation(box)


def test_drift_experiment_window_packet_is_sandwiched(branches) -> None:
    """The drift of a [0.9, 1.0] window packet lies between -nu_+ and -nu_-."""
    window = nu_window((0.9, 1.0), branches)
    p = make_packet(0, 0.0, 0.0, "window", branches, (0.9, 1.0))
    record = drift_experiment(p, window, tol=5e-3)
    assert record.passed
    assert -window.nu_plus * 1.005 <= record.slope <= -window.nu_minus * 0.995
    assert record.times.size == record.y_expectation.size == 21
    assert set(record.to_dict()) == {"slope", "nu_minus", "nu_plus", "velocity", "tolerance", "pass"}


def test_window_packets_superpose_lower_branches(branches) -> None:
    """A window in L_2 yields one normalized component per branch."""
    superposition = window_packets((2.6, 2.7), branches)
    assert [c.band for c in superposition.components] == [0, 1, 2]
    assert sum(w ** 2 for w in superposition.weights) == pytest.approx(1.0)
    assert superposition.norm == pytest.approx(1.0, abs=1e-12)
    moved = evolve_free(superposition, 1.0)
    assert moved.t == 1.0
    assert y_expectation(moved) < y_expectation(superposition)


def test_superposition_requires_disjoint_supports(gaussian) -> None:
    """Overlapping components raise DomainError."""
    with pytest.raises(DomainError):
        PacketSuperposition((gaussian, gaussian), (math.sqrt(0.5), math.sqrt(0.5)))


def test_edge_bulk_contrast(branches) -> None:
    """Edge states are faster than bulk states and the bulk bound sits under its envelope."""
    contrast = edge_bulk_contrast(0, 1.0, 16.0, 0.25, branches)
    assert contrast.bulk_threshold == pytest.approx(2.0)
    assert contrast.passed
    assert contrast.edge_bound > contrast.bulk_bound
    assert contrast.bulk_bound <= contrast.bulk_envelope * (1 + 1e-9)
    assert edge_bulk_contrast(0, 1.0, 1.0, 0.25, branches).passed


def test_edge_bulk_contrast_fixed_targets(branches) -> None:
    """At B = 16 the edge bound misses 0.5 sqrt(B) while the bulk bound meets its Gaussian target."""
    contrast = edge_bulk_contrast(0, 1.0, 16.0, 0.25, branches)
    assert contrast.edge_bound == pytest.approx(1.7536, abs=2e-3)
    assert contrast.bulk_bound == pytest.approx(0.2459, abs=2e-3)
    assert contrast.edge_target == pytest.approx(2.0)
    assert contrast.bulk_target == pytest.approx(4 * np.exp(-1.6))
    assert not contrast.edge_meets_target
    assert contrast.bulk_meets_target


def test_edge_bulk_contrast_rejects_bad_parameters(branches) -> None:
    """B < 1, eps outside (0, 1/2), sigma_e <= 0 and uncovered thresholds raise."""
    with pytest.raises(DomainError):
        edge_bulk_contrast(0, 1.0, 0.5, 0.25, branches)
    with pytest.raises(DomainError):
        edge_bulk_contrast(0, 1.0, 16.0, 0.5, branches)
    with pytest.raises(DomainError):
        edge_bulk_contrast(0, 0.0, 16.0, 0.25, branches)
    with pytest.raises(CoverageError):
        edge_bulk_contrast(0, 1.0, 1e8, 0.25, branches)


def test_edge_mass_profile(branches) -> None:
    """All mass lies beyond X = 0 and almost none beyond X = 6 at kappa_0 = 0."""
    p = make_packet(0, 0.0, 0.1, "gaussian", branches)
    assert edge_mass_profile(p, 0.0) == pytest.approx(1.0, abs=1e-9)
    assert edge_mass_profile(p, 6.0) < 1e-6
    with pytest.raises(RangeError):
        edge_mass_profile(p, 100.0)
    with pytest.raises(RangeError):
        edge_mass_profile(p, -1.0)


def test_near_edge_mass_drops_for_bulk_packets(branches) -> None:
    """A packet centred at kappa = 6 has almost no mass within one length of the edge."""
    edge = make_packet(0, 0.0, 0.1, "gaussian", branches)
    bulk = make_packet(0, 6.0, 0.1, "gaussian", branches)
    assert near_edge_mass(bulk) < 1e-4
    assert near_edge_mass(edge) > near_edge_mass(bulk)


def test_near_edge_mass_bound() -> None:
    """The bound follows exp(-(1-eps)(sigma_e^2 B^(2 gamma - 1) - 1))."""
    expected = math.exp(-0.75 * (10 ** 0.4 - 1))
    assert near_edge_mass_bound(1.0, 0.6, 100.0, 0.25) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainError):
        near_edge_mass_bound(1.0, 0.6, 100.0, 1.0)


def test_packet_series_rows(gaussian) -> None:
    """One (t, <Y>) row per requested time."""
    rows = packet_series(gaussian, [0.0, 1.0])
    assert [t for t, _ in rows] == [0.0, 1.0]
    assert rows[1][1] == pytest.approx(y_expectation(evolve_free(gaussian, 1.0)))
