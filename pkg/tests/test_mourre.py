"""Unit tests for the commutator constants on Landau band windows.

Band separations, window velocities and the perturbation budget are checked
against their definitions and against fiber solves at the preimage ends.
"""

import sys
import os
import pytest
import numpy as np

# Add scripts directory to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'scripts')))

from band import dispersion_scan, solve_fiber
from errors import CoverageError, DomainError, EmptyWindowError
from mourre import (LandauBandWindow, admissible_thresholds, budget_table, classify_subspace,
                    compact_range, delta_n, mourre_budget, nu_n_lambda, nu_window, preimage,
                    scaled_window, theta, unscaled_interval)


def test_landau_band_window_bounds() -> None:
    """The window is (n+1/2+lambda, n+3/2-lambda'], closed above only for lambda' = 0."""
    window = LandauBandWindow(0, 0.2, 0.2)
    assert window.lower == pytest.approx(0.7)
    assert window.upper == pytest.approx(1.3)
    assert window.midpoint == pytest.approx(1.0)
    assert not window.contains(window.upper)
    full = LandauBandWindow(1)
    assert full.contains(2.5) and not full.contains(1.5)
    with pytest.raises(DomainError):
        LandauBandWindow(0, 0.6, 0.4)
    with pytest.raises(DomainError):
        LandauBandWindow(-1)


def test_theta_outside_the_level_is_one(branches) -> None:
    """theta is 1 whenever one of the two values leaves L_n."""
    assert theta(1, 2.0, 0, 1, branches) == 1.0
    assert theta(1, -3.0, 0, 1, branches) == 1.0
    assert 0 < theta(2, 0.5, 1, 2, branches) <= 1.0
    with pytest.raises(DomainError):
        theta(1, 0.0, 1, 1, branches)


def test_compact_range_brackets_the_band_pairs() -> None:
    """Outside the compact range the exit conditions hold."""
    assert compact_range(0) == (0.0, 0.0)
    lo, hi = compact_range(1)
    assert lo < 0 < hi
    assert solve_fiber(lo, 1)[0].eigenvalue > 2.5
    assert solve_fiber(hi, 0)[0].eigenvalue < 1.5


def test_preimage_endpoints_hit_the_window(band0) -> None:
    """alpha_0 at the preimage ends of [0.9, 1.0] is 1.0 and 0.9."""
    left, right = preimage(0, (0.9, 1.0), band0)
    assert left < right
    assert solve_fiber(left, 0)[0].eigenvalue == pytest.approx(1.0, abs=1e-6)
    assert solve_fiber(right, 0)[0].eigenvalue == pytest.approx(0.9, abs=1e-6)


def test_preimage_requires_coverage() -> None:
    """A window below the sampled values raises CoverageError."""
    short = dispersion_scan(0, 0.0, 1.0, 0.05)[0]
    with pytest.raises(CoverageError):
        preimage(0, (0.6, 0.7), short)


def test_nu_window_single_branch(branches) -> None:
    """[0.9, 1.0] meets only branch 0 and has 0 < nu_- <= nu_+."""
    window = nu_window((0.9, 1.0), branches)
    assert window.band == 0
    assert window.branches == (0,)
    assert 0 < window.nu_minus <= window.nu_plus


def test_nu_window_near_landau_level(branches) -> None:
    """Near alpha = 3/2 the speeds approach 2/sqrt(pi)."""
    window = nu_window((1.45, 1.5), branches)
    assert window.nu_plus == pytest.approx(1.1284, abs=1e-3)
    assert 1.0 < window.nu_minus <= window.nu_plus


def test_nu_window_shrinks_to_a_point(branches) -> None:
    """A tiny window has nu_- close to nu_+."""
    window = nu_window((1.0, 1.0 + 1e-6), branches)
    assert window.nu_plus - window.nu_minus < 1e-4


def test_nu_window_collects_lower_branches(branches) -> None:
    """A window in L_2 meets branches 0, 1 and 2."""
    window = nu_window((2.6, 2.7), branches)
    assert window.band == 2
    assert window.branches == (0, 1, 2)
    assert len(window.preimages) == 3


def test_nu_window_is_converged_in_the_scan_spacing(branches) -> None:
    """Halving the kappa spacing moves nu_- and nu_+ by at most 1e-4."""
    fine = dispersion_scan(0, -1.0, 4.0, 0.025)
    coarse_window = nu_window((0.9, 1.0), branches)
    fine_window = nu_window((0.9, 1.0), fine)
    assert fine_window.nu_minus == pytest.approx(coarse_window.nu_minus, abs=1e-4)
    assert fine_window.nu_plus == pytest.approx(coarse_window.nu_plus, abs=1e-4)


def test_nu_window_rejects_bad_intervals(branches) -> None:
    """Intervals across two levels or below 1/2 raise."""
    with pytest.raises(DomainError):
        nu_window((1.4, 1.6), branches)
    with pytest.raises(EmptyWindowError):
        nu_window((0.3, 0.4), branches)


def test_nu_n_lambda_is_non_decreasing(branches) -> None:
    """Shrinking the window can only raise the infimum of the speed."""
    values = [nu_n_lambda(0, lam, branches) for lam in (0.1, 0.3, 0.5)]
    assert values[0] <= values[1] <= values[2]
    assert nu_n_lambda(1, 0.5, branches) > 0
    with pytest.raises(DomainError):
        nu_n_lambda(0, 1.2, branches)


def test_delta_n_low_bands(branches) -> None:
    """delta_0 = delta_1 = 1 and delta_2 lies in (0, 1] and is converged."""
    assert delta_n(0, branches) == 1.0
    assert delta_n(1, branches) == 1.0
    coarse = delta_n(2, branches)
    fine = delta_n(2, branches, scan_spacing=0.025)
    assert 0 < coarse <= 1.0
    assert abs(coarse - fine) <= 1e-4


def test_delta_n_checks_exit_conditions() -> None:
    """A range too short on the left is reported."""
    short = dispersion_scan(1, -0.5, 0.5, 0.05)
    with pytest.raises(CoverageError, match="left"):
        delta_n(1, short)


def test_mourre_budget_band_zero(branches) -> None:
    """n = 0, lambda = lambda' = 0.2 gives sigma = 0.05 and a consistent budget."""
    budget = mourre_budget(0, 0.2, 0.2, branches)
    nu = nu_n_lambda(0, 0.1, branches)
    assert budget.sigma == pytest.approx(0.05)
    assert budget.delta_n == 1.0
    assert budget.nu == pytest.approx(nu)
    assert budget.delta_admissible == pytest.approx(0.05 * nu ** 2 / 1024)
    assert budget.commutator_lower_bound == pytest.approx(nu / 2)
    assert set(budget.to_dict()) == {"n", "lambda", "lambda_prime", "sigma", "delta_n", "nu",
                                     "delta_admissible", "commutator_lower_bound"}


def test_mourre_budget_bracket(branches) -> None:
    """The bracket is 1 without perturbation and at least 1/2 at the admissible bound."""
    budget = mourre_budget(0, 0.2, 0.2, branches)
    assert budget.bracket(0.0, 0.0) == 1.0
    assert budget.bound(0.0, 0.0) == pytest.approx(budget.nu)
    d = budget.delta_admissible
    assert budget.bracket(d, d) >= 0.5
    assert budget.admits(0.5 * d, 0.0)
    assert not budget.admits(d, 0.0)
    with pytest.raises(DomainError):
        mourre_budget(0, 0.0, 0.2, branches)


def test_delta_admissible_grows_with_the_margins(branches) -> None:
    """delta_admissible is non-decreasing in lambda and in lambda'."""
    in_lam = [mourre_budget(0, lam, 0.2, branches).delta_admissible for lam in (0.1, 0.2, 0.3)]
    in_lam_prime = [mourre_budget(0, 0.2, lam, branches).delta_admissible for lam in (0.1, 0.2, 0.3)]
    assert in_lam[0] <= in_lam[1] <= in_lam[2]
    assert in_lam_prime[0] <= in_lam_prime[1] <= in_lam_prime[2]
    assert in_lam_prime[0] < in_lam_prime[1]


def test_budget_table_rows(branches) -> None:
    """One budget per band, all fields positive and delta_admissible <= 1/2."""
    table = budget_table(range(3), 0.2, 0.2, branches)
    assert [b.n for b in table] == [0, 1, 2]
    for b in table:
        assert min(b.sigma, b.nu, b.delta_admissible, b.commutator_lower_bound) > 0
        assert b.delta_admissible <= 0.5


def test_classify_subspace() -> None:
    """gamma <= 1/2 is an edge space, larger gamma a bulk space."""
    edge = classify_subspace(0, 1.0, 0.5, 100.0)
    assert edge.is_edge and edge.kappa_threshold == pytest.approx(1.0)
    bulk = classify_subspace(0, 1.0, 0.6, 100.0)
    assert not bulk.is_edge
    assert bulk.kappa_threshold == pytest.approx(100 ** 0.1, rel=1e-12)
    assert classify_subspace(0, 1.0, 0.4, 100.0).is_edge
    with pytest.raises(DomainError):
        classify_subspace(0, 1.0, 0.5, 0.0)


def test_scaled_window_scales_speeds(branches) -> None:
    """A physical window at B = 100 has speeds 10 nu_pm of its scaled window."""
    physical = scaled_window((90.0, 100.0), 100.0, branches)
    scaled = nu_window((0.9, 1.0), branches)
    assert physical.speed_minus == pytest.approx(10 * scaled.nu_minus)
    assert physical.speed_plus == pytest.approx(10 * scaled.nu_plus)
    with pytest.raises(DomainError):
        scaled_window((90.0, 100.0), 0.0, branches)


def test_admissible_thresholds(branches) -> None:
    """A small delta admits margins satisfying the defining inequality; a large one none."""
    delta = 1e-5
    record = admissible_thresholds(0, delta, branches)
    assert record.feasible
    assert 0 < record.lam_prime <= record.lam < 0.5
    target = 512 * 2 * delta
    assert min(record.lam, 1.0) * nu_n_lambda(0, record.lam / 2, branches) ** 2 > target
    assert record.lam_prime * nu_n_lambda(0, 0.25, branches) ** 2 >= target * (1 - 1e-12)
    assert not admissible_thresholds(0, 0.4, branches).feasible
    with pytest.raises(DomainError):
        admissible_thresholds(0, 0.6, branches)


def test_unscaled_interval() -> None:
    """L_0^{0.2, 0.2} at B = 10 is (7, 13)."""
    assert unscaled_interval(0, 0.2, 0.2, 10.0) == pytest.approx((7.0, 13.0))
    with pytest.raises(DomainError):
        unscaled_interval(0, 0.2, 0.2, -1.0)
