"""Shared fixtures for the edge-state lab tests.

Dispersion scans are the expensive part of most tests, so they are computed
once per session and shared.
"""

import sys
import os
import pytest

# Add scripts directory to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'scripts')))

from band import dispersion_scan


@pytest.fixture(scope="session")
def branches():
    """Bands 0..3 on kappa in [-4, 8] at spacing 0.05."""
    return dispersion_scan(3, -4.0, 8.0, 0.05)


@pytest.fixture(scope="session")
def band0(branches):
    """Band 0 of the standard scan."""
    return branches[0]
