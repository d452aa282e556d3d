"""Unit tests for the edge-state lab.

This package contains test modules for the special functions, the fiber
solver, the commutator constants, band wave packets, the half-plane
simulator and the command-line front end.
"""
