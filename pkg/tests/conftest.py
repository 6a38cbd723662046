"""Shared fixtures: the three canonical systems, built once per session.

broken_system runs a transversality search plus holonomy evaluations, so
its construction is the expensive one; session scope keeps it to a single
build for the whole suite.
"""

import pytest

from skewlab.presets import broken_system, product_system, soft_system


@pytest.fixture(scope="session")
def product():
    return product_system()


@pytest.fixture(scope="session")
def broken():
    return broken_system()


@pytest.fixture(scope="session")
def soft():
    return soft_system()
