"""Shared fixtures: the 1-D quantizer lookup table is built once per session."""

import pytest

from wassnet.quantizer import build_table


@pytest.fixture(scope="session")
def table():
    return build_table(128)
