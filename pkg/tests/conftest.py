"""
Shared test setup.
"""

import sys

from loguru import logger
import pytest


@pytest.fixture(autouse=True)
def quiet_logging():
    """CLI commands replace the log sink; restore a quiet one after every test."""
    yield
    logger.remove()
    logger.add(sys.stderr, level="WARNING", format="{time} | {level} | {name} | {message}")
