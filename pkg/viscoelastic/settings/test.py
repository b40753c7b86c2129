"""
Test settings for the viscoelastic project.

These settings are used when running the test suite.
"""

import tempfile
from pathlib import Path

from .base import *  # noqa: F403, F401

# Use the same development secret key for tests
SECRET_KEY = "django-insecure-lab-development-key-not-for-serving-runs"

DEBUG = True

ALLOWED_HOSTS = ["*"]

# Keep command output out of the working tree
VISCOLAB_OUTPUT_ROOT = Path(tempfile.gettempdir()) / "viscolab-tests"

LOGGING["loggers"]["lab"]["level"] = "WARNING"  # noqa: F405
