"""
Development settings for the viscoelastic project.

These settings are used for local development and for running experiments.
"""

from .base import *  # noqa: F403, F401

# SECURITY WARNING: keep the secret key used in production secret!
# This is the development secret key - production will use environment variable
SECRET_KEY = "django-insecure-lab-development-key-not-for-serving-runs"

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = True

ALLOWED_HOSTS = []
