"""
Django settings for the viscoelastic project.

This package contains environment-specific settings modules:
- base.py: Common settings, including the lab defaults (VISCOLAB_*)
- development.py: Local development settings
- test.py: Test environment settings
- production.py: Settings for serving the run browser

The active settings module is determined by the DJANGO_SETTINGS_MODULE
environment variable.
"""
