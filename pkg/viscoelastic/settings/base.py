"""
Base settings for the viscoelastic project.

These settings are common across all environments (development, test, production).
Environment-specific overrides should be placed in the respective settings modules.

The VISCOLAB_* values are the defaults used by the lab commands when a run
configuration does not set them. Each one can be overridden from the
environment variable of the same name.

For more information on this file, see
https://docs.djangoproject.com/en/4.2/topics/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent


def _env_float(name, default):
    return float(os.environ.get(name, default))


# Application definition

INSTALLED_APPS = [
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",
    "django.contrib.staticfiles",
    "lab",
]

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
    "django.middleware.clickjacking.XFrameOptionsMiddleware",
]

ROOT_URLCONF = "viscoelastic.urls"

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.debug",
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]

WSGI_APPLICATION = "viscoelastic.wsgi.application"


# Database
# https://docs.djangoproject.com/en/4.2/ref/settings/#databases

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}


# Internationalization
# https://docs.djangoproject.com/en/4.2/topics/i18n/

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# Static files (admin only)
STATIC_URL = "static/"
STATIC_ROOT = BASE_DIR / "staticfiles"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Output
VISCOLAB_OUTPUT_ROOT = Path(os.environ.get("VISCOLAB_OUTPUT_ROOT", BASE_DIR / "runs"))  # Default parent of run directories
VISCOLAB_LOG_LEVEL = os.environ.get("VISCOLAB_LOG_LEVEL", "INFO")  # Level of the lab loggers

# Physics and propagator
VISCOLAB_MU = _env_float("VISCOLAB_MU", 1.0)  # Viscosity
VISCOLAB_DISC_EPS = _env_float("VISCOLAB_DISC_EPS", 1e-8)  # Relative width of the double-eigenvalue band flagged in reports; the propagator ignores it

# Stepping
VISCOLAB_C_CFL = _env_float("VISCOLAB_C_CFL", 0.5)  # CFL number
VISCOLAB_EPS_U = _env_float("VISCOLAB_EPS_U", 1e-12)  # Velocity floor in the CFL bound
VISCOLAB_BLOWUP_FACTOR = _env_float("VISCOLAB_BLOWUP_FACTOR", 10.0)  # Abort when the H2 size exceeds this multiple of the initial one

# Invariants
VISCOLAB_KAPPA_MAX = _env_float("VISCOLAB_KAPPA_MAX", 0.1)  # Upper end of the kappa search
VISCOLAB_TOL_DIV = _env_float("VISCOLAB_TOL_DIV", 1e-11)  # Allowed max-mode |xi . u| relative to ||u||
VISCOLAB_STRUCTURAL_FACTOR = _env_float("VISCOLAB_STRUCTURAL_FACTOR", 2.0)  # Allowed ratio of the structural drift constants at dt and dt/2
VISCOLAB_ALIASING_TOL = _env_float("VISCOLAB_ALIASING_TOL", 1e-10)  # Time-independent part of the structural drift envelope
VISCOLAB_STRUCTURAL_FLOOR = _env_float("VISCOLAB_STRUCTURAL_FLOOR", 1e-12)  # Drift below this is treated as resolved
VISCOLAB_STABILITY_FACTOR = _env_float("VISCOLAB_STABILITY_FACTOR", 4.4)  # sup H2 size must stay below this multiple of delta
VISCOLAB_HODGE_SMALLNESS = _env_float("VISCOLAB_HODGE_SMALLNESS", 0.1)  # ||E||_H2 above which the Hodge check is skipped
VISCOLAB_HODGE_CONSTANT = _env_float("VISCOLAB_HODGE_CONSTANT", 1.0)  # C in ||lap E|| <= C ||lap Ebb|| / (1 - C ||E||_H2)
VISCOLAB_HODGE_RATIO_TOL = _env_float("VISCOLAB_HODGE_RATIO_TOL", 0.1)  # Allowed |ratio - 1| of ||E|| / ||n|| and ||grad E|| / ||grad n||
VISCOLAB_LYAPUNOV_SLACK = _env_float("VISCOLAB_LYAPUNOV_SLACK", 1.0)  # Allowed growth of G per unit time, in units of dt^2 G(0)

# Initial data
VISCOLAB_INTERP_TOL = _env_float("VISCOLAB_INTERP_TOL", 1e-10)  # Maximum push-forward interpolation residual
VISCOLAB_XI_FLOOR = _env_float("VISCOLAB_XI_FLOOR", 0.1)  # Interval [0, xi_floor] on which profile floors are certified
VISCOLAB_FLOOR_SLACK = _env_float("VISCOLAB_FLOOR_SLACK", 0.05)  # Relative slack of the floor certificate

# Decay quadrature
VISCOLAB_RHO = _env_float("VISCOLAB_RHO", 0.2)  # Lower bound certificate ratio
VISCOLAB_WINDOW = (
    _env_float("VISCOLAB_WINDOW_LO", 1e2),
    _env_float("VISCOLAB_WINDOW_HI", 1e4),
)  # Slope fit window
VISCOLAB_QUAD_REL_TOL = _env_float("VISCOLAB_QUAD_REL_TOL", 1e-10)  # Radial quadrature relative tolerance
VISCOLAB_TAIL_TOL = _env_float("VISCOLAB_TAIL_TOL", 1e-12)  # Allowed tail beyond the cutoff, relative
VISCOLAB_SLOPE_TOL = _env_float("VISCOLAB_SLOPE_TOL", 0.03)  # Allowed deviation of the L2 slope from its optimal rate
VISCOLAB_WEIGHTED_SLOPE_TOL = _env_float("VISCOLAB_WEIGHTED_SLOPE_TOL", 0.05)  # Same for the gradient-weighted slope

# Weak-strong
VISCOLAB_TOL_ENERGY = _env_float("VISCOLAB_TOL_ENERGY", 1e-6)  # Relative slack of the energy inequality gate
VISCOLAB_GRONWALL_SLACK = _env_float("VISCOLAB_GRONWALL_SLACK", 0.1)  # Relative slack of the Gronwall envelope
VISCOLAB_SAME_DATA_FACTOR = _env_float("VISCOLAB_SAME_DATA_FACTOR", 1e-6)  # Same-data gap bound as a fraction of energy(0)

# Green's function dump
VISCOLAB_ORACLE_TOL = _env_float("VISCOLAB_ORACLE_TOL", 1e-10)  # expm and semigroup residual tolerance

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {"format": "{asctime} {levelname} {name}: {message}", "style": "{"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "simple"},
    },
    "loggers": {
        "lab": {"handlers": ["console"], "level": VISCOLAB_LOG_LEVEL, "propagate": False},
    },
}
