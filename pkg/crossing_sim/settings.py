"""
Django settings for crossing_sim project.
"""

import os
from pathlib import Path

import psutil
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "django-insecure-crossing-sim-local-only")

DEBUG = os.getenv("DEBUG", "False").lower() == "true"

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "simulator",
    "training",
    "analysis",
]

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Run outputs
CROSSING_OUTPUT_ROOT = Path(os.getenv("CROSSING_OUTPUT_ROOT", BASE_DIR / "runs"))
CROSSING_WORKERS = max(
    1, int(os.getenv("CROSSING_WORKERS", psutil.cpu_count(logical=False) or 1))
)
CROSSING_SCENARIO_TABLE = Path(
    os.getenv(
        "CROSSING_SCENARIO_TABLE",
        BASE_DIR / "simulator" / "config" / "scenarios.yaml",
    )
)
CROSSING_SYNTHETIC_OBSERVED = Path(
    os.getenv(
        "CROSSING_SYNTHETIC_OBSERVED",
        BASE_DIR / "analysis" / "data" / "synthetic_observed.csv",
    )
)
CROSSING_LOG_LEVEL = os.getenv("CROSSING_LOG_LEVEL", "INFO").upper()

LOG_DIR = BASE_DIR / "logs"
LOG_DIR.mkdir(exist_ok=True)

# Logging Configuration
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {process:d} {thread:d} {message}",
            "style": "{",
        },
        "simple": {
            "format": "{levelname} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "file": {
            "level": "INFO",
            "class": "logging.FileHandler",
            "filename": LOG_DIR / "crossing.log",
            "formatter": "verbose",
        },
        "console": {
            "level": "DEBUG",
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "root": {
        "handlers": ["console", "file"],
        "level": "WARNING",
    },
    "loggers": {
        "django": {
            "handlers": ["console", "file"],
            "level": "WARNING",
            "propagate": False,
        },
        "crossing_sim": {
            "handlers": ["console", "file"],
            "level": CROSSING_LOG_LEVEL,
            "propagate": False,
        },
        "simulator": {
            "handlers": ["console", "file"],
            "level": CROSSING_LOG_LEVEL,
            "propagate": False,
        },
        "training": {
            "handlers": ["console", "file"],
            "level": CROSSING_LOG_LEVEL,
            "propagate": False,
        },
        "analysis": {
            "handlers": ["console", "file"],
            "level": CROSSING_LOG_LEVEL,
            "propagate": False,
        },
    },
}
