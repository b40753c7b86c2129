"""
Gunicorn configuration for the read-only run browser.

Experiments run through manage.py; gunicorn only serves run records and
artifact files, so a couple of sync workers are enough.
"""

import os

bind = os.environ.get("VISCOLAB_BIND", "127.0.0.1:8000")

# Worker processes
workers = int(os.environ.get("VISCOLAB_WEB_WORKERS", 2))

worker_class = "sync"

# Artifact CSVs can be large
timeout = 120

graceful_timeout = 30

# Logging
accesslog = "-"
errorlog = "-"
loglevel = "info"

proc_name = "viscolab"

preload_app = True
