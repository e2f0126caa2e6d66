"""
WSGI config for the diffprune project.

Only the admin is served: it lists training runs and their per-epoch metrics.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "diffprune.settings")

application = get_wsgi_application()
