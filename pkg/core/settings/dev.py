# core/settings/dev.py

from .base import *

DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = ['*']

LOGGING['handlers']['console']['formatter'] = 'verbose'
