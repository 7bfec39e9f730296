# core/settings/prod.py

from .base import *
import os

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []

# ============================================
# LOGGING CONFIGURATION
# ============================================

# Long training runs keep a rotating log next to the console output
LOG_FILE = config('LOG_FILE', default=str(BASE_DIR / 'logs' / 'epimem.log'))

LOGGING['handlers']['file'] = {
    'class': 'logging.handlers.RotatingFileHandler',
    'filename': LOG_FILE,
    'maxBytes': 1024 * 1024 * 10,  # 10 MB
    'backupCount': 10,
    'formatter': 'verbose',
}
for logger_settings in LOGGING['loggers'].values():
    logger_settings['handlers'] = ['console', 'file']
LOGGING['root']['handlers'] = ['console', 'file']

os.makedirs(os.path.dirname(LOG_FILE), exist_ok=True)
