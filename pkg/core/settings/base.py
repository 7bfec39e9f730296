# core/settings/base.py

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

SECRET_KEY = config('SECRET_KEY', default='epimem-local-only')

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',

    # Local apps
    'substrate',
    'network',
    'metrics',
    'memory',
    'episodes',
    'evaluation',
    'cli',
]

# Episodic memory runs offline: no database, no URLs, no middleware
DATABASES = {}
MIDDLEWARE = []

# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ============================================
# EPISODIC MEMORY CONFIGURATION
# ============================================

# Root of relative artifact paths given to the CLI
EPIMEM_WORKDIR = config('EPIMEM_WORKDIR', default='.')

# Seed used when neither the config file nor --seed sets one
EPIMEM_SEED = config('EPIMEM_SEED', default=0, cast=int)

# Long empirical checks (training runs) in the test suite
EPIMEM_SLOW_TESTS = config('EPIMEM_SLOW_TESTS', default=False, cast=bool)

# Defaults layer of every run configuration (desk scale)
EPIMEM_DEFAULTS = {
    # model
    'frame_size': 32,
    'channels': 3,
    'sequence_length': 10,
    'encoder_length': 5,
    'convlstm_widths': (16, 32, 64),
    'conv_widths': (32, 64, 64),
    'kernel_size': 3,
    'fc_width': 256,
    'lstm_width': 64,
    'latent_noise': 0.1,
    'dropout_rate': 0.15,
    'eta': 0.4,
    'dtype': 'float32',
    # dataset
    'source_frames': 20,
    'train_per_class': 50,
    'validation_per_class': 10,
    'classes': (
        'slide-right', 'slide-left', 'slide-up', 'slide-down', 'approach', 'recede', 'converge', 'diverge'
    ),
    # training
    'epochs': 20,
    'batch_size': 8,
    'lr0': 1e-3,
    'gamma': 0.95,
    'clip_norm': 5.0,
    'checkpoint_every': 1,
    # evaluation
    'folds': 5,
    'memory_fraction': 0.8,
    'top_n': 3,
    'pca_components': 50,
    'metric': 'cosine',
    'workers': 1,
    # run
    'seed': EPIMEM_SEED,
    'checkpoint': '',
}

# ============================================
# LOGGING CONFIGURATION
# ============================================

EPIMEM_LOG = config('EPIMEM_LOG', default='info')
EPIMEM_LOG_LEVELS = {'quiet': 'WARNING', 'info': 'INFO', 'debug': 'DEBUG'}
EPIMEM_LOGGERS = ('substrate', 'network', 'metrics', 'memory', 'episodes', 'evaluation', 'cli')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        name: {
            'handlers': ['console'],
            'level': EPIMEM_LOG_LEVELS.get(EPIMEM_LOG, 'INFO'),
            'propagate': False,
        }
        for name in EPIMEM_LOGGERS
    },
}
