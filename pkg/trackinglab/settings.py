"""
Django settings module for the trackinglab project.
"""
import os
import subprocess

import environ
import sentry_sdk
from sentry_sdk.integrations.django import DjangoIntegration

CONFIG_FILE_NAME = "config_dev.toml"

DEFAULT_CATEGORIES = [
    'ball', 'box', 'bottle', 'chair', 'cup', 'umbrella',
    'toy_car', 'backpack', 'bucket', 'cone', 'suitcase', 'trash_can',
]


def get_git_revision_hash() -> str:
    """
    Retrieve the git hash for the underlying git repository or die trying.
    Used both as the Sentry release and as the tool version recorded in
    every run manifest.
    """
    try:
        git_hash = subprocess.check_output(['git', 'rev-parse', 'HEAD'], stderr=subprocess.DEVNULL, encoding='utf8')
    # ie. "git" was not found
    except FileNotFoundError:
        git_hash = "git_not_available"
    except subprocess.CalledProcessError:
        git_hash = "no_repository"
    return git_hash.rstrip()


root = environ.Path(__file__) - 2  # two levels back in hierarchy
env = environ.Env(
    DEBUG=(bool, False),
    SECRET_KEY=(str, ''),
    DATABASE_URL=(str, 'sqlite:///%s' % root('trackinglab.sqlite3')),
    SENTRY_DSN=(str, ''),
    SENTRY_ENVIRONMENT=(str, 'development'),
    SOT_JOBS=(int, 1),
    SOT_THREADS=(int, 1),
    SOT_CATEGORIES=(list, DEFAULT_CATEGORIES),
    SOT_SYMMETRY_ROTATIONS=(int, 120),
    SOT_FPS=(float, 20.0),
    SOT_DATA_ROOT=(str, root('data')),
    SOT_LOG_WALL_TIME=(bool, False),
)

BASE_DIR = root()

# Django environ has a nasty habit of complanining at level
# WARN about env file not being preset. Here we pre-empt it.
env_file_path = os.path.join(BASE_DIR, CONFIG_FILE_NAME)
if os.path.exists(env_file_path):
    # Logging configuration is not available at this point
    print(f'Reading config from {env_file_path}')
    environ.Env.read_env(env_file_path)

DEBUG = env('DEBUG')

# Numerical reproducibility depends on the BLAS thread count, which has to be
# fixed before numpy spins up its pools.
SOT_THREADS = env('SOT_THREADS')
for thread_var in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS'):
    os.environ.setdefault(thread_var, str(SOT_THREADS))

DATABASES = {
    'default': env.db()
}
DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'timestamped_named': {
            'format': '%(asctime)s %(name)s %(levelname)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'timestamped_named',
        },
    },
    'loggers': {
        '': {
            'handlers': ['console'],
            'level': os.getenv('DJANGO_LOG_LEVEL', 'INFO'),
        },
    }
}

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'benchmark',
]

if env('SENTRY_DSN'):
    sentry_sdk.init(
        dsn=env('SENTRY_DSN'),
        environment=env('SENTRY_ENVIRONMENT'),
        release=get_git_revision_hash(),
        integrations=[DjangoIntegration()]
    )

USE_TZ = True
TIME_ZONE = 'UTC'

#
# Tracking lab
#
SOT_JOBS = env('SOT_JOBS')
SOT_CATEGORIES = env('SOT_CATEGORIES')
SOT_SYMMETRY_ROTATIONS = env('SOT_SYMMETRY_ROTATIONS')
SOT_FPS = env('SOT_FPS')
SOT_DATA_ROOT = env('SOT_DATA_ROOT')
SOT_LOG_WALL_TIME = env('SOT_LOG_WALL_TIME')
SOT_TOOL_VERSION = get_git_revision_hash()

# We generate a persistent SECRET_KEY if it is not defined. Note that
# setting SECRET_KEY will override the persisted key
SECRET_KEY = env('SECRET_KEY')
if not SECRET_KEY:
    secret_file = os.path.join(BASE_DIR, '.django_secret')
    try:
        SECRET_KEY = open(secret_file).read().strip()
    except IOError:
        import random
        system_random = random.SystemRandom()
        SECRET_KEY = ''.join(
            [system_random.choice('abcdefghijklmnopqrstuvwxyz0123456789!@#$%^&*(-_=+)')
             for i in range(64)])
        try:
            with open(secret_file, 'w') as secret:
                os.chmod(secret_file, 0o0600)
                secret.write(SECRET_KEY)
        except IOError:
            # read-only checkouts still get a per-process key
            pass
