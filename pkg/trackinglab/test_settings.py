"""
Django settings module for pytest
"""
from .settings import *  # noqa

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

SECRET_KEY = 'test-secret-key'

LOGGING['loggers']['']['level'] = 'WARNING'  # noqa: F405
