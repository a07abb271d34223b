"""
Django settings for the prismlab project.

prismlab has no web surface: Django provides settings, logging, the
management-command CLI and the test runner; Celery distributes evaluation
segments and ablation variants.
"""

import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Never used for signing anything; Django refuses to start without one
SECRET_KEY = os.environ.get('PRISM_SECRET_KEY', 'prismlab-offline-research-key')

DEBUG = os.environ.get('PRISM_DEBUG', '0') == '1'

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'prism_base.apps.PrismBaseConfig',
]

MIDDLEWARE = []

# No model uses the ORM; an in-memory database keeps the test runner happy
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


'''------------------------------------------
               PRISM Runtime
   ---------------------------------------'''
# Caps the evaluation thread pool (queries are independent)
PRISM_NUM_THREADS = max(1, int(os.environ.get('PRISM_NUM_THREADS', '1')))
PRISM_LOG_LEVEL = os.environ.get('PRISM_LOG_LEVEL', 'INFO')


'''------------------------------------------
                 Logging
   ---------------------------------------'''
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'prism': {
            'handlers': ['console'],
            'level': PRISM_LOG_LEVEL,
            'propagate': False,
        },
    },
}


'''------------------------------------------
                 Celery
   ---------------------------------------'''
CELERY_BROKER_URL = os.environ.get('PRISM_BROKER_URL', 'redis://localhost:6379/0')
# Eager by default: tasks run inline unless a broker and workers are set up
CELERY_TASK_ALWAYS_EAGER = os.environ.get('PRISM_CELERY_EAGER', '1') == '1'
CELERY_RESULT_BACKEND = os.environ.get('PRISM_RESULT_BACKEND', CELERY_BROKER_URL)
CELERY_TASK_EAGER_PROPAGATES = True
# JSON only
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
